"""Batch evaluation: corpus loading, per-question scoring, and report files."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from airkit import analytics
from airkit.aire import AirEReport, score_temporal_matrix, score_trace
from airkit.attention import (
    DEFAULT_BINS,
    DEFAULT_MAP_SIZE,
    DEFAULT_SIGMA,
    Fixation,
    fixations_to_map,
    read_attention_file,
    read_fixations_csv,
    slice_fixations_temporal,
)
from airkit.errors import AirkitError, ConfigError, SceneError
from airkit.program import OP_KINDS, ReasoningProgram, parse_program
from airkit.roi import DEFAULT_K, CooccurrenceTable, RoiTrace, build_cooccurrence, derive_roi_trace
from airkit.scene import SceneGraph, load_scene_dir
from airkit.supervision import DEFAULT_C, DEFAULT_PHI, KL_EPS

log = logging.getLogger(__name__)

HUMAN_SOURCES = ("human-correct", "human-incorrect", "human-total")
PATH_KEYS = ("scenes", "questions", "fixations", "attention", "cooccurrence", "outcomes", "proposals", "out")
CORPUS_CSV_FIELDS = ("question_id", "source", "step", "kind", "score", "fallback_used")
MAP_NOTE = {
    "fixations": "fixation map: impulses smoothed by a Gaussian truncated at 4 sigma, max-normalized",
}
MATCHING_NOTE = "categories matched by exact normalized token (no synonym sets)"


@dataclass
class RunConfig:
    scenes: str | None = None
    questions: str | None = None
    fixations: str | None = None
    attention: str | None = None
    cooccurrence: str | None = None
    outcomes: str | None = None
    proposals: str | None = None
    out: str | None = None
    k: int = DEFAULT_K
    map_size: int = DEFAULT_MAP_SIZE
    sigma: float = DEFAULT_SIGMA
    bins: list = field(default_factory=lambda: [list(b) for b in DEFAULT_BINS])
    phi: float = DEFAULT_PHI
    C: int = DEFAULT_C
    epsilon_kl: float = KL_EPS
    strict_relate: bool = False
    jobs: int | None = None
    format: str = "json"
    seed: int | None = None

    def validate(self) -> RunConfig:
        problems = []
        if not (isinstance(self.k, int) and self.k >= 1):
            problems.append(f"k must be an integer >= 1, got {self.k!r}")
        if not (isinstance(self.map_size, int) and self.map_size >= 1):
            problems.append(f"map_size must be an integer >= 1, got {self.map_size!r}")
        if not self.sigma > 0:
            problems.append(f"sigma must be positive, got {self.sigma!r}")
        if not self.phi >= 0:
            problems.append(f"phi must be non-negative, got {self.phi!r}")
        if not (isinstance(self.C, int) and self.C > 0):
            problems.append(f"C must be a positive integer, got {self.C!r}")
        if not self.epsilon_kl > 0:
            problems.append(f"epsilon_kl must be positive, got {self.epsilon_kl!r}")
        if self.jobs is not None and not (isinstance(self.jobs, int) and self.jobs >= 1):
            problems.append(f"jobs must be an integer >= 1, got {self.jobs!r}")
        if self.format not in ("json", "csv"):
            problems.append(f"format must be json or csv, got {self.format!r}")
        try:
            bins = [(float(lo), float(hi)) for lo, hi in self.bins]
            slice_fixations_temporal([], bins)
            if not bins:
                problems.append("at least one temporal bin is required")
        except (TypeError, ValueError, AirkitError) as exc:
            problems.append(f"bad temporal bins {self.bins!r}: {exc}")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    @property
    def workers(self) -> int:
        return self.jobs or os.cpu_count() or 1

    @classmethod
    def from_file(cls, path, **overrides) -> RunConfig:
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a flat JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        for key in PATH_KEYS:
            if doc.get(key) is not None and not os.path.isabs(doc[key]):
                doc[key] = str(path.parent / doc[key])
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc).validate()


@dataclass
class Question:
    question_id: str
    image_id: str
    program_text: str


@dataclass
class Corpus:
    scenes: dict[str, SceneGraph]
    questions: list[Question]
    fixations: dict[str, list[Fixation]]
    attention: dict[str, dict[str, Path]]
    table: CooccurrenceTable | None
    outcomes: dict[str, list[analytics.QuestionOutcome]]


def _require(path: str | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} path configured")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} path not readable: {p}")
    return p


def load_questions(path) -> list[Question]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read questions {path}: {exc}") from exc
    if not isinstance(doc, list):
        raise ConfigError(f"{path}: questions must be a JSON array")
    out, seen = [], set()
    for i, rec in enumerate(doc):
        if not isinstance(rec, dict) or not {"question_id", "image_id"} <= set(rec):
            raise ConfigError(f"{path}: record {i} needs question_id and image_id")
        if "program" in rec:
            text = rec["program"]
        elif "program_file" in rec:
            text = (path.parent / rec["program_file"]).read_text(encoding="utf-8")
        else:
            raise ConfigError(f"{path}: record {i} needs program or program_file")
        qid = str(rec["question_id"])
        if qid in seen:
            raise ConfigError(f"{path}: duplicate question_id {qid!r}")
        seen.add(qid)
        out.append(Question(qid, str(rec["image_id"]), text))
    return sorted(out, key=lambda q: q.question_id)


def load_outcomes(path) -> dict[str, list[analytics.QuestionOutcome]]:
    """Machine (or external) outcomes CSV: question_id,source,performance[,measure]."""
    out: dict[str, list[analytics.QuestionOutcome]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not {"question_id", "source", "performance"} <= set(reader.fieldnames or ()):
            raise ConfigError(f"{path}: outcomes CSV needs question_id, source and performance columns")
        for row in reader:
            try:
                out[row["source"]].append(analytics.QuestionOutcome(
                    row["question_id"], float(row["performance"]), None, row.get("measure") or "supplied score"))
            except (ValueError, AirkitError) as exc:
                raise ConfigError(f"{path}: {exc}") from exc
    return dict(out)


def scan_attention_dir(path) -> dict[str, dict[str, Path]]:
    """``<question_id>__<source>.json|csv`` files grouped by question."""
    out: dict[str, dict[str, Path]] = defaultdict(dict)
    for p in sorted(Path(path).iterdir()):
        if p.suffix not in (".json", ".csv") or "__" not in p.stem:
            continue
        qid, source = p.stem.split("__", 1)
        out[qid][source] = p
    return dict(out)


def load_corpus(cfg: RunConfig) -> Corpus:
    try:
        scenes = load_scene_dir(_require(cfg.scenes, "scene-graph"))
    except SceneError as exc:
        raise ConfigError(f"scene-graph schema error: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"scene-graph path not readable: {cfg.scenes}: {exc}") from exc
    questions = load_questions(_require(cfg.questions, "questions"))

    fixations: dict[str, list[Fixation]] = defaultdict(list)
    if cfg.fixations:
        try:
            for f in read_fixations_csv(_require(cfg.fixations, "fixations")):
                fixations[f.question_id].append(f)
        except AirkitError as exc:
            raise ConfigError(str(exc)) from exc
    attention = scan_attention_dir(_require(cfg.attention, "attention")) if cfg.attention else {}

    if cfg.cooccurrence and Path(cfg.cooccurrence).exists():
        try:
            table = CooccurrenceTable.from_json(Path(cfg.cooccurrence).read_text(encoding="utf-8"))
        except (ValueError, KeyError, AirkitError) as exc:
            raise ConfigError(f"{cfg.cooccurrence}: bad co-occurrence table: {exc}") from exc
    elif cfg.cooccurrence:
        raise ConfigError(f"co-occurrence path not readable: {cfg.cooccurrence}")
    else:
        table = build_cooccurrence(scenes.values()) if scenes else None

    outcomes = load_outcomes(_require(cfg.outcomes, "outcomes")) if cfg.outcomes else {}
    if fixations:
        human = analytics.outcomes_from_fixations(f for fs in fixations.values() for f in fs)
        for src in HUMAN_SOURCES:
            outcomes.setdefault(src, human)
    return Corpus(scenes, questions, dict(fixations), attention, table, outcomes)


@dataclass
class QuestionResult:
    question_id: str
    image_id: str
    trace: RoiTrace
    reports: list[AirEReport]
    temporal: dict[str, np.ndarray]
    dropped_fixations: int = 0


def _human_groups(fs: list[Fixation]) -> dict[str, list[Fixation]]:
    groups = {"human-total": fs}
    correct = [f for f in fs if f.is_correct]
    incorrect = [f for f in fs if not f.is_correct]
    if correct:
        groups["human-correct"] = correct
    if incorrect:
        groups["human-incorrect"] = incorrect
    return groups


def process_question(q: Question, corpus: Corpus, cfg: RunConfig) -> QuestionResult:
    g = corpus.scenes.get(q.image_id)
    if g is None:
        raise AirkitError(f"no scene graph for image {q.image_id!r}")
    program: ReasoningProgram = parse_program(q.program_text)
    trace = derive_roi_trace(program, g, corpus.table, cfg.k, cfg.strict_relate)
    reports, temporal, dropped = [], {}, 0

    fs = corpus.fixations.get(q.question_id, [])
    if fs:
        for source, group in sorted(_human_groups(fs).items()):
            m = fixations_to_map(group, g.width, g.height, cfg.map_size, cfg.sigma, source)
            rep = score_trace(m, trace, g, q.question_id, source)
            rep.notes.append(MAP_NOTE["fixations"])
            reports.append(rep)
            by_bin, n_out = slice_fixations_temporal(group, cfg.bins)
            if source == "human-total":
                dropped = n_out
            bin_maps = [fixations_to_map(b, g.width, g.height, cfg.map_size, cfg.sigma, source) for b in by_bin]
            temporal[source] = score_temporal_matrix(bin_maps, trace, g)

    for source, path in sorted(corpus.attention.get(q.question_id, {}).items()):
        m, how = read_attention_file(path, g.width, g.height, cfg.map_size, source)
        rep = score_trace(m, trace, g, q.question_id, source)
        rep.notes.append(f"attention input: {how}")
        reports.append(rep)

    for rep in reports:
        rep.notes.append(MATCHING_NOTE)
    return QuestionResult(q.question_id, q.image_id, trace, reports, temporal, dropped)


@dataclass
class EvaluationResult:
    config: RunConfig
    questions: list[QuestionResult]
    errors: list[dict]
    correlations: dict[str, analytics.CorrelationTable]
    correlation_errors: dict[str, str]
    kind_means: dict[str, dict]
    temporal_means: dict[str, tuple[np.ndarray, np.ndarray]]
    accuracy: dict | None

    @property
    def reports(self) -> list[AirEReport]:
        return [r for q in self.questions for r in q.reports]

    @property
    def exit_code(self) -> int:
        return 1 if self.errors else 0


def run_evaluation(cfg: RunConfig, corpus: Corpus | None = None) -> EvaluationResult:
    """Trace, map, score and summarize every question of the corpus.

    A failing question goes to the error ledger and the rest carry on.
    Outputs are ordered by question id whatever the worker count.
    """
    cfg.validate()
    corpus = corpus or load_corpus(cfg)

    def work(q: Question):
        try:
            return q.question_id, process_question(q, corpus, cfg), None
        except (AirkitError, ValueError, KeyError, OSError) as exc:
            log.warning("question %s failed: %s", q.question_id, exc)
            return q.question_id, None, f"{type(exc).__name__}: {exc}"

    if cfg.workers == 1 or len(corpus.questions) <= 1:
        outcomes = [work(q) for q in corpus.questions]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(work, corpus.questions))
    outcomes.sort(key=lambda t: t[0])
    done = [r for _, r, _ in outcomes if r is not None]
    errors = [{"question_id": qid, "error": err} for qid, _, err in outcomes if err is not None]

    by_source: dict[str, list[AirEReport]] = defaultdict(list)
    for qr in done:
        for rep in qr.reports:
            by_source[rep.source].append(rep)

    correlations, corr_errors = {}, {}
    for source, reps in sorted(by_source.items()):
        outs = corpus.outcomes.get(source)
        if not outs:
            continue
        try:
            correlations[source] = analytics.correlate_aire_with_performance(reps, outs, source)
        except AirkitError as exc:
            corr_errors[source] = str(exc)

    temporal_means = {}
    for source in HUMAN_SOURCES:
        mats = [qr.temporal[source] for qr in done if source in qr.temporal]
        if mats:
            temporal_means[source] = analytics.mean_temporal_matrix(mats)

    accuracy = None
    if corpus.fixations:
        all_fix = [f for fs in corpus.fixations.values() for f in fs]
        accuracy = analytics.answer_accuracy_stats(corpus.outcomes["human-total"], analytics.trial_summary(all_fix))

    kind_means = {s: analytics.corpus_kind_means(reps) for s, reps in sorted(by_source.items())}
    return EvaluationResult(cfg, done, errors, correlations, corr_errors, kind_means, temporal_means, accuracy)


# --- serialization ---------------------------------------------------------

def canonical(obj: Any) -> Any:
    """Round reals to 12 significant digits; NaN and infinities become null."""
    if isinstance(obj, float) or isinstance(obj, np.floating):
        v = float(obj)
        if not math.isfinite(v):
            return None
        return float(f"{v:.12g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return canonical(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(canonical(obj), indent=1, sort_keys=True, allow_nan=False) + "\n"


def fmt_real(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    return f"{float(v):.12g}"


def question_document(qr: QuestionResult, bins) -> dict:
    return {
        "question_id": qr.question_id,
        "image_id": qr.image_id,
        "trace": qr.trace.to_dict(),
        "reports": [r.to_dict() for r in sorted(qr.reports, key=lambda r: r.source)],
        "temporal": {
            "bins_ms": [list(b) for b in bins],
            "matrices": {s: qr.temporal[s] for s in sorted(qr.temporal)},
            "dropped_fixations": qr.dropped_fixations,
        },
    }


def correlation_csv(tables: dict[str, analytics.CorrelationTable]) -> str:
    """Sources as rows, operation kinds as columns; ``*`` marks p < 0.05, NA too few pairs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source"] + [k.value for k in OP_KINDS])
    for source in sorted(tables):
        row = [source]
        for k in OP_KINDS:
            c = tables[source].kinds.get(k.value)
            if c is None or c.r is None:
                row.append("NA")
            else:
                row.append(fmt_real(c.r) + ("*" if c.significant else ""))
        w.writerow(row)
    return buf.getvalue()


def corpus_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CORPUS_CSV_FIELDS)
    for rep in sorted(reports, key=lambda r: (r.question_id, r.source)):
        for s in rep.steps:
            w.writerow([rep.question_id, rep.source, s.step, s.kind.value, fmt_real(s.score),
                        "true" if s.fallback_used else "false"])
    return buf.getvalue()


def temporal_csv(temporal_means: dict[str, tuple[np.ndarray, np.ndarray]], bins) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", "bin", "bin_start_ms", "bin_end_ms", "step", "mean_score", "n"])
    for source in sorted(temporal_means):
        mean, count = temporal_means[source]
        for i in range(mean.shape[0]):
            for j in range(mean.shape[1]):
                w.writerow([source, i, fmt_real(bins[i][0]), fmt_real(bins[i][1]), j,
                            fmt_real(mean[i, j]), int(count[i, j])])
    return buf.getvalue()


def summary_document(result: EvaluationResult) -> dict:
    cfg = asdict(result.config)
    for key in ("jobs", "out", "format"):
        cfg.pop(key, None)
    for key in PATH_KEYS:
        if cfg.get(key):
            cfg[key] = Path(cfg[key]).name
    return {
        "n_questions": len(result.questions),
        "question_ids": [q.question_id for q in result.questions],
        "errors": result.errors,
        "correlations": {s: t.to_dict() for s, t in sorted(result.correlations.items())},
        "correlation_errors": result.correlation_errors,
        "kind_means": result.kind_means,
        "temporal_means": {
            s: {"mean": m, "count": c} for s, (m, c) in sorted(result.temporal_means.items())
        },
        "accuracy": result.accuracy,
        "config": cfg,
        "notes": [
            MATCHING_NOTE,
            "per-kind question scores are " + analytics.KIND_MEASURE,
            "dense attention grids are bilinearly upsampled; region proposals are rasterized as weight/area",
        ],
    }


def _write(path: Path, text: str, manifest: list):
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode("utf-8")
    path.write_bytes(data)
    manifest.append((path, hashlib.sha256(data).hexdigest(), len(data)))


def emit_report(result: EvaluationResult, fmt: str, out) -> Path:
    """Write reports in ``fmt`` plus a summary and a hashed manifest; returns the manifest path."""
    if fmt not in ("json", "csv"):
        raise ConfigError(f"unknown report format {fmt!r}")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot write to {out}: {exc}") from exc
    bins = result.config.bins
    written: list = []
    if fmt == "json":
        for qr in result.questions:
            _write(out / "reports" / f"{qr.question_id}.json", dumps(question_document(qr, bins)), written)
    else:
        _write(out / "corpus.csv", corpus_csv(result.reports), written)
        _write(out / "correlation.csv", correlation_csv(result.correlations), written)
        _write(out / "temporal.csv", temporal_csv(result.temporal_means, bins), written)
        if result.errors:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["question_id", "error"])
            for e in result.errors:
                w.writerow([e["question_id"], e["error"]])
            _write(out / "errors.csv", buf.getvalue(), written)
    _write(out / "summary.json", dumps(summary_document(result)), written)
    manifest = {
        "format": fmt,
        "files": [
            {"path": p.relative_to(out).as_posix(), "sha256": digest, "bytes": size}
            for p, digest, size in sorted(written, key=lambda t: t[0].as_posix())
        ],
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path
