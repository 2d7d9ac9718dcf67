"""Corpus statistics over AiR-E reports and task outcomes."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import special

from airkit.aire import AirEReport
from airkit.attention import Fixation, snap_unit
from airkit.errors import AirkitError, UndefinedCorrelationError
from airkit.program import OP_KINDS

ALPHA = 0.05
MIN_PAIRS = 3
KIND_MEASURE = "per-question mean of the defined step scores of each kind"


@dataclass(frozen=True)
class QuestionOutcome:
    question_id: str
    performance: float
    n_participants: int | None = None
    measure: str = "fraction-correct"

    def __post_init__(self):
        if not 0.0 <= self.performance <= 1.0:
            raise AirkitError(f"{self.question_id}: performance {self.performance} outside [0, 1]")


@dataclass(frozen=True)
class KindCorrelation:
    r: float | None
    n: int
    p: float | None = None
    status: str = "ok"

    @property
    def significant(self) -> bool:
        return self.p is not None and self.p < ALPHA

    def to_dict(self) -> dict:
        return {"r": self.r, "n": self.n, "p": self.p, "significant": self.significant, "status": self.status}


@dataclass
class CorrelationTable:
    source: str
    kinds: dict[str, KindCorrelation] = field(default_factory=dict)
    measure: str = KIND_MEASURE

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "measure": self.measure,
            "kinds": {k: self.kinds[k].to_dict() for k in sorted(self.kinds)},
        }


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    if len(xs) != len(ys):
        raise AirkitError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < MIN_PAIRS:
        raise AirkitError(f"need at least {MIN_PAIRS} pairs, got {len(xs)}")
    mx, my = _mean(xs), _mean(ys)
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx <= 0 or syy <= 0:
        raise UndefinedCorrelationError("correlation is undefined for constant input")
    return snap_unit(math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy))


def pearson_pvalue(r: float, n: int) -> float:
    """Two-sided p-value of the Pearson t-test with ``n - 2`` degrees of freedom."""
    if n < MIN_PAIRS:
        raise AirkitError(f"need at least {MIN_PAIRS} pairs, got {n}")
    if abs(r) >= 1.0:
        return 0.0
    df = n - 2
    t2 = r * r * df / (1.0 - r * r)
    # P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
    return float(special.betainc(df / 2.0, 0.5, df / (df + t2)))


def correlate_aire_with_performance(reports: Iterable[AirEReport], outcomes: Iterable[QuestionOutcome],
                                    source: str | None = None) -> CorrelationTable:
    """Per-kind Pearson r between AiR-E and task performance across questions."""
    reports = list(reports)
    perf = {o.question_id: o.performance for o in outcomes}
    joined = sorted((r for r in reports if r.question_id in perf), key=lambda r: r.question_id)
    if not joined:
        raise AirkitError("no question appears in both the reports and the outcomes")
    if source is None:
        source = joined[0].source
    table = CorrelationTable(source)
    for kind in OP_KINDS:
        xs, ys = [], []
        for rep in joined:
            value = rep.per_kind_means.get(kind.value)
            if value is not None:
                xs.append(value)
                ys.append(perf[rep.question_id])
        n = len(xs)
        if n < MIN_PAIRS:
            table.kinds[kind.value] = KindCorrelation(None, n, None, "insufficient")
            continue
        try:
            r = pearson(xs, ys)
        except UndefinedCorrelationError:
            table.kinds[kind.value] = KindCorrelation(None, n, None, "constant")
            continue
        table.kinds[kind.value] = KindCorrelation(r, n, pearson_pvalue(r, n))
    return table


def outcomes_from_fixations(fixations: Iterable[Fixation]) -> list[QuestionOutcome]:
    """Human performance per question: the fraction of participants answering correctly."""
    trials = trial_summary(fixations)
    per_q: dict[str, list[bool]] = defaultdict(list)
    for (qid, _), (correct, _) in sorted(trials.items()):
        per_q[qid].append(correct)
    return [QuestionOutcome(q, sum(v) / len(v), len(v)) for q, v in sorted(per_q.items())]


def trial_summary(fixations: Iterable[Fixation]) -> dict[tuple[str, str], tuple[bool, int]]:
    """(question, participant) -> (answered correctly, number of fixations)."""
    out: dict[tuple[str, str], tuple[bool, int]] = {}
    for f in fixations:
        key = (f.question_id, f.participant_id)
        if key in out:
            correct, n = out[key]
            if correct != f.is_correct:
                raise AirkitError(f"trial {key} mixes correct and incorrect fixations")
            out[key] = (correct, n + 1)
        else:
            out[key] = (f.is_correct, 1)
    return out


def _mean_sd(values: Sequence[float]) -> dict:
    if not values:
        return {"mean": None, "sd": None, "n": 0}
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "sd": float(arr.std()), "n": len(values)}


def answer_accuracy_stats(outcomes: Iterable[QuestionOutcome],
                          trials: Mapping[tuple[str, str], tuple[bool, int]] | None = None) -> dict:
    """Accuracy mean/SD (population), a 10-bin histogram on [0, 1], and
    per-trial fixation counts split by answer correctness."""
    acc = [o.performance for o in outcomes]
    counts, edges = np.histogram(acc, bins=10, range=(0.0, 1.0))
    stats = _mean_sd(acc)
    result = {
        "mean": stats["mean"],
        "sd": stats["sd"],
        "n_questions": stats["n"],
        "histogram": {"counts": [int(c) for c in counts], "edges": [float(e) for e in edges]},
    }
    if trials is not None:
        correct = [n for ok, n in trials.values() if ok]
        incorrect = [n for ok, n in trials.values() if not ok]
        result["fixations_per_trial"] = {"correct": _mean_sd(correct), "incorrect": _mean_sd(incorrect)}
    return result


def mean_temporal_matrix(matrices: Iterable[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Average bins x steps matrices across questions, aligned on step index.

    Questions with fewer steps and undefined (NaN) cells are skipped cell by
    cell. Returns the mean matrix (NaN where nothing contributed) and the
    per-cell contribution counts.
    """
    mats = [np.asarray(m, dtype=float) for m in matrices]
    if not mats:
        return np.zeros((0, 0)), np.zeros((0, 0), dtype=int)
    n_bins = mats[0].shape[0]
    if any(m.shape[0] != n_bins for m in mats):
        raise AirkitError("temporal matrices disagree on the number of bins")
    width = max(m.shape[1] for m in mats)
    total = np.zeros((n_bins, width))
    count = np.zeros((n_bins, width), dtype=int)
    for m in mats:
        ok = ~np.isnan(m)
        total[:, : m.shape[1]][ok] += m[ok]
        count[:, : m.shape[1]] += ok
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return mean, count


def corpus_kind_means(reports: Iterable[AirEReport]) -> dict[str, dict]:
    """Corpus-level per-kind AiR-E, both as a mean of question means and over all steps."""
    per_question: dict[str, list[float]] = defaultdict(list)
    per_step: dict[str, list[float]] = defaultdict(list)
    for rep in reports:
        for k, v in rep.per_kind_means.items():
            per_question[k].append(v)
        for s in rep.steps:
            if s.score is not None:
                per_step[s.kind.value].append(s.score)
    return {
        k: {
            "mean_over_questions": _mean(per_question[k]),
            "mean_over_steps": _mean(per_step[k]),
            "n_questions": len(per_question[k]),
            "n_steps": len(per_step[k]),
        }
        for k in sorted(per_question)
    }
