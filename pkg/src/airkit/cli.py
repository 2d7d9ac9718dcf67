"""Command-line entry point: ``airkit <subcommand>``.

Exit codes: 0 success, 1 some questions failed (see the error ledger),
2 configuration or schema failure.
"""

from __future__ import annotations

import json
import logging
import sys
from functools import wraps
from pathlib import Path

import click

from airkit.errors import AirkitError, ConfigError, ProgramError, SceneError

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _fail(msg: str, code: int = EXIT_CONFIG):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def guarded(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, SceneError, ProgramError) as exc:
            _fail(str(exc))
        except AirkitError as exc:
            _fail(str(exc))
        except OSError as exc:
            _fail(f"{exc.filename or ''}: {exc.strerror or exc}")
    return wrapper


def parse_bins(text: str | None):
    if text is None:
        return None
    bins = []
    for part in text.split(","):
        try:
            lo, hi = part.split("-")
            bins.append([float(lo), float(hi)])
        except ValueError:
            raise click.BadParameter(f"bins look like 0-1000,1000-2000; got {text!r}")
    return bins


def config_options(fn):
    """Flags that mirror run-config keys; flags override the config file."""
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Flat JSON config file."),
        click.option("--scenes", type=click.Path(), help="Directory of scene-graph JSON documents."),
        click.option("--questions", type=click.Path(), help="Questions JSON (question_id, image_id, program)."),
        click.option("--fixations", type=click.Path(), help="Fixation CSV."),
        click.option("--attention", type=click.Path(), help="Directory of <qid>__<source> attention inputs."),
        click.option("--cooccurrence", type=click.Path(), help="Co-occurrence table JSON."),
        click.option("--outcomes", type=click.Path(), help="Outcomes CSV (question_id,source,performance)."),
        click.option("--proposals", type=click.Path(), help="Directory of <qid>.json region proposals."),
        click.option("--k", type=int, help="Co-occurrence fallback size (default 20)."),
        click.option("--sigma", type=float, help="Gaussian sigma in map pixels (default 9)."),
        click.option("--map-size", "map_size", type=int, help="Attention map side (default 256)."),
        click.option("--bins", type=str, help="Temporal bins in ms, e.g. 0-1000,1000-2000,2000-3000."),
        click.option("--phi", type=float, help="Operation-loss weight (default 0.5)."),
        click.option("--jobs", type=int, help="Worker threads (default: hardware threads)."),
        click.option("--format", "fmt", type=click.Choice(["json", "csv"]), help="Report format."),
        click.option("--strict-relate", "strict_relate", is_flag=True, default=None,
                     help="Filter relate groups by relation edges (non-canonical)."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def build_config(config_path=None, fmt=None, bins=None, **flags):
    from airkit.pipeline import RunConfig

    overrides = {k: v for k, v in flags.items() if v is not None}
    if fmt is not None:
        overrides["format"] = fmt
    if bins is not None:
        overrides["bins"] = parse_bins(bins)
    if config_path:
        return RunConfig.from_file(config_path, **overrides)
    return RunConfig(**overrides).validate()


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Reasoning-aware attention evaluation toolkit."""
    logging.basicConfig(level=logging.INFO if verbose else logging.ERROR, format="%(levelname)s %(message)s")


@cli.command()
@click.argument("scenes", type=click.Path())
@click.option("-o", "--out", type=click.Path(dir_okay=False), required=True)
@guarded
def cooccur(scenes, out):
    """Build the category co-occurrence table from a scene-graph directory."""
    from airkit.roi import build_cooccurrence
    from airkit.scene import load_scene_dir

    if not Path(scenes).is_dir():
        raise ConfigError(f"scene-graph path not readable: {scenes}")
    table = build_cooccurrence(load_scene_dir(scenes).values())
    Path(out).write_text(table.to_json() + "\n", encoding="utf-8")
    click.echo(f"{len(table.categories)} categories, {len(table.counts)} co-occurring pairs -> {out}")


@cli.command()
@click.option("--program", "program_path", type=click.Path(dir_okay=False), required=True)
@click.option("--scene", "scene_path", type=click.Path(dir_okay=False), required=True)
@click.option("--cooccurrence", type=click.Path(dir_okay=False))
@click.option("--k", type=int, default=20, show_default=True)
@click.option("--strict-relate", is_flag=True)
@click.option("-o", "--out", type=click.Path(dir_okay=False))
@guarded
def trace(program_path, scene_path, cooccurrence, k, strict_relate, out):
    """Execute a program over a scene graph and print its ROI trace."""
    from airkit.pipeline import dumps
    from airkit.program import parse_program
    from airkit.roi import CooccurrenceTable, derive_roi_trace
    from airkit.scene import load_scene_graph

    program = parse_program(Path(program_path).read_text(encoding="utf-8"))
    g = load_scene_graph(scene_path)
    table = CooccurrenceTable.from_json(Path(cooccurrence).read_text(encoding="utf-8")) if cooccurrence else None
    text = dumps(derive_roi_trace(program, g, table, k, strict_relate).to_dict())
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@cli.command()
@config_options
@click.option("-o", "--out", type=click.Path(file_okay=False), required=True)
@guarded
def fixmap(out, **opts):
    """Build human fixation maps (overall and per temporal bin) for every question."""
    from airkit.attention import fixations_to_map, map_to_json, slice_fixations_temporal, write_map_csv
    from airkit.pipeline import _human_groups, dumps, load_corpus

    cfg = build_config(**opts)
    if not cfg.fixations:
        raise ConfigError("fixmap needs --fixations")
    corpus = load_corpus(cfg)
    out = Path(out)
    (out / "bins").mkdir(parents=True, exist_ok=True)
    n = 0
    for q in corpus.questions:
        g = corpus.scenes.get(q.image_id)
        fs = corpus.fixations.get(q.question_id)
        if g is None or not fs:
            continue
        for source, group in sorted(_human_groups(fs).items()):
            maps = [(out / f"{q.question_id}__{source}", group)]
            by_bin, _ = slice_fixations_temporal(group, cfg.bins)
            maps += [(out / "bins" / f"{q.question_id}__{source}__bin{i}", b) for i, b in enumerate(by_bin)]
            for stem, fx in maps:
                m = fixations_to_map(fx, g.width, g.height, cfg.map_size, cfg.sigma, source)
                if cfg.format == "csv":
                    write_map_csv(stem.with_suffix(".csv"), m)
                else:
                    stem.with_suffix(".json").write_text(dumps(map_to_json(m)), encoding="utf-8")
                n += 1
    click.echo(f"wrote {n} maps to {out}")


@cli.command()
@config_options
@click.option("-o", "--out", type=click.Path(file_okay=False), help="Output directory (or 'out' in config).")
@guarded
def score(out, **opts):
    """Trace, build maps and score AiR-E for a corpus; write reports and a manifest."""
    from airkit.pipeline import emit_report, run_evaluation

    cfg = build_config(out=out, **opts)
    if not cfg.out:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    result = run_evaluation(cfg)
    manifest = emit_report(result, cfg.format, cfg.out)
    click.echo(f"{len(result.questions)} questions scored, {len(result.errors)} failed; manifest {manifest}")
    for e in result.errors:
        click.echo(f"  {e['question_id']}: {e['error']}", err=True)
    sys.exit(result.exit_code)


@cli.command()
@config_options
@click.option("-o", "--out", type=click.Path(file_okay=False), required=True)
@guarded
def targets(out, **opts):
    """Derive per-step ground-truth attention over region proposals."""
    from airkit.pipeline import dumps, load_corpus
    from airkit.program import parse_program
    from airkit.roi import derive_roi_trace
    from airkit.scene import BoundingBox
    from airkit.supervision import derive_target_attention

    cfg = build_config(**opts)
    if not cfg.proposals:
        raise ConfigError("targets needs --proposals")
    prop_dir = Path(cfg.proposals)
    if not prop_dir.is_dir():
        raise ConfigError(f"proposals path not readable: {prop_dir}")
    corpus = load_corpus(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for q in corpus.questions:
        try:
            g = corpus.scenes[q.image_id]
            props = json.loads((prop_dir / f"{q.question_id}.json").read_text(encoding="utf-8"))
            boxes = [BoundingBox(*map(float, p["box"])) for p in props]
            trace_ = derive_roi_trace(parse_program(q.program_text), g, corpus.table, cfg.k, cfg.strict_relate)
            doc = [derive_target_attention(rs, boxes, g).to_dict() for rs in trace_.sets]
        except (AirkitError, KeyError, OSError, ValueError) as exc:
            failed += 1
            click.echo(f"  {q.question_id}: {exc}", err=True)
            continue
        (out / f"{q.question_id}.json").write_text(dumps(doc), encoding="utf-8")
    click.echo(f"targets for {len(corpus.questions) - failed} questions -> {out}")
    sys.exit(EXIT_PARTIAL if failed else EXIT_OK)


@cli.command()
@click.option("--reports", "run_dir", type=click.Path(file_okay=False), required=True,
              help="Directory written by 'score --format json'.")
@click.option("--outcomes", type=click.Path(dir_okay=False), help="Outcomes CSV for machine sources.")
@click.option("--fixations", type=click.Path(dir_okay=False), help="Fixation CSV for human performance.")
@click.option("-o", "--out", type=click.Path(file_okay=False), required=True)
@guarded
def analyze(run_dir, outcomes, fixations, out):
    """Correlate saved AiR-E reports with task performance; average temporal matrices."""
    import numpy as np

    from airkit import analytics
    from airkit.aire import AirEReport
    from airkit.attention import read_fixations_csv
    from airkit.pipeline import HUMAN_SOURCES, correlation_csv, dumps, load_outcomes, temporal_csv

    files = sorted((Path(run_dir) / "reports").glob("*.json"))
    if not files and not (Path(run_dir) / "reports").is_dir():
        raise ConfigError(f"no reports directory under {run_dir}")
    by_source: dict[str, list[AirEReport]] = {}
    temporal: dict[str, list] = {}
    bins = None
    for f in files:
        doc = json.loads(f.read_text(encoding="utf-8"))
        for r in doc["reports"]:
            rep = AirEReport.from_dict(r)
            by_source.setdefault(rep.source, []).append(rep)
        bins = doc["temporal"]["bins_ms"]
        for source, mat in doc["temporal"]["matrices"].items():
            temporal.setdefault(source, []).append(np.array(mat, dtype=float))

    outs = load_outcomes(outcomes) if outcomes else {}
    accuracy = None
    if fixations:
        fx = read_fixations_csv(fixations)
        human = analytics.outcomes_from_fixations(fx)
        for s in HUMAN_SOURCES:
            outs.setdefault(s, human)
        accuracy = analytics.answer_accuracy_stats(human, analytics.trial_summary(fx))
    tables = {}
    for source, reps in sorted(by_source.items()):
        if source in outs:
            tables[source] = analytics.correlate_aire_with_performance(reps, outs[source], source)
    means = {s: analytics.mean_temporal_matrix(m) for s, m in sorted(temporal.items())}
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "analysis.json").write_text(dumps({
        "correlations": {s: t.to_dict() for s, t in tables.items()},
        "temporal_means": {s: {"mean": m, "count": c} for s, (m, c) in means.items()},
        "kind_means": {s: analytics.corpus_kind_means(r) for s, r in sorted(by_source.items())},
        "accuracy": accuracy,
    }), encoding="utf-8")
    (out / "correlation.csv").write_text(correlation_csv(tables), encoding="utf-8")
    if bins is not None:
        (out / "temporal.csv").write_text(temporal_csv(means, bins), encoding="utf-8")
    click.echo(f"analyzed {len(files)} questions across {len(by_source)} sources -> {out}")


@cli.command()
@click.argument("out", type=click.Path(file_okay=False))
@click.option("--n", "n_questions", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--participants", type=int, default=6, show_default=True)
@guarded
def synth(out, n_questions, seed, participants):
    """Generate a synthetic corpus with known traces and planted fixations."""
    from airkit.synth import generate_corpus, write_corpus

    if participants < 2:
        raise ConfigError("synthetic corpora need at least 2 participants per question")
    write_corpus(generate_corpus(n_questions, seed, participants), out)
    click.echo(f"{n_questions} synthetic questions (seed {seed}) -> {out}")


@cli.command()
@click.argument("run_dir", type=click.Path(file_okay=False))
@click.option("-o", "--out", type=click.Path(file_okay=False), help="Figure directory (default RUN_DIR/figures).")
@guarded
def report(run_dir, out):
    """Render figures and CSV tables from a scored run directory."""
    from airkit.plots import render_report

    if not (Path(run_dir) / "summary.json").exists():
        raise ConfigError(f"no summary.json in {run_dir}")
    for p in render_report(run_dir, out):
        click.echo(str(p))


def main():
    cli()


if __name__ == "__main__":
    main()
