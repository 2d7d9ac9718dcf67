"""AiR-E: alignment between an attention map and the ROIs of each reasoning step.

Box scores are means of the z-scored map inside a box. Steps aggregate box
scores by operation semantics:

* select / filter / query / verify: best box in the single group;
* or: best box over every group;
* relate / compare / and: best box per group, averaged over groups.

Empty groups are skipped with a note; a step whose groups are all empty has
no score (``None``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from airkit.attention import AttentionMap, StandardizedMap, box_pixel_span, standardize_map
from airkit.errors import AirkitError
from airkit.program import MULTI_SET_KINDS, OpKind, SINGLE_SET_KINDS
from airkit.roi import RoiSet, RoiTrace
from airkit.scene import BoundingBox, SceneGraph


@dataclass(frozen=True)
class AirEStepScore:
    step: int
    kind: OpKind
    per_group: tuple[float | None, ...]
    score: float | None
    fallback_used: bool = False
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "kind": self.kind.value,
            "per_group": list(self.per_group),
            "score": self.score,
            "fallback_used": self.fallback_used,
            "notes": list(self.notes),
        }


@dataclass
class AirEReport:
    question_id: str
    source: str
    steps: list[AirEStepScore]
    per_kind_means: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def mean_score(self) -> float | None:
        """Mean over the steps that have a score."""
        vals = [s.score for s in self.steps if s.score is not None]
        return math.fsum(vals) / len(vals) if vals else None

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "source": self.source,
            "steps": [s.to_dict() for s in self.steps],
            "per_kind_means": dict(sorted(self.per_kind_means.items())),
            "mean_score": self.mean_score,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> AirEReport:
        steps = [
            AirEStepScore(
                step=s["step"],
                kind=OpKind(s["kind"]),
                per_group=tuple(s["per_group"]),
                score=s["score"],
                fallback_used=s["fallback_used"],
                notes=tuple(s.get("notes", ())),
            )
            for s in doc["steps"]
        ]
        return cls(doc["question_id"], doc["source"], steps, dict(doc["per_kind_means"]), list(doc.get("notes", [])))


def box_aire(sm: StandardizedMap, b: BoundingBox, width: float, height: float) -> float:
    """Mean standardized attention over the map pixels inside ``b``."""
    r0, r1, c0, c1 = box_pixel_span(b, width, height, sm.shape)
    if sm.degenerate:
        return 0.0
    return float(sm.grid[r0:r1, c0:c1].mean())


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _check_arity(rs: RoiSet, kind: OpKind):
    n = len(rs.groups)
    if kind in SINGLE_SET_KINDS:
        ok = n == 1
    elif kind is OpKind.RELATE:
        ok = n == 2
    elif kind in MULTI_SET_KINDS:
        ok = n >= 2
    else:
        ok = n >= 1
    if not ok:
        raise AirkitError(f"step {rs.step}: {kind.value} cannot take {n} ROI groups")


def aggregate_step_aire(sm: StandardizedMap, rs: RoiSet, kind: OpKind, g: SceneGraph) -> AirEStepScore:
    _check_arity(rs, kind)
    notes = list(rs.notes)
    per_group: list[float | None] = []
    for gi, group in enumerate(rs.groups):
        if not group:
            per_group.append(None)
            notes.append(f"group {gi} is empty")
            continue
        per_group.append(max(box_aire(sm, g.box(oid), g.width, g.height) for oid in sorted(group)))

    defined = [v for v in per_group if v is not None]
    if not defined:
        score = None
        notes.append("no ROIs to score")
    elif kind in MULTI_SET_KINDS:
        score = _mean(defined)
    else:
        score = max(defined)
    return AirEStepScore(rs.step, kind, tuple(per_group), score, rs.fallback_used, tuple(notes))


def score_trace(m: AttentionMap, trace: RoiTrace, g: SceneGraph, question_id: str = "",
                source: str | None = None) -> AirEReport:
    """Score every step of ``trace`` against one attention map."""
    sm = standardize_map(m)
    source = source if source is not None else m.source
    steps = [aggregate_step_aire(sm, rs, trace.program[rs.step].kind, g) for rs in trace.sets]
    notes = []
    if sm.degenerate:
        notes.append("degenerate map (no spread); every box scores 0")
    for s in steps:
        if s.fallback_used:
            notes.append(f"step {s.step}: co-occurrence fallback used")
        if s.score is None:
            notes.append(f"step {s.step}: undefined score (all ROI groups empty)")
    by_kind: dict[str, list[float]] = {}
    for s in steps:
        if s.score is not None:
            by_kind.setdefault(s.kind.value, []).append(s.score)
    means = {k: _mean(v) for k, v in by_kind.items()}
    return AirEReport(question_id, source, steps, means, notes)


def score_temporal_matrix(maps_by_bin: Sequence[AttentionMap], trace: RoiTrace, g: SceneGraph) -> np.ndarray:
    """Bins x steps matrix of step scores; NaN marks undefined entries."""
    if not maps_by_bin:
        raise AirkitError("temporal scoring needs at least one bin")
    out = np.full((len(maps_by_bin), len(trace)), np.nan)
    for i, m in enumerate(maps_by_bin):
        rep = score_trace(m, trace, g)
        for j, s in enumerate(rep.steps):
            if s.score is not None:
                out[i, j] = s.score
    return out
