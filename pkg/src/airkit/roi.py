"""Execute reasoning programs over scene graphs to get per-step ROIs."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable

from airkit.errors import AirkitError, ProgramError
from airkit.program import OpKind, ReasoningProgram, validate_program
from airkit.scene import SceneGraph, has_attribute, normalize_token, objects_by_category

DEFAULT_K = 20


@dataclass(frozen=True)
class RoiSet:
    step: int
    groups: tuple[frozenset[str], ...]
    fallback_used: bool = False
    notes: tuple[str, ...] = ()
    # What dependent steps consume. Defaults to the union of the groups; a
    # Relate step hands on only its second group, the related objects.
    result: frozenset[str] | None = None

    def __post_init__(self):
        if self.result is None:
            object.__setattr__(self, "result", self.union())

    def union(self) -> frozenset[str]:
        return frozenset().union(*self.groups)


@dataclass(frozen=True)
class RoiTrace:
    program: ReasoningProgram
    sets: tuple[RoiSet, ...]

    def __len__(self):
        return len(self.sets)

    def __getitem__(self, i) -> RoiSet:
        return self.sets[i]

    @property
    def fallback_used(self) -> bool:
        return any(s.fallback_used for s in self.sets)

    def to_dict(self) -> dict:
        return {
            "steps": [
                {
                    "step": s.step,
                    "kind": self.program[s.step].kind.value,
                    "groups": [sorted(g) for g in s.groups],
                    "result": sorted(s.result),
                    "fallback_used": s.fallback_used,
                    "notes": list(s.notes),
                }
                for s in self.sets
            ]
        }


@dataclass(frozen=True)
class CooccurrenceTable:
    """Symmetric category co-existence counts over a scene-graph corpus."""

    categories: tuple[str, ...]
    counts: dict[tuple[str, str], int] = field(default_factory=dict)

    def count(self, a: str, b: str) -> int:
        a, b = normalize_token(a), normalize_token(b)
        if a == b:
            return 0
        return self.counts.get((a, b) if a < b else (b, a), 0)

    def neighbors(self, category: str) -> list[str]:
        """Co-existing categories ranked by count (descending), ties by name."""
        cat = normalize_token(category)
        pairs = []
        for (a, b), n in self.counts.items():
            if n <= 0:
                continue
            if a == cat:
                pairs.append((b, n))
            elif b == cat:
                pairs.append((a, n))
        return [c for c, _ in sorted(pairs, key=lambda p: (-p[1], p[0]))]

    def __contains__(self, category: str) -> bool:
        return normalize_token(category) in self.categories

    def to_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "counts": [[a, b, n] for (a, b), n in sorted(self.counts.items())],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> CooccurrenceTable:
        cats = tuple(sorted({normalize_token(c) for c in doc["categories"]}))
        counts: Counter = Counter()
        for a, b, n in doc["counts"]:
            a, b = normalize_token(a), normalize_token(b)
            if a == b:
                raise AirkitError(f"co-occurrence table has a self-pair for {a!r}")
            if int(n) < 0:
                raise AirkitError(f"negative co-occurrence count for ({a!r}, {b!r})")
            counts[(a, b) if a < b else (b, a)] += int(n)
        return cls(cats, dict(counts))

    @classmethod
    def from_json(cls, text: str) -> CooccurrenceTable:
        return cls.from_dict(json.loads(text))


def build_cooccurrence(corpus: Iterable[SceneGraph]) -> CooccurrenceTable:
    """Count, for each category pair, the graphs that contain both."""
    counts: Counter = Counter()
    cats: set[str] = set()
    seen = 0
    for g in corpus:
        seen += 1
        present = sorted(g.categories())
        cats.update(present)
        counts.update(combinations(present, 2))
    if not seen:
        raise AirkitError("cannot build a co-occurrence table from an empty corpus")
    return CooccurrenceTable(tuple(sorted(cats)), dict(counts))


def fallback_rois(g: SceneGraph, t: CooccurrenceTable, missing_category: str, k: int = DEFAULT_K) -> set[str]:
    """Stand-in ROIs for a category that does not occur in ``g``.

    Takes the ``k`` categories that most often co-exist with the missing one
    and returns the objects of ``g`` belonging to them. A category the table
    has never seen yields every object in the graph.
    """
    if missing_category not in t:
        return set(g.objects)
    top = set(t.neighbors(missing_category)[:k])
    return {oid for oid, obj in g.objects.items() if obj.category in top}


def _related_ids(g: SceneGraph, sources: frozenset[str], candidates: set[str], relation: str) -> set[str]:
    rel = normalize_token(relation)
    keep = set()
    for oid in candidates:
        for pred, target in g.objects[oid].relations:
            if pred == rel and target in sources:
                keep.add(oid)
        for src in sources:
            for pred, target in g.objects[src].relations:
                if pred == rel and target == oid:
                    keep.add(oid)
    return keep


def derive_roi_trace(
    p: ReasoningProgram,
    g: SceneGraph,
    t: CooccurrenceTable | None = None,
    k: int = DEFAULT_K,
    strict_relate: bool = False,
) -> RoiTrace:
    """Run ``p`` over ``g`` and collect the ROI groups of every step.

    ``strict_relate`` keeps only category objects linked to the previous ROIs
    by an edge carrying the step's relation. It is not the canonical rule.
    """
    if validate_program(p):
        raise ProgramError("cannot trace an invalid program")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")

    def lookup(category: str, notes: list[str]) -> tuple[frozenset[str], bool]:
        found = objects_by_category(g, category)
        if found:
            return frozenset(found), False
        if t is None:
            notes.append(f"category {category!r} absent and no co-occurrence table loaded")
            return frozenset(), False
        if category not in t:
            notes.append(f"category {category!r} unknown to co-occurrence table; using all objects")
        else:
            notes.append(f"category {category!r} absent; using top-{k} co-existing categories")
        return frozenset(fallback_rois(g, t, category, k)), True

    sets: list[RoiSet] = []
    for step in p.steps:
        notes: list[str] = []
        fallback = False
        dep_unions = []
        for d in step.deps:
            if d >= len(sets):
                raise ProgramError(f"unresolved dependency {d}", step=step.index)
            dep_unions.append(sets[d].result)
        kind = step.kind

        if kind is OpKind.SELECT:
            group, fallback = lookup(step.category, notes)
            groups = (group,)
        elif kind is OpKind.FILTER:
            prev = dep_unions[0]
            group = frozenset(o for o in prev if has_attribute(g.objects[o], step.attribute))
            if step.category is not None:
                group = frozenset(o for o in group if g.objects[o].category == step.category)
            if not group:
                notes.append(f"filter on {step.attribute!r} left no objects")
            groups = (group,)
        elif kind in (OpKind.QUERY, OpKind.VERIFY):
            prev = dep_unions[0]
            if step.category is None:
                group = prev
            else:
                group = frozenset(o for o in prev if g.objects[o].category == step.category)
                if not group:
                    if not objects_by_category(g, step.category):
                        group, fallback = lookup(step.category, notes)
                    else:
                        notes.append(f"no {step.category!r} among the previous step's ROIs")
            groups = (group,)
        elif kind is OpKind.RELATE:
            second, fallback = lookup(step.category, notes)
            if strict_relate and not fallback:
                second = frozenset(_related_ids(g, dep_unions[0], set(second), step.relation))
                notes.append("strict relate: category group filtered by relation edges (non-canonical)")
            groups = (dep_unions[0], second)
        else:
            groups = tuple(dep_unions)
        result = groups[1] if kind is OpKind.RELATE else None
        sets.append(RoiSet(step.index, tuple(groups), fallback, tuple(notes), result))
    return RoiTrace(p, tuple(sets))
