"""Synthetic corpora with known reasoning traces and planted attention.

Every question's ROIs are known by construction, so pipeline outputs can be
checked against them. Correct trials put most fixations on the final step's
ROIs; incorrect trials look at random places.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from airkit.attention import Fixation, write_fixations_csv
from airkit.program import OpKind, ReasoningProgram, Step, make_program, serialize_program
from airkit.roi import build_cooccurrence, derive_roi_trace
from airkit.scene import BoundingBox, SceneGraph, SceneObject, make_scene, serialize_scene_graph

WIDTH, HEIGHT = 640, 480
CATEGORIES = (
    "bag", "ball", "bench", "bottle", "car", "chair", "cup", "dog",
    "girl", "jeans", "man", "table", "tree", "umbrella",
)
MISSING_CATEGORIES = ("giraffe", "kite", "surfboard")
COLORS = ("black", "blue", "green", "red", "white", "yellow")
SIZES = ("large", "small")
PREDICATES = ("holding", "near", "on", "to the left of", "wearing")
QUERY_ATTRIBUTES = ("color", "material", "size")

DEFAULT_PARTICIPANTS = 6
FIXATIONS_PER_TRIAL = 10
CORRECT_ON_TARGET = 0.8


@dataclass
class SynthQuestion:
    question_id: str
    scene: SceneGraph
    program: ReasoningProgram
    accuracy: float = 1.0


@dataclass
class SynthCorpus:
    questions: list[SynthQuestion]
    fixations: list[Fixation] = field(default_factory=list)
    proposals: dict[str, list[BoundingBox]] = field(default_factory=dict)
    machine_weights: dict[str, list[float]] = field(default_factory=dict)
    machine_performance: dict[str, float] = field(default_factory=dict)


def _random_box(rng: np.random.Generator, taken: list[BoundingBox], tries: int = 30) -> BoundingBox:
    best, best_overlap = None, None
    for _ in range(tries):
        w = float(rng.integers(50, 140))
        h = float(rng.integers(50, 120))
        x = float(rng.integers(0, WIDTH - int(w)))
        y = float(rng.integers(0, HEIGHT - int(h)))
        box = BoundingBox(x, y, w, h)
        overlap = sum(max(0.0, min(box.x2, t.x2) - max(box.x, t.x)) * max(0.0, min(box.y2, t.y2) - max(box.y, t.y))
                      for t in taken)
        if overlap == 0:
            return box
        if best_overlap is None or overlap < best_overlap:
            best, best_overlap = box, overlap
    return best


def random_scene(rng: np.random.Generator, image_id: str, n_objects: int | None = None) -> SceneGraph:
    n = int(rng.integers(4, 8)) if n_objects is None else n_objects
    cats = list(rng.choice(CATEGORIES, size=n, replace=True))
    if rng.random() < 0.3:
        cats[-1] = str(rng.choice(MISSING_CATEGORIES))
    boxes: list[BoundingBox] = []
    for _ in range(n):
        boxes.append(_random_box(rng, boxes))
    ids = [f"{image_id}_o{i}" for i in range(n)]
    objects = []
    for i in range(n):
        attrs = {str(rng.choice(COLORS)), str(rng.choice(SIZES))}
        rels = []
        for j in range(n):
            if j != i and rng.random() < 0.25:
                rels.append((str(rng.choice(PREDICATES)), ids[j]))
        objects.append(SceneObject(ids[i], str(cats[i]), boxes[i], frozenset(attrs), tuple(rels)))
    return make_scene(image_id, WIDTH, HEIGHT, objects)


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def random_program(rng: np.random.Generator, g: SceneGraph) -> ReasoningProgram:
    """A program of at most six steps whose referents mostly exist in ``g``."""
    objs = sorted(g.objects.values(), key=lambda o: o.id)
    cats = sorted(g.categories())
    a = _pick(rng, objs)
    b_cat = _pick(rng, cats)
    attr = _pick(rng, sorted(a.attributes))
    query = _pick(rng, QUERY_ATTRIBUTES)
    pred = a.relations[0][0] if a.relations else _pick(rng, PREDICATES)
    S = Step
    K = OpKind
    template = int(rng.integers(10))
    if template == 0:
        steps = [S(0, K.SELECT, a.category), S(1, K.QUERY, attribute=query, deps=(0,))]
    elif template == 1:
        steps = [S(0, K.SELECT, a.category), S(1, K.FILTER, attribute=attr, deps=(0,)),
                 S(2, K.QUERY, attribute=query, deps=(1,))]
    elif template == 2:
        steps = [S(0, K.SELECT, a.category), S(1, K.RELATE, b_cat, relation=pred, deps=(0,)),
                 S(2, K.QUERY, b_cat, attribute=query, deps=(1,))]
    elif template == 3:
        c_cat = _pick(rng, cats)
        steps = [S(0, K.SELECT, a.category), S(1, K.RELATE, b_cat, relation=pred, deps=(0,)),
                 S(2, K.RELATE, c_cat, relation=_pick(rng, PREDICATES), deps=(1,)),
                 S(3, K.QUERY, c_cat, attribute=query, deps=(2,))]
    elif template == 4:
        steps = [S(0, K.SELECT, a.category), S(1, K.SELECT, b_cat),
                 S(2, K.COMPARE, attribute=_pick(rng, ("color", "size")), deps=(0, 1))]
    elif template == 5:
        steps = [S(0, K.SELECT, a.category), S(1, K.SELECT, b_cat), S(2, K.AND, deps=(0, 1))]
    elif template == 6:
        steps = [S(0, K.SELECT, a.category), S(1, K.SELECT, b_cat), S(2, K.OR, deps=(0, 1))]
    elif template == 7:
        steps = [S(0, K.SELECT, a.category), S(1, K.VERIFY, attribute=attr, deps=(0,))]
    elif template == 8:
        absent = [c for c in MISSING_CATEGORIES if c not in cats]
        missing = _pick(rng, absent)
        steps = [S(0, K.SELECT, missing), S(1, K.VERIFY, attribute="exist", deps=(0,))]
    else:
        steps = [S(0, K.SELECT, a.category), S(1, K.FILTER, attribute=attr, deps=(0,)),
                 S(2, K.RELATE, b_cat, relation=pred, deps=(1,)),
                 S(3, K.FILTER, attribute=_pick(rng, COLORS), deps=(2,)),
                 S(4, K.SELECT, a.category),
                 S(5, K.AND, deps=(3, 4))]
    return make_program(steps)


def _point_in(rng, box: BoundingBox) -> tuple[float, float]:
    return float(rng.uniform(box.x, box.x2)), float(rng.uniform(box.y, box.y2))


def _trial_fixations(rng, qid: str, pid: str, correct: bool, target_boxes: list[BoundingBox],
                     n: int = FIXATIONS_PER_TRIAL) -> list[Fixation]:
    out = []
    t = float(rng.uniform(0, 80))
    for _ in range(n):
        dur = float(rng.uniform(180, 300))
        if correct and target_boxes and rng.random() < CORRECT_ON_TARGET:
            x, y = _point_in(rng, _pick(rng, target_boxes))
        else:
            x, y = float(rng.uniform(0, WIDTH)), float(rng.uniform(0, HEIGHT))
        out.append(Fixation(qid, pid, round(x, 3), round(y, 3), round(t, 3), round(t + dur, 3), correct,
                            "yes" if correct else "no"))
        t += dur + float(rng.uniform(10, 40))
    return out


def generate_corpus(n: int, seed: int = 0, participants: int = DEFAULT_PARTICIPANTS) -> SynthCorpus:
    rng = np.random.default_rng(seed)
    width = max(4, len(str(max(n - 1, 0))))
    questions = []
    for i in range(n):
        g = random_scene(rng, f"img{i:0{width}d}")
        questions.append(SynthQuestion(f"q{i:0{width}d}", g, random_program(rng, g)))
    table = build_cooccurrence(q.scene for q in questions) if questions else None

    corpus = SynthCorpus(questions)
    for q in questions:
        g, p = q.scene, q.program
        # at least one correct and one incorrect participant per question
        n_correct = int(rng.integers(1, participants))
        q.accuracy = n_correct / participants
        final_ids = sorted(derive_roi_trace(p, g, table)[p.final].union())
        targets = [g.box(o) for o in final_ids]
        for rank, pi in enumerate(rng.permutation(participants)):
            corpus.fixations.extend(_trial_fixations(rng, q.question_id, f"p{pi:02d}", rank < n_correct, targets))

        object_ids = sorted(g.objects)
        boxes = [g.box(o) for o in object_ids]
        boxes += [BoundingBox(*_point_in(rng, BoundingBox(0, 0, WIDTH - 80, HEIGHT - 80)), 80.0, 80.0)
                  for _ in range(3)]
        hits = np.array([1.0 if o in final_ids else 0.0 for o in object_ids] + [0.0] * 3)
        logits = 3.0 * hits + rng.normal(0, 1.0, len(boxes))
        w = np.exp(logits - logits.max())
        w /= w.sum()
        corpus.proposals[q.question_id] = boxes
        corpus.machine_weights[q.question_id] = [float(v) for v in w]
        on_target = float(w[hits > 0].sum()) if hits.any() else 0.0
        corpus.machine_performance[q.question_id] = float(
            np.clip(0.2 + 0.7 * on_target + rng.normal(0, 0.05), 0.0, 1.0))
    return corpus


def write_corpus(corpus: SynthCorpus, out_dir) -> Path:
    """Write the corpus in the on-disk layout ``score`` and ``run`` read."""
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    (out / "attention").mkdir(exist_ok=True)
    (out / "proposals").mkdir(exist_ok=True)
    records, expected = [], {}
    graphs = {}
    for q in corpus.questions:
        graphs[q.scene.image_id] = q.scene
        records.append({"question_id": q.question_id, "image_id": q.scene.image_id,
                        "program": serialize_program(q.program)})
    for image_id, g in sorted(graphs.items()):
        (out / "scenes" / f"{image_id}.json").write_text(serialize_scene_graph(g) + "\n", encoding="utf-8")
    table = build_cooccurrence(graphs.values()) if graphs else None
    for q in corpus.questions:
        trace = derive_roi_trace(q.program, q.scene, table)
        expected[q.question_id] = [[sorted(gr) for gr in s.groups] for s in trace.sets]
    (out / "questions.json").write_text(json.dumps(records, indent=1) + "\n", encoding="utf-8")
    (out / "expected_traces.json").write_text(json.dumps(expected, indent=1, sort_keys=True) + "\n",
                                              encoding="utf-8")
    if table is not None:
        (out / "cooccurrence.json").write_text(table.to_json() + "\n", encoding="utf-8")
    write_fixations_csv(out / "fixations.csv", corpus.fixations)
    for qid, boxes in sorted(corpus.proposals.items()):
        weights = corpus.machine_weights[qid]
        doc = [{"box": b.as_list(), "weight": w} for b, w in zip(boxes, weights)]
        (out / "attention" / f"{qid}__machine.json").write_text(json.dumps(doc) + "\n", encoding="utf-8")
        (out / "proposals" / f"{qid}.json").write_text(
            json.dumps([{"box": b.as_list()} for b in boxes]) + "\n", encoding="utf-8")
    with open(out / "outcomes.csv", "w", encoding="utf-8") as fh:
        fh.write("question_id,source,performance,measure\n")
        for qid, v in sorted(corpus.machine_performance.items()):
            fh.write(f"{qid},machine,{v!r},correct-answer score\n")
    config = {
        "scenes": "scenes",
        "questions": "questions.json",
        "fixations": "fixations.csv",
        "attention": "attention",
        "cooccurrence": "cooccurrence.json",
        "outcomes": "outcomes.csv",
        "proposals": "proposals",
    }
    (out / "config.json").write_text(json.dumps(config, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out


# --- planted temporal drift ------------------------------------------------

def planted_drift_case(rng: np.random.Generator, n_bins: int = 3, fixations_per_bin: int = 12,
                       on_target: float = 0.8, bin_ms: float = 1000.0):
    """A scene, program and fixations whose bin ``i`` looks at step ``i``'s ROI.

    The program selects ``n_bins`` distinct categories and joins them with
    ``and``, so early steps have pairwise disjoint single-object ROIs.
    """
    cats = list(rng.choice(CATEGORIES, size=n_bins + 1, replace=False))
    boxes: list[BoundingBox] = []
    for _ in range(n_bins + 1):
        boxes.append(_random_box(rng, boxes, tries=200))
    objects = [SceneObject(f"o{i}", str(c), b) for i, (c, b) in enumerate(zip(cats, boxes))]
    g = make_scene("planted", WIDTH, HEIGHT, objects)
    steps = [Step(i, OpKind.SELECT, str(cats[i])) for i in range(n_bins)]
    steps.append(Step(n_bins, OpKind.AND, deps=tuple(range(n_bins))))
    program = make_program(steps)
    fixations = []
    for b in range(n_bins):
        for k in range(fixations_per_bin):
            if rng.random() < on_target:
                x, y = _point_in(rng, g.box(f"o{b}"))
            else:
                x, y = float(rng.uniform(0, WIDTH)), float(rng.uniform(0, HEIGHT))
            start = b * bin_ms + k * bin_ms / fixations_per_bin
            fixations.append(Fixation("planted", "p0", x, y, start, start + bin_ms / fixations_per_bin * 0.9, True))
    return g, program, fixations
