import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airkit.aire import AirEReport, aggregate_step_aire, box_aire, score_temporal_matrix, score_trace
from airkit.attention import (
    AttentionMap,
    StandardizedMap,
    fixations_to_map,
    slice_fixations_temporal,
    standardize_map,
)
from airkit.errors import AirkitError
from airkit.program import OpKind
from airkit.roi import RoiSet, derive_roi_trace
from airkit.scene import BoundingBox, SceneObject, make_scene
from airkit.synth import planted_drift_case


def pixel_oracle(z, box, width, height):
    """Average z over pixels whose centres lie in the rescaled half-open box."""
    rows, cols = z.shape
    vals = []
    for r in range(rows):
        for c in range(cols):
            px = (c + 0.5) * width / cols
            py = (r + 0.5) * height / rows
            if box.x <= px < box.x2 and box.y <= py < box.y2:
                vals.append(z[r, c])
    return math.fsum(vals) / len(vals)


def z_of(grid):
    g = np.asarray(grid, dtype=float)
    return (g - g.mean()) / g.std()


def line_scene(n):
    """n unit boxes on a 1 x n image, one per pixel column."""
    return make_scene("line", n, 1, [SceneObject(f"b{i + 1}", "thing", BoundingBox(i, 0, 1, 1))
                                     for i in range(n)])


def test_two_pixel_example():
    sm = standardize_map(np.array([[0.0, 2.0]]))
    assert box_aire(sm, BoundingBox(1, 0, 1, 1), 2, 1) == 1.0
    assert box_aire(sm, BoundingBox(0, 0, 1, 1), 2, 1) == -1.0


def test_degenerate_map_scores_zero():
    sm = standardize_map(np.full((8, 8), 0.7))
    assert box_aire(sm, BoundingBox(1, 1, 3, 2), 8, 8) == 0.0


def test_whole_map_box_is_zero():
    sm = standardize_map(np.random.default_rng(1).random((16, 16)))
    assert abs(box_aire(sm, BoundingBox(0, 0, 640, 480), 640, 480)) < 1e-9


def test_box_outside_image():
    sm = standardize_map(np.eye(4))
    with pytest.raises(AirkitError):
        box_aire(sm, BoundingBox(10, 10, 2, 2), 4, 4)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_box_aire_matches_pixel_oracle(seed):
    rng = np.random.default_rng(seed)
    grid = rng.random((16, 16))
    x0, x1 = sorted(rng.uniform(0, 320, 2))
    y0, y1 = sorted(rng.uniform(0, 240, 2))
    box = BoundingBox(x0, y0, max(x1 - x0, 25.0), max(y1 - y0, 20.0))
    got = box_aire(standardize_map(grid), box, 320, 240)
    assert got == pytest.approx(pixel_oracle(z_of(grid), box, 320, 240), abs=1e-9)


def hand_map(values):
    """A standardized map whose pixels hold the given box scores directly."""
    return StandardizedMap(np.array([values], dtype=float), False)


def test_aggregate_examples():
    g = line_scene(2)
    sm = hand_map([0.5, 2.0])
    s = aggregate_step_aire(sm, RoiSet(0, (frozenset({"b1", "b2"}),)), OpKind.SELECT, g)
    assert s.score == 2.0
    sm = hand_map([2.0, 1.0])
    groups = (frozenset({"b1"}), frozenset({"b2"}))
    assert aggregate_step_aire(sm, RoiSet(0, groups), OpKind.AND, g).score == 1.5
    assert aggregate_step_aire(sm, RoiSet(0, groups), OpKind.OR, g).score == 2.0
    assert aggregate_step_aire(sm, RoiSet(0, groups), OpKind.RELATE, g).score == 1.5
    assert aggregate_step_aire(sm, RoiSet(0, groups), OpKind.COMPARE, g).score == 1.5


def test_aggregate_empty_groups():
    g = line_scene(2)
    sm = hand_map([2.0, 1.0])
    s = aggregate_step_aire(sm, RoiSet(0, (frozenset(), frozenset({"b2"}))), OpKind.AND, g)
    assert s.per_group == (None, 1.0)
    assert s.score == 1.0
    assert any("empty" in n for n in s.notes)
    s = aggregate_step_aire(sm, RoiSet(0, (frozenset(),)), OpKind.FILTER, g)
    assert s.score is None


def test_aggregate_arity_checked():
    g = line_scene(2)
    with pytest.raises(AirkitError):
        aggregate_step_aire(hand_map([1.0, 0.0]), RoiSet(0, (frozenset({"b1"}),)), OpKind.RELATE, g)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6),
       st.lists(st.frozensets(st.sampled_from([f"b{i}" for i in range(1, 7)]), min_size=1), min_size=1,
                max_size=4),
       st.sampled_from(list(OpKind)), st.randoms(use_true_random=False))
def test_aggregate_matches_enumeration(values, groups, kind, rnd):
    g = line_scene(6)
    sm = hand_map(values)
    if kind in (OpKind.SELECT, OpKind.FILTER, OpKind.QUERY, OpKind.VERIFY):
        groups = groups[:1]
    elif kind is OpKind.RELATE:
        groups = (groups * 2)[:2]
    elif len(groups) < 2:
        groups = groups * 2
    score = lambda oid: values[int(oid[1:]) - 1]  # noqa: E731
    maxima = [max(score(o) for o in grp) for grp in groups]
    if kind is OpKind.OR:
        want = max(score(o) for grp in groups for o in grp)
    elif kind in (OpKind.AND, OpKind.COMPARE, OpKind.RELATE):
        want = math.fsum(maxima) / len(maxima)
        assert min(maxima) - 1e-12 <= want <= max(maxima) + 1e-12
    else:
        want = maxima[0]
        assert all(want >= score(o) for o in groups[0])
    got = aggregate_step_aire(sm, RoiSet(0, tuple(groups)), kind, g).score
    assert got == pytest.approx(want, abs=1e-12)
    # reordering objects inside a group changes nothing
    shuffled = tuple(frozenset(rnd.sample(sorted(grp), len(grp))) for grp in groups)
    assert aggregate_step_aire(sm, RoiSet(0, shuffled), kind, g).score == got


def bag_map(scene, size=64):
    grid = np.zeros((size, size))
    b = scene.box("bag")
    sx, sy = size / scene.width, size / scene.height
    grid[int(b.y * sy) + 1:int(b.y2 * sy) - 1, int(b.x * sx) + 1:int(b.x2 * sx) - 1] = 1.0
    return AttentionMap(grid)


def test_chain_bag_mass_wins_final_step(chain_scene, chain_program):
    trace = derive_roi_trace(chain_program, chain_scene)
    rep = score_trace(bag_map(chain_scene), trace, chain_scene, "chain")
    scores = [s.score for s in rep.steps]
    assert int(np.argmax(scores)) == chain_program.final
    assert scores[3] > scores[2] > scores[0]


def test_zero_map_scores_zero(chain_scene, chain_program):
    trace = derive_roi_trace(chain_program, chain_scene)
    rep = score_trace(AttentionMap(np.zeros((32, 32))), trace, chain_scene)
    assert all(s.score == 0.0 for s in rep.steps)
    assert any("degenerate" in n for n in rep.notes)


def test_scaled_map_gives_same_report(chain_scene, chain_program):
    trace = derive_roi_trace(chain_program, chain_scene)
    m = AttentionMap(np.random.default_rng(5).random((64, 64)))
    a = score_trace(m, trace, chain_scene).to_dict()
    b = score_trace(m.scaled(10.0), trace, chain_scene).to_dict()
    for sa, sb in zip(a["steps"], b["steps"]):
        assert sa["score"] == pytest.approx(sb["score"], abs=1e-9)


def test_report_round_trip(chain_scene, chain_program):
    trace = derive_roi_trace(chain_program, chain_scene)
    rep = score_trace(bag_map(chain_scene), trace, chain_scene, "chain")
    again = AirEReport.from_dict(rep.to_dict())
    assert again.to_dict() == rep.to_dict()
    assert set(rep.per_kind_means) == {"select", "relate", "query"}
    assert rep.per_kind_means["relate"] == pytest.approx((rep.steps[1].score + rep.steps[2].score) / 2)


def test_temporal_matrix_shape_and_rows(chain_scene, chain_program):
    trace = derive_roi_trace(chain_program, chain_scene)
    m = bag_map(chain_scene)
    mat = score_temporal_matrix([m, m, m], trace, chain_scene)
    assert mat.shape == (3, 4)
    assert np.array_equal(mat[0], mat[1]) and np.array_equal(mat[1], mat[2])
    with pytest.raises(AirkitError):
        score_temporal_matrix([], trace, chain_scene)


def test_planted_drift_diagonal():
    g, program, fixations = planted_drift_case(np.random.default_rng(11))
    bins, dropped = slice_fixations_temporal(fixations)
    assert dropped == 0
    maps = [fixations_to_map(fs, g.width, g.height, 64, 3.0) for fs in bins]
    mat = score_temporal_matrix(maps, derive_roi_trace(program, g), g)
    assert mat.shape == (3, 4)
    for i in range(mat.shape[0]):
        others = [mat[i, j] for j in range(mat.shape[1]) if j != i]
        assert mat[i, i] > max(others)
