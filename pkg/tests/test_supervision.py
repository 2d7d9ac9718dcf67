import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airkit.errors import AirkitError
from airkit.program import OP_KINDS, OpKind
from airkit.roi import RoiSet
from airkit.scene import BoundingBox, SceneObject, make_scene
from airkit.supervision import (
    DEFAULT_C,
    DEFAULT_PHI,
    OperationLabel,
    ce_operation_loss,
    combined_loss,
    derive_target_attention,
    iou,
    kl_attention_loss,
    softmax,
    theta_schedule,
)


def roi_scene(*boxes):
    return make_scene("s", 1000, 1000, [SceneObject(f"r{i}", "thing", b) for i, b in enumerate(boxes)])


def rois(g):
    return RoiSet(0, (frozenset(g.objects),))


def test_iou_examples():
    a = BoundingBox(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(5, 5, 1, 1)) == 0.0
    assert iou(a, BoundingBox(2, 0, 2, 2)) == 0.0
    assert iou(a, BoundingBox(1, 1, 2, 2)) == pytest.approx(1 / 7, abs=1e-15)


def test_target_identical_and_disjoint():
    roi = BoundingBox(10, 10, 50, 50)
    g = roi_scene(roi)
    t = derive_target_attention(rois(g), [roi, BoundingBox(500, 500, 20, 20)], g)
    assert t.weights == (1.0, 0.0)
    assert not t.uniform_fallback


def test_target_normalization():
    # proposal 1 overlaps the ROI with IoU 0.3, proposal 2 with IoU 0.1
    roi = BoundingBox(0, 0, 100, 100)
    g = roi_scene(roi)
    p1 = BoundingBox(0, 0, 30, 100)    # inter 3000, union 10000
    p2 = BoundingBox(0, 0, 10, 100)    # inter 1000, union 10000
    assert iou(p1, roi) == pytest.approx(0.3)
    assert iou(p2, roi) == pytest.approx(0.1)
    t = derive_target_attention(rois(g), [p1, p2], g)
    assert t.weights == pytest.approx((0.75, 0.25), abs=1e-12)


def test_target_uniform_fallback():
    g = roi_scene(BoundingBox(0, 0, 10, 10))
    t = derive_target_attention(rois(g), [BoundingBox(100, 100, 5, 5)] * 4, g)
    assert t.weights == (0.25, 0.25, 0.25, 0.25)
    assert t.uniform_fallback


def test_target_pools_groups():
    g = roi_scene(BoundingBox(0, 0, 10, 10), BoundingBox(50, 50, 10, 10))
    rs = RoiSet(0, (frozenset({"r0"}), frozenset({"r1"})))
    t = derive_target_attention(rs, [BoundingBox(0, 0, 10, 10), BoundingBox(50, 50, 10, 10)], g)
    assert t.weights == (0.5, 0.5)


def test_target_needs_proposals():
    g = roi_scene(BoundingBox(0, 0, 10, 10))
    with pytest.raises(AirkitError):
        derive_target_attention(rois(g), [], g)


box_st = st.builds(BoundingBox, st.integers(0, 80), st.integers(0, 80), st.integers(1, 40), st.integers(1, 40))


@settings(max_examples=100, deadline=None)
@given(st.lists(box_st, min_size=1, max_size=4), st.lists(box_st, min_size=1, max_size=6), st.sampled_from([2, 3, 7]))
def test_target_sums_to_one_and_scale_invariant(roi_boxes, proposals, s):
    g = roi_scene(*roi_boxes)
    t = derive_target_attention(rois(g), proposals, g)
    assert math.fsum(t.weights) == pytest.approx(1.0, abs=1e-9)
    assert all(w >= 0 for w in t.weights)
    big = make_scene("s", 1000 * s, 1000 * s,
                     [SceneObject(o.id, o.category, o.box.scaled(s, s)) for o in g.objects.values()])
    t2 = derive_target_attention(rois(big), [p.scaled(s, s) for p in proposals], big)
    assert t2.weights == pytest.approx(t.weights, abs=1e-9)
    assert t2.uniform_fallback == t.uniform_fallback


def test_kl_examples():
    loss, grad = kl_attention_loss([1.0, 0.0], [0.0, 0.0])
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    np.testing.assert_allclose(grad, [-0.5, 0.5], atol=1e-12)
    z = np.array([0.3, -1.2, 2.0])
    loss, grad = kl_attention_loss(softmax(z), z)
    assert abs(loss) < 1e-9
    np.testing.assert_allclose(grad, 0, atol=1e-12)


def test_kl_length_mismatch():
    with pytest.raises(AirkitError):
        kl_attention_loss([0.5, 0.5], [0.0, 0.0, 0.0])


def test_ce_examples():
    loss, grad = ce_operation_loss(OperationLabel(0, OpKind.RELATE), np.zeros(8))
    assert loss == pytest.approx(math.log(8), abs=1e-12)
    logits = np.zeros(8)
    logits[OP_KINDS.index(OpKind.AND)] = 10.0
    loss, _ = ce_operation_loss(OpKind.AND, logits)
    assert loss < 1e-3
    with pytest.raises(AirkitError):
        ce_operation_loss(0, np.zeros(7))


def central_difference(f, z, h=1e-5):
    out = np.zeros_like(z)
    for i in range(z.size):
        up, down = z.copy(), z.copy()
        up[i] += h
        down[i] -= h
        out[i] = (f(up) - f(down)) / (2 * h)
    return out


def assert_grad_close(analytic, numeric):
    # componentwise relative error, with an absolute floor for near-zero entries
    scale = np.maximum(np.abs(numeric), 1e-3)
    assert np.all(np.abs(analytic - numeric) / scale < 1e-4)


logit_vectors = st.integers(2, 16).flatmap(
    lambda n: st.lists(st.floats(-4, 4), min_size=n, max_size=n).map(np.array))


@settings(max_examples=100, deadline=None)
@given(logit_vectors, st.data())
def test_kl_gradient_finite_differences(z, data):
    raw = np.array(data.draw(st.lists(st.floats(0, 1), min_size=z.size, max_size=z.size)))
    if raw.sum() <= 1e-3:
        raw[0] = 1.0
    t = raw / raw.sum()
    loss, grad = kl_attention_loss(t, z)
    assert loss >= -1e-12
    assert_grad_close(grad, central_difference(lambda v: kl_attention_loss(t, v)[0], z))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=8, max_size=8).map(np.array), st.integers(0, 7))
def test_ce_gradient_finite_differences(z, label):
    loss, grad = ce_operation_loss(label, z)
    assert loss >= 0
    assert abs(grad.sum()) < 1e-12
    assert_grad_close(grad, central_difference(lambda v: ce_operation_loss(label, v)[0], z))


def test_theta_examples():
    assert DEFAULT_C == 300_000
    assert theta_schedule(0) == 1.0
    assert theta_schedule(DEFAULT_C) == 0.0
    assert theta_schedule(150_000, 300_000) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(AirkitError):
        theta_schedule(DEFAULT_C + 1)


@given(st.integers(0, DEFAULT_C - 1))
def test_theta_nonincreasing(i):
    assert theta_schedule(i + 1) <= theta_schedule(i)
    assert 0.0 <= theta_schedule(i) <= 1.0


def test_combined_examples():
    assert DEFAULT_PHI == 0.5
    out = combined_loss(1.0, [0.2, 0.3], [0.1, 0.1], 0, phi=0.5)
    assert out.total == pytest.approx(1.6, abs=1e-12)
    assert out.theta == 1.0
    with pytest.raises(AirkitError, match="2 attention losses but 1"):
        combined_loss(1.0, [0.2, 0.2], [0.4], 0)
    with pytest.raises(AirkitError):
        combined_loss(1.0, [-0.1], [0.1], 0)


pos = st.floats(0, 10)


@settings(max_examples=100, deadline=None)
@given(pos, st.lists(st.tuples(pos, pos, pos, pos), min_size=1, max_size=6), st.integers(0, DEFAULT_C),
       st.floats(0, 2))
def test_combined_superposition(l_ans, terms, it, phi):
    a1 = [t[0] for t in terms]
    a2 = [t[1] for t in terms]
    o1 = [t[2] for t in terms]
    o2 = [t[3] for t in terms]
    both = combined_loss(l_ans, [x + y for x, y in zip(a1, a2)], [x + y for x, y in zip(o1, o2)], it, phi=phi)
    one = combined_loss(l_ans, a1, o1, it, phi=phi)
    two = combined_loss(0.0, a2, o2, it, phi=phi)
    assert both.total == pytest.approx(one.total + two.total, abs=1e-12 * max(1.0, both.total))
    assert one.total == pytest.approx(l_ans + one.theta * math.fsum(a1) + phi * math.fsum(o1), abs=1e-12)
