"""Progressive attention supervision: targets, losses and their weighting.

The joint objective is ``L = L_ans + theta * sum_t L_att[t] + phi * sum_t L_op[t]``
with ``theta`` annealed by a half-cosine over training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from airkit.errors import AirkitError
from airkit.program import OP_KINDS, OpKind
from airkit.roi import RoiSet
from airkit.scene import BoundingBox, SceneGraph

KL_EPS = 1e-8
DEFAULT_PHI = 0.5
DEFAULT_C = 300_000


@dataclass(frozen=True)
class TargetAttention:
    step: int
    weights: tuple[float, ...]
    uniform_fallback: bool = False

    def to_dict(self) -> dict:
        return {"step": self.step, "weights": list(self.weights), "uniform_fallback": self.uniform_fallback}


@dataclass(frozen=True)
class OperationLabel:
    step: int
    kind: OpKind

    @property
    def index(self) -> int:
        return OP_KINDS.index(self.kind)


@dataclass(frozen=True)
class LossBreakdown:
    l_ans: float
    l_att: tuple[float, ...]
    l_op: tuple[float, ...]
    theta: float
    phi: float
    total: float


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def derive_target_attention(rois: RoiSet, proposals: Sequence[BoundingBox], g: SceneGraph) -> TargetAttention:
    """Per-proposal target weights from summed IoU with every ROI box.

    Groups are pooled. When no proposal touches any ROI the target is
    uniform and flagged.
    """
    if not proposals:
        raise AirkitError("target attention needs at least one proposal")
    roi_boxes = [g.box(oid) for oid in sorted(rois.union())]
    raw = [math.fsum(iou(p, r) for r in roi_boxes) for p in proposals]
    total = math.fsum(raw)
    if total <= 0:
        n = len(proposals)
        return TargetAttention(rois.step, tuple(1.0 / n for _ in proposals), True)
    return TargetAttention(rois.step, tuple(w / total for w in raw), False)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def kl_attention_loss(target: TargetAttention | Sequence[float], predicted_logits,
                      eps: float = KL_EPS) -> tuple[float, np.ndarray]:
    """KL(target || softmax(logits)) and its gradient with respect to the logits."""
    t = np.asarray(target.weights if isinstance(target, TargetAttention) else target, dtype=float)
    z = np.asarray(predicted_logits, dtype=float)
    if t.shape != z.shape:
        raise AirkitError(f"target has {t.size} entries but {z.size} logits were given")
    p = softmax(z)
    mask = t > 0
    loss = float(np.sum(t[mask] * np.log(t[mask] / np.maximum(p[mask], eps))))
    return loss, p - t


def ce_operation_loss(label: OperationLabel | OpKind | int, predicted_logits) -> tuple[float, np.ndarray]:
    """Cross-entropy of the true operation kind under softmax(logits)."""
    z = np.asarray(predicted_logits, dtype=float)
    if z.shape != (len(OP_KINDS),):
        raise AirkitError(f"operation logits must have {len(OP_KINDS)} entries, got {z.size}")
    if isinstance(label, OperationLabel):
        idx = label.index
    elif isinstance(label, OpKind):
        idx = OP_KINDS.index(label)
    else:
        idx = int(label)
    shifted = z - z.max()
    log_norm = math.log(float(np.exp(shifted).sum()))
    loss = log_norm - float(shifted[idx])
    grad = softmax(z)
    grad[idx] -= 1.0
    return loss, grad


def theta_schedule(iteration: int, C: int = DEFAULT_C) -> float:
    if C <= 0:
        raise AirkitError(f"C must be positive, got {C}")
    if iteration < 0 or iteration > C:
        raise AirkitError(f"iteration {iteration} outside [0, {C}]")
    return 0.5 * (1.0 + math.cos(math.pi * iteration / C))


def combined_loss(l_ans: float, att_losses: Sequence[float], op_losses: Sequence[float], iteration: int,
                  C: int = DEFAULT_C, phi: float = DEFAULT_PHI) -> LossBreakdown:
    if len(att_losses) != len(op_losses):
        raise AirkitError(f"{len(att_losses)} attention losses but {len(op_losses)} operation losses")
    if not att_losses:
        raise AirkitError("at least one reasoning step is required")
    if phi < 0:
        raise AirkitError(f"phi must be non-negative, got {phi}")
    if l_ans < 0 or min(att_losses) < 0 or min(op_losses) < 0:
        raise AirkitError("loss terms must be non-negative")
    theta = theta_schedule(iteration, C)
    total = l_ans + theta * math.fsum(att_losses) + phi * math.fsum(op_losses)
    return LossBreakdown(float(l_ans), tuple(att_losses), tuple(op_losses), theta, float(phi), total)
