"""Slot-to-object assignment and the two training objectives.

Stage 1 combines box/objectness/mask supervision routed through a
minimum-cost assignment, a multi-positive contrastive tracking term over
slot embeddings, and a class-weighted relevance term. Stage 2 is plain
cross-entropy over discretized action bins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import tensor as T
from .nn import ParamGroup, param
from .slots import SlotPredictions
from .tensor import ShapeError, Tensor

_TIE_RTOL = 1e-12


@dataclass
class LossConfig:
    lambda_slot_attn: float = 1.0
    lambda_track: float = 0.5
    lambda_int: float = 1.0
    lambda_box: float = 1.0
    lambda_obj: float = 0.5
    lambda_seg: float = 1.0
    cost_l1: float = 5.0
    cost_giou: float = 2.0
    tau: float = 0.1
    w_pos: float = 2.0
    w_neg: float = 1.0
    track_window: int = 2

    def __post_init__(self):
        values = [self.lambda_slot_attn, self.lambda_track, self.lambda_int,
                  self.lambda_box, self.lambda_obj, self.lambda_seg,
                  self.cost_l1, self.cost_giou, self.w_pos, self.w_neg]
        if any(not np.isfinite(v) or v < 0 for v in values):
            raise ValueError("loss weights must be finite and non-negative")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"temperature must be positive, got {self.tau}")


@dataclass
class MatchAssignment:
    """Injection of ground-truth objects into slots."""

    pairs: list[tuple[int, int]]      # (slot index, gt index)
    unmatched_slots: list[int]
    total_cost: float

    def slot_for_gt(self) -> dict[int, int]:
        return {g: s for s, g in self.pairs}


def _optimal_cost(cost: np.ndarray) -> float:
    if cost.shape[1] == 0:
        return 0.0
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def hungarian_match(cost: np.ndarray) -> MatchAssignment:
    """Minimum-total-cost assignment of every gt column to a distinct slot row.

    Ties between equal-total assignments break toward the lexicographically
    smallest (slot, gt) pair list: columns are fixed in order, each taking
    the lowest slot index that still permits an optimal completion.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite values")
    n_slots, n_gt = cost.shape
    if n_gt > n_slots:
        raise ValueError(f"{n_gt} objects exceed {n_slots} slots")
    best = _optimal_cost(cost)
    tol = _TIE_RTOL * max(1.0, abs(best))
    pairs: list[tuple[int, int]] = []
    free = list(range(n_slots))
    spent = 0.0
    for j in range(n_gt):
        rest = cost[:, j + 1:]
        for pos, i in enumerate(free):
            sub = np.delete(rest[free], pos, axis=0)
            total = spent + cost[i, j] + _optimal_cost(sub)
            if total <= best + tol:
                pairs.append((i, j))
                spent += cost[i, j]
                free.pop(pos)
                break
        else:  # pragma: no cover - optimality guarantees a break
            raise RuntimeError("assignment refinement failed to complete")
    return MatchAssignment(pairs=pairs, unmatched_slots=free,
                           total_cost=float(sum(cost[i, j] for i, j in pairs)))


def _validate_boxes(boxes: np.ndarray, name: str, reject_degenerate: bool) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    if boxes.ndim != 2 or boxes.shape[1] != 4:
        raise ShapeError(f"{name}: expected (n,4) cxcywh boxes, got {boxes.shape}")
    if reject_degenerate and boxes.shape[0] and (boxes[:, 2:] <= 0).any():
        raise ValueError(f"{name}: degenerate box with non-positive extent")
    return boxes


def _corners(boxes: np.ndarray) -> tuple[np.ndarray, ...]:
    cx, cy, w, h = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2


def giou_matrix(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Pairwise generalized IoU for cxcywh boxes, values in (-1, 1]."""
    pred = _validate_boxes(pred, "pred boxes", reject_degenerate=False)
    gt = _validate_boxes(gt, "gt boxes", reject_degenerate=True)
    px0, py0, px1, py1 = (c[:, None] for c in _corners(pred))
    gx0, gy0, gx1, gy1 = _corners(gt)
    iw = np.maximum(np.minimum(px1, gx1) - np.maximum(px0, gx0), 0.0)
    ih = np.maximum(np.minimum(py1, gy1) - np.maximum(py0, gy0), 0.0)
    inter = iw * ih
    area_p = ((px1 - px0) * (py1 - py0))
    area_g = ((gx1 - gx0) * (gy1 - gy0))
    union = area_p + area_g - inter
    hull = (np.maximum(px1, gx1) - np.minimum(px0, gx0)) * \
           (np.maximum(py1, gy1) - np.minimum(py0, gy0))
    return inter / union - (hull - union) / hull


def iou_matrix(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    pred = _validate_boxes(pred, "pred boxes", reject_degenerate=False)
    gt = _validate_boxes(gt, "gt boxes", reject_degenerate=True)
    px0, py0, px1, py1 = (c[:, None] for c in _corners(pred))
    gx0, gy0, gx1, gy1 = _corners(gt)
    iw = np.maximum(np.minimum(px1, gx1) - np.maximum(px0, gx0), 0.0)
    ih = np.maximum(np.minimum(py1, gy1) - np.maximum(py0, gy0), 0.0)
    inter = iw * ih
    union = (px1 - px0) * (py1 - py0) + (gx1 - gx0) * (gy1 - gy0) - inter
    return inter / union


def box_cost(pred: np.ndarray, gt: np.ndarray, l1_weight: float = 5.0,
             giou_weight: float = 2.0) -> np.ndarray:
    """Assignment cost mirroring the box loss: weighted L1 plus (1 - GIoU)."""
    pred = _validate_boxes(pred, "pred boxes", reject_degenerate=False)
    gt = _validate_boxes(gt, "gt boxes", reject_degenerate=True)
    l1 = np.abs(pred[:, None, :] - gt[None, :, :]).sum(axis=2)
    return l1_weight * l1 + giou_weight * (1.0 - giou_matrix(pred, gt))


def _minimum(a: Tensor, b: Tensor) -> Tensor:
    return T.sub(b, T.relu(T.sub(b, a)))


def _maximum(a: Tensor, b: Tensor) -> Tensor:
    return T.add(a, T.relu(T.sub(b, a)))


def _corners_t(boxes: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    cx = T.slice_cols(boxes, 0, 1)
    cy = T.slice_cols(boxes, 1, 2)
    w = T.slice_cols(boxes, 2, 3)
    h = T.slice_cols(boxes, 3, 4)
    return (T.sub(cx, T.mul(w, 0.5)), T.sub(cy, T.mul(h, 0.5)),
            T.add(cx, T.mul(w, 0.5)), T.add(cy, T.mul(h, 0.5)))


def giou_pairs(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Row-wise GIoU between matched prediction rows and constant gt rows."""
    if pred.shape != np.asarray(gt).shape:
        raise ShapeError(f"giou_pairs: shapes {pred.shape} vs {np.asarray(gt).shape}")
    gt_t = Tensor(gt)
    px0, py0, px1, py1 = _corners_t(pred)
    gx0, gy0, gx1, gy1 = _corners_t(gt_t)
    iw = T.relu(T.sub(_minimum(px1, gx1), _maximum(px0, gx0)))
    ih = T.relu(T.sub(_minimum(py1, gy1), _maximum(py0, gy0)))
    inter = T.mul(iw, ih)
    area_p = T.mul(T.sub(px1, px0), T.sub(py1, py0))
    area_g = T.mul(T.sub(gx1, gx0), T.sub(gy1, gy0))
    union = T.sub(T.add(area_p, area_g), inter)
    hull = T.mul(T.sub(_maximum(px1, gx1), _minimum(px0, gx0)),
                 T.sub(_maximum(py1, gy1), _minimum(py0, gy0)))
    return T.sub(T.div(inter, union), T.div(T.sub(hull, union), hull))


@dataclass
class FrameTargets:
    """Per-frame supervision extracted from an annotation record."""

    boxes: np.ndarray        # (n_gt, 4) cxcywh, validated non-degenerate
    grid_masks: np.ndarray   # (n_gt, cells) binary, patch-grid resolution
    relevance: np.ndarray    # (n_gt,) 0/1
    instance_ids: list[str]


def match_frame(preds: SlotPredictions, targets: FrameTargets,
                cfg: LossConfig) -> MatchAssignment:
    if targets.boxes.shape[0] == 0:
        return MatchAssignment([], list(range(preds.boxes.shape[0])), 0.0)
    return hungarian_match(box_cost(preds.boxes.data, targets.boxes,
                                    cfg.cost_l1, cfg.cost_giou))


def slot_attn_loss(preds: SlotPredictions, targets: FrameTargets,
                   match: MatchAssignment,
                   cfg: LossConfig) -> tuple[Tensor, dict[str, float]]:
    """Box + objectness + mask supervision for one frame under a fixed match."""
    n_slots = preds.boxes.shape[0]
    obj_target = np.zeros((n_slots, 1))
    for s, _ in match.pairs:
        obj_target[s, 0] = 1.0
    loss_obj = T.bce_logits(preds.objectness, obj_target)
    if match.pairs:
        slot_idx = [s for s, _ in match.pairs]
        gt_idx = [g for _, g in match.pairs]
        pred_rows = T.gather_rows(preds.boxes, slot_idx)
        gt_rows = targets.boxes[gt_idx]
        l1 = T.mean(T.sum_(_abs(T.sub(pred_rows, Tensor(gt_rows))), axis=1))
        giou_term = T.mean(T.sub(1.0, giou_pairs(pred_rows, gt_rows)))
        loss_box = T.add(T.mul(l1, cfg.cost_l1), T.mul(giou_term, cfg.cost_giou))
        mask_rows = T.gather_rows(preds.mask_logits, slot_idx)
        gt_masks = targets.grid_masks[gt_idx]
        if mask_rows.shape != gt_masks.shape:
            raise ShapeError(
                f"mask resolution mismatch: predicted {mask_rows.shape}, "
                f"target {gt_masks.shape}")
        loss_seg = T.bce_logits(mask_rows, gt_masks)
    else:
        loss_box = Tensor(0.0)
        loss_seg = Tensor(0.0)
    total = T.add(T.add(T.mul(loss_box, cfg.lambda_box), T.mul(loss_obj, cfg.lambda_obj)),
                  T.mul(loss_seg, cfg.lambda_seg))
    parts = {"box": loss_box.item(), "obj": loss_obj.item(), "seg": loss_seg.item()}
    return total, parts


def _abs(x: Tensor) -> Tensor:
    return T.add(T.relu(x), T.relu(T.neg(x)))


def slot_relevance_labels(match: MatchAssignment, gt_relevance: np.ndarray,
                          n_slots: int) -> np.ndarray:
    """Each slot inherits the relevance flag of its matched object, else 0."""
    labels = np.zeros(n_slots)
    for s, g in match.pairs:
        labels[s] = float(gt_relevance[g])
    return labels


def relevance_loss(pi: Tensor, labels: np.ndarray, w_pos: float = 2.0,
                   w_neg: float = 1.0) -> Tensor:
    """Class-weighted BCE on relevance probabilities, mean over slots."""
    labels = np.asarray(labels, dtype=np.float64).reshape(pi.shape)
    weights = np.where(labels > 0.5, w_pos, w_neg)
    return T.bce(T.clip(pi, 1e-12, 1.0 - 1e-12), labels, weights)


def cosine_rows(x: Tensor) -> Tensor:
    sq = T.sum_(T.mul(x, x), axis=1, keepdims=True)
    return T.div(x, T.sqrt(T.add(sq, 1e-12)))


def track_loss(embeddings: Tensor, labels: np.ndarray, frames: np.ndarray,
               tau: float = 0.1, window: int = 2) -> tuple[Tensor, int, int]:
    """Multi-positive contrastive loss over slot embeddings.

    Positives share an instance label within `window` frames; negatives carry
    a different label (unmatched rows, label -1, are negatives only). Anchors
    without positives are skipped and counted. Returns (loss, anchors, skipped).
    """
    labels = np.asarray(labels)
    frames = np.asarray(frames)
    n = embeddings.shape[0]
    if labels.shape != (n,) or frames.shape != (n,):
        raise ShapeError(f"track_loss: {n} embeddings, {labels.shape} labels, "
                         f"{frames.shape} frames")
    sims = T.mul(T.matmul(cosine_rows(embeddings), T.transpose(cosine_rows(embeddings))),
                 1.0 / tau)
    per_anchor: list[Tensor] = []
    skipped = 0
    for a in range(n):
        if labels[a] < 0:
            continue
        same = (labels == labels[a])
        near = np.abs(frames - frames[a]) <= window
        pos = same & near & (frames != frames[a])
        neg = ~same
        if not pos.any():
            skipped += 1
            continue
        row = T.transpose(T.gather_rows(sims, [a]))  # column of similarities
        lse_pos = T.logsumexp_rows(T.transpose(T.gather_rows(row, np.flatnonzero(pos))))
        lse_all = T.logsumexp_rows(T.transpose(T.gather_rows(row, np.flatnonzero(pos | neg))))
        per_anchor.append(T.sub(lse_all, lse_pos))
    if not per_anchor:
        return Tensor(0.0), 0, skipped
    total = per_anchor[0]
    for term in per_anchor[1:]:
        total = T.add(total, term)
    return T.mul(T.sum_(total), 1.0 / len(per_anchor)), len(per_anchor), skipped


class TrackProjection:
    """Optional linear head applied to slots before the similarity (d -> d/2)."""

    def __init__(self, rng: np.random.Generator, width: int):
        self.w = param(rng, width, max(width // 2, 1))

    def params(self) -> ParamGroup:
        g = ParamGroup("track_proj")
        g.add("w", self.w)
        return g

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.w)


def stage1_total(slot_attn: Tensor, track: Tensor, relevance: Tensor,
                 cfg: LossConfig) -> Tensor:
    return T.add(T.add(T.mul(slot_attn, cfg.lambda_slot_attn),
                       T.mul(track, cfg.lambda_track)),
                 T.mul(relevance, cfg.lambda_int))


def action_ce(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Sum of per-step cross-entropies between logit rows and label bins."""
    return T.cross_entropy(logits, labels, reduce="sum")
