"""Alignment loss with analytic gradients, and box losses for monitoring."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import validate_box
from .errors import ValidationError

__all__ = [
    "EQ5_MODES",
    "alignment_loss",
    "giou",
    "iou",
    "iou_matrix",
    "localization_loss",
    "log_sigmoid",
    "sigmoid",
]

# "bce": full binary cross-entropy per category.
# "positive_only": only the y*log(sigmoid) term, as the formula is printed.
EQ5_MODES = ("bce", "positive_only")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


def log_sigmoid(x):
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


def alignment_loss(
    scores,
    targets,
    d_p: int,
    d_n: int,
    mode: str = "bce",
    background_negatives: bool = False,
) -> tuple[float, np.ndarray]:
    """Sigmoid alignment loss over a batch of regions.

    ``scores`` is ``(R, d_p + d_n)``: visual-prompt columns first, then the
    negative text prompts.  ``targets[r]`` is the matched visual-prompt
    column for region ``r`` or ``-1`` for background.

    A matched region contributes a term for every column (negative text
    prompts carry target 0), averaged over ``d_p + d_n``.  A background
    region contributes only the ``d_p`` visual-prompt columns, averaged over
    ``d_p``, because a negative phrase may describe something genuinely
    present but unlabelled.  ``background_negatives=True`` scores background
    regions against every column instead.  The batch loss is the mean over
    regions.  Returns the loss and its gradient with respect to ``scores``.
    """
    if mode not in EQ5_MODES:
        raise ValidationError(f"eq5 mode must be one of {EQ5_MODES}, got {mode!r}")
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if d_p < 1 or d_n < 0:
        raise ValidationError(f"need d_p >= 1 and d_n >= 0, got {d_p}, {d_n}")
    width = d_p + d_n
    if scores.ndim != 2 or scores.shape[1] != width:
        raise ValidationError(f"scores must be (R, {width}), got {scores.shape}")
    if scores.shape[0] != targets.size:
        raise ValidationError("scores and targets disagree on the number of regions")
    if np.any(targets >= d_p) or np.any(targets < -1):
        raise ValidationError("targets must be -1 (background) or a visual-prompt index < d_p")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")

    n_regions = scores.shape[0]
    if n_regions == 0:
        return 0.0, np.zeros_like(scores)

    positive = targets >= 0
    y = np.zeros_like(scores)
    y[np.flatnonzero(positive), targets[positive]] = 1.0

    mask = np.ones_like(scores)
    norm = np.full(n_regions, float(width))
    if not background_negatives:
        mask[~positive, d_p:] = 0.0
        norm[~positive] = float(d_p)

    if mode == "bce":
        terms = -(y * log_sigmoid(scores) + (1.0 - y) * log_sigmoid(-scores))
        dterms = sigmoid(scores) - y
    else:
        terms = -y * log_sigmoid(scores)
        dterms = -y * sigmoid(-scores)

    weights = mask / norm[:, None] / n_regions
    loss = float(np.sum(terms * weights))
    return loss, dterms * weights


def _box_pair(a, b):
    return validate_box(a, unit=False), validate_box(b, unit=False)


def _area(box: np.ndarray) -> float:
    return float((box[2] - box[0]) * (box[3] - box[1]))


def _inter_union(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    w = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    h = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = w * h
    return inter, _area(a) + _area(b) - inter


def iou(a, b) -> float:
    a, b = _box_pair(a, b)
    inter, union = _inter_union(a, b)
    return inter / union


def giou(a, b) -> float:
    a, b = _box_pair(a, b)
    inter, union = _inter_union(a, b)
    hull = (max(a[2], b[2]) - min(a[0], b[0])) * (max(a[3], b[3]) - min(a[1], b[1]))
    return inter / union - (hull - union) / hull


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between ``(n, 4)`` and ``(m, 4)`` corner boxes (no validation)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def localization_loss(pred_boxes, gt_boxes, matches: Sequence[tuple[int, int]]) -> tuple[float, float]:
    """Mean corner L1 and mean (1 - GIoU) over matched (pred, gt) index pairs.

    Monitoring only: boxes are frozen, so these terms carry no gradient.
    """
    matches = list(matches)
    if not matches:
        return 0.0, 0.0
    l1 = 0.0
    g = 0.0
    for pi, gi in matches:
        p = np.asarray(pred_boxes[pi], dtype=np.float64)
        t = np.asarray(gt_boxes[gi], dtype=np.float64)
        l1 += float(np.abs(p - t).sum())
        g += 1.0 - giou(p, t)
    return l1 / len(matches), g / len(matches)
