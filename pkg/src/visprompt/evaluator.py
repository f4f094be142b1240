"""COCO-style detection metrics and the combined-inference protocol.

AP uses greedy matching (each detection, best score first, takes the unmatched
same-image ground truth of highest IoU at or above the threshold) and
101-point interpolated precision.  Categories without ground truth are left
out of every mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, union, validate_box
from .errors import ValidationError
from .losses import iou_matrix, sigmoid
from .prompts import VisualPrompt
from .scoring import CategorySlot, score_slots

__all__ = [
    "IOU_THRESHOLDS",
    "CombinedReport",
    "Detection",
    "EvalReport",
    "average_precision",
    "combined_inference",
    "detect",
    "evaluate",
    "evaluate_prompts",
]

IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class Detection:
    image_id: str
    box: tuple
    category_id: str
    score: float

    def __post_init__(self):
        object.__setattr__(self, "box", tuple(float(v) for v in validate_box(self.box, unit=False)))
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"detection score must lie in [0, 1], got {self.score}")


@dataclass
class EvalReport:
    ap: dict
    map: float
    map50: float
    n_gt: dict
    n_detections: int
    iou_thresholds: tuple = IOU_THRESHOLDS

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "map50": self.map50,
            "iou_thresholds": list(self.iou_thresholds),
            "ap": {c: list(v) for c, v in self.ap.items()},
            "n_gt": dict(self.n_gt),
            "n_detections": self.n_detections,
        }


def _ranked(detections: Sequence[Detection]) -> list[Detection]:
    """Score descending; ties by image id, category, box, then input position."""
    order = sorted(
        range(len(detections)),
        key=lambda i: (-detections[i].score, detections[i].image_id, detections[i].category_id,
                       detections[i].box, i),
    )
    return [detections[i] for i in order]


def _gt_table(gts) -> dict:
    table: dict = {}
    for image_id, category_id, box in gts:
        table.setdefault((image_id, category_id), []).append(np.asarray(box, dtype=np.float64))
    return table


def _overlaps(ranked: Sequence[Detection], table: Mapping, category: str) -> list:
    """IoU of every ranked detection against its image's ground truth of ``category``."""
    out = []
    for det in ranked:
        boxes = table.get((det.image_id, category))
        if boxes is None:
            out.append(None)
            continue
        out.append(iou_matrix(np.asarray([det.box]), np.asarray(boxes))[0])
    return out


def _match(ranked: Sequence[Detection], overlaps: Sequence, threshold: float) -> np.ndarray:
    used: dict = {}
    tp = np.zeros(len(ranked), dtype=bool)
    for d, det in enumerate(ranked):
        row = overlaps[d]
        if row is None:
            continue
        taken = used.setdefault(det.image_id, np.zeros(row.size, dtype=bool))
        candidates = np.where(taken, -1.0, row)
        best = int(np.argmax(candidates))
        if candidates[best] >= threshold:
            taken[best] = True
            tp[d] = True
    return tp


def _interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    if tp.size == 0:
        return 0.0
    tps = np.cumsum(tp)
    fps = np.cumsum(~tp)
    recall = tps / n_gt
    precision = tps / (tps + fps)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
    return float(sampled.mean())


def average_precision(detections: Sequence[Detection], gts, category: str, iou_threshold: float) -> float | None:
    """AP of one category at one IoU threshold; ``None`` when it has no ground truth.

    ``gts`` is an iterable of ``(image_id, category_id, box)``.
    """
    gts = [g for g in gts if g[1] == category]
    if not gts:
        return None
    ranked = _ranked([d for d in detections if d.category_id == category])
    tp = _match(ranked, _overlaps(ranked, _gt_table(gts), category), iou_threshold)
    return _interpolated_ap(tp, len(gts))


def _dataset_gts(dataset: Dataset) -> list:
    return [(img.image_id, inst.category_id, inst.box) for img in dataset.images for inst in img.gt]


def evaluate(detections: Sequence[Detection], dataset: Dataset,
             iou_thresholds: Sequence[float] = IOU_THRESHOLDS) -> EvalReport:
    if len(dataset) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    gts = _dataset_gts(dataset)
    table = _gt_table(gts)
    n_gt = {c: sum(1 for g in gts if g[1] == c) for c in dataset.categories}
    aps = {}
    for category in dataset.categories:
        if n_gt[category] == 0:
            continue
        ranked = _ranked([d for d in detections if d.category_id == category])
        overlaps = _overlaps(ranked, table, category)
        aps[category] = [_interpolated_ap(_match(ranked, overlaps, t), n_gt[category])
                         for t in iou_thresholds]
    if aps:
        grid = np.array(list(aps.values()))
        mean_ap = float(grid.mean())
        first = list(iou_thresholds).index(0.5) if 0.5 in iou_thresholds else 0
        map50 = float(grid[:, first].mean())
    else:
        mean_ap = map50 = 0.0
    return EvalReport(aps, mean_ap, map50, n_gt, len(detections), tuple(iou_thresholds))


def detect(dataset: Dataset, slots: Sequence[CategorySlot], max_per_image: int | None = None) -> list[Detection]:
    """Eval-mode detections: one per (proposal, visual slot), score = sigmoid(max W)."""
    visual = [s for s in slots if s.kind == "visual"]
    out = []
    for img in dataset.images:
        if img.n_proposals == 0:
            continue
        logits, _, _, _ = score_slots(img.features, slots, "eval", 1.0)
        probs = sigmoid(logits)
        dets = [
            Detection(img.image_id, tuple(img.boxes[p]), slot.category_id, float(probs[p, c]))
            for c, slot in enumerate(slots) if slot.kind == "visual"
            for p in range(img.n_proposals)
        ]
        if max_per_image is not None:
            dets = _ranked(dets)[:max_per_image]
        out.extend(dets)
    return out if visual else []


def evaluate_prompts(prompts: Mapping[str, VisualPrompt] | Sequence[VisualPrompt], dataset: Dataset,
                     max_per_image: int | None = None) -> EvalReport:
    items = prompts.values() if isinstance(prompts, Mapping) else prompts
    slots = [CategorySlot.visual(p) for p in items]
    return evaluate(detect(dataset, slots, max_per_image), dataset)


@dataclass
class CombinedReport:
    solo: list
    combined: EvalReport
    drop: float
    drop50: float

    def to_dict(self) -> dict:
        return {
            "solo": [r.to_dict() for r in self.solo],
            "combined": self.combined.to_dict(),
            "drop": self.drop,
            "drop50": self.drop50,
        }


def combined_inference(prompt_sets: Sequence[Mapping[str, VisualPrompt]], datasets: Sequence[Dataset],
                       max_per_image: int | None = None) -> CombinedReport:
    """Evaluate each prompt set on its own split, then all sets together on the union.

    ``drop`` is mean solo mAP minus combined mAP (``drop50`` likewise for mAP50).
    """
    if len(prompt_sets) != len(datasets) or not prompt_sets:
        raise ValidationError("need one dataset per prompt set")
    seen: set = set()
    for prompts in prompt_sets:
        overlap = seen & set(prompts)
        if overlap:
            raise ValidationError(f"category ids shared between prompt sets: {sorted(overlap)}")
        seen |= set(prompts)
    solo = [evaluate_prompts(p, d, max_per_image) for p, d in zip(prompt_sets, datasets)]
    if len(prompt_sets) == 1:
        combined = solo[0]
    else:
        merged = [p for prompts in prompt_sets for p in prompts.values()]
        combined = evaluate_prompts(merged, union(list(datasets)), max_per_image)
    drop = float(np.mean([r.map for r in solo])) - combined.map
    drop50 = float(np.mean([r.map50 for r in solo])) - combined.map50
    return CombinedReport(solo, combined, drop, drop50)
