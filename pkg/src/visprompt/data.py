"""Dataset carriers: frozen-detector proposals and annotated ground truth.

Boxes are corner format ``(x1, y1, x2, y2)`` in normalised image coordinates.
Each image holds its proposals as arrays (``features`` is ``(P, C)``,
``boxes`` is ``(P, 4)``) plus one category label per proposal, ``None``
meaning background.  All arrays are made read-only on construction.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .embedding import as_embedding_matrix
from .errors import DimensionMismatchError, ValidationError

__all__ = ["Dataset", "GroundTruth", "ImageSample", "union", "validate_box"]


def validate_box(box, *, unit: bool = True) -> np.ndarray:
    arr = np.array(box, dtype=np.float64)
    if arr.shape != (4,) or not np.all(np.isfinite(arr)):
        raise ValidationError(f"box must be 4 finite numbers, got {box!r}")
    x1, y1, x2, y2 = arr
    if not (x1 < x2 and y1 < y2):
        raise ValidationError(f"degenerate box {arr.tolist()} (need x1 < x2 and y1 < y2)")
    if unit and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValidationError(f"box {arr.tolist()} lies outside the unit square")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GroundTruth:
    category_id: str
    box: np.ndarray
    context_features: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "box", _frozen(validate_box(self.box)))
        object.__setattr__(self, "context_features", _frozen(as_embedding_matrix(self.context_features)))


@dataclass(frozen=True)
class ImageSample:
    image_id: str
    features: np.ndarray
    boxes: np.ndarray
    labels: tuple
    gt: tuple

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValidationError(f"image {self.image_id}: proposal features must be (P, C)")
        if feats.shape[0] and not np.all(np.isfinite(feats)):
            raise ValidationError(f"image {self.image_id}: non-finite proposal feature")
        boxes = np.array(self.boxes, dtype=np.float64).reshape(-1, 4)
        if boxes.shape[0] != feats.shape[0] or len(self.labels) != feats.shape[0]:
            raise ValidationError(f"image {self.image_id}: proposal features, boxes and labels differ in length")
        for box in boxes:
            validate_box(box)
        gt = tuple(self.gt)
        for inst in gt:
            if inst.context_features.shape[1] != feats.shape[1]:
                raise DimensionMismatchError(f"image {self.image_id}: context feature dimension mismatch")
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "boxes", _frozen(boxes))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "gt", gt)

    @property
    def n_proposals(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class Dataset:
    """Images plus the task's category table (which fixes category order)."""

    dim: int
    categories: tuple
    images: tuple

    def __post_init__(self):
        categories = tuple(self.categories)
        if len(set(categories)) != len(categories):
            raise ValidationError("duplicate category ids")
        known = set(categories)
        seen_ids = set()
        for img in self.images:
            if img.image_id in seen_ids:
                raise ValidationError(f"duplicate image id {img.image_id!r}")
            seen_ids.add(img.image_id)
            if img.features.shape[1] != self.dim:
                raise DimensionMismatchError(
                    f"image {img.image_id}: features have dimension {img.features.shape[1]}, dataset declares {self.dim}"
                )
            for label in img.labels:
                if label is not None and label not in known:
                    raise ValidationError(f"image {img.image_id}: unknown proposal category {label!r}")
            for inst in img.gt:
                if inst.category_id not in known:
                    raise ValidationError(f"image {img.image_id}: unknown ground-truth category {inst.category_id!r}")
        object.__setattr__(self, "categories", categories)
        object.__setattr__(self, "images", tuple(self.images))

    def __len__(self) -> int:
        return len(self.images)

    def instances(self, category_id: str) -> list[GroundTruth]:
        return [inst for img in self.images for inst in img.gt if inst.category_id == category_id]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(self.dim, self.categories, tuple(self.images[i] for i in indices))

    def checksum(self) -> str:
        """Digest of every array and label, used to prove inputs stay untouched."""
        h = hashlib.sha256()
        for img in self.images:
            h.update(img.image_id.encode())
            h.update(img.features.tobytes())
            h.update(img.boxes.tobytes())
            h.update(repr(img.labels).encode())
            for inst in img.gt:
                h.update(inst.category_id.encode())
                h.update(inst.box.tobytes())
                h.update(inst.context_features.tobytes())
        return h.hexdigest()


def union(datasets: Sequence[Dataset]) -> Dataset:
    """Concatenate datasets sharing a dimension; category tables are merged in order."""
    if not datasets:
        raise ValidationError("cannot take the union of zero datasets")
    dim = datasets[0].dim
    categories: list[str] = []
    images = []
    for ds in datasets:
        if ds.dim != dim:
            raise DimensionMismatchError(f"dataset dimensions differ: {dim} vs {ds.dim}")
        categories.extend(c for c in ds.categories if c not in categories)
        images.extend(ds.images)
    return Dataset(dim, tuple(categories), tuple(images))
