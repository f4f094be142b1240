"""Region-versus-prompt scoring and the frozen detector surrogate.

For region feature ``F`` and a slot holding vectors ``E_1..E_N`` the
similarity vector is ``W = E @ F``.  Training collapses ``W`` to a category
logit through a soft Gumbel-softmax selection,
``S = sum_k softmax((W + g) / tau)_k * W_k``; evaluation takes ``max(W)``.
Negative text prompts are one-vector slots, so both rules return the single
similarity unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ImageSample
from .embedding import as_embedding, as_embedding_matrix
from .errors import DimensionMismatchError, ValidationError
from .losses import sigmoid
from .prompts import VisualPrompt

__all__ = [
    "CategorySlot",
    "DetectionResult",
    "detector_forward",
    "draw_gumbel",
    "score_eval",
    "score_slots",
    "score_train",
    "similarity_vector",
    "soft_select",
]

MODES = ("train", "eval")


@dataclass(frozen=True)
class CategorySlot:
    kind: str  # "visual" or "negative"
    category_id: str
    vectors: np.ndarray

    def __post_init__(self):
        if self.kind not in ("visual", "negative"):
            raise ValidationError(f"slot kind must be 'visual' or 'negative', got {self.kind!r}")
        vectors = as_embedding_matrix(np.atleast_2d(self.vectors))
        if self.kind == "negative" and vectors.shape[0] != 1:
            raise ValidationError("a negative text slot holds exactly one embedding")
        object.__setattr__(self, "vectors", vectors)

    @classmethod
    def visual(cls, prompt: VisualPrompt) -> "CategorySlot":
        return cls("visual", prompt.category_id, prompt.vectors)

    @classmethod
    def negative(cls, phrase: str, embedding) -> "CategorySlot":
        return cls("negative", phrase, as_embedding(embedding)[None, :])

    @property
    def n_vectors(self) -> int:
        return self.vectors.shape[0]


def similarity_vector(region_feature, prompt) -> np.ndarray:
    vectors = prompt.vectors if hasattr(prompt, "vectors") else np.atleast_2d(prompt)
    feature = np.asarray(region_feature, dtype=np.float64)
    if feature.ndim != 1 or feature.size != vectors.shape[1]:
        raise DimensionMismatchError(
            f"region feature dimension {feature.size} != prompt dimension {vectors.shape[1]}"
        )
    return vectors @ feature


def draw_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    return rng.gumbel(size=shape)


def soft_select(w: np.ndarray, g: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise ``S`` and softmax weights for ``(..., N)`` similarities and noise."""
    z = (w + g) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    weights = e / e.sum(axis=-1, keepdims=True)
    return (weights * w).sum(axis=-1), weights


def score_train(w, tau: float, rng: np.random.Generator) -> tuple[float, np.ndarray]:
    if tau <= 0:
        raise ValidationError(f"temperature must be > 0, got {tau}")
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size == 0:
        raise ValidationError("similarity vector is empty")
    if w.size == 1:
        return float(w[0]), np.ones(1)
    s, weights = soft_select(w, draw_gumbel(w.shape, rng), tau)
    return float(s), weights


def score_eval(w) -> float:
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size == 0:
        raise ValidationError("similarity vector is empty")
    return float(w.max())


@dataclass
class DetectionResult:
    """Scores of every proposal against every slot.

    ``similarities[c]`` is the ``(P, N_c)`` matrix ``W`` for slot ``c``;
    ``weights[c]`` the matching softmax weights (train mode only).
    """

    image_id: str
    boxes: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray
    similarities: list
    weights: list | None = None


def score_slots(features: np.ndarray, slots: Sequence[CategorySlot], mode: str, tau: float,
                noise: Sequence[np.ndarray | None] | None = None, rng: np.random.Generator | None = None):
    """Score a ``(R, C)`` block of region features against every slot.

    In train mode Gumbel noise is either supplied (one ``(R, N_c)`` array per
    slot, ``None`` for one-vector slots) or drawn from ``rng`` slot by slot in
    slot order.  One-vector slots never consume noise.  Returns
    ``(logits (R, n_slots), similarities, weights, noise)``.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    if not slots:
        raise ValidationError("detector_forward needs at least one category slot")
    if mode == "train" and tau <= 0:
        raise ValidationError(f"temperature must be > 0, got {tau}")
    features = np.asarray(features, dtype=np.float64)
    n_regions = features.shape[0]
    logits = np.empty((n_regions, len(slots)))
    sims, weights, used_noise = [], [], []
    for c, slot in enumerate(slots):
        if slot.vectors.shape[1] != features.shape[1]:
            raise DimensionMismatchError(
                f"slot {slot.category_id!r} has dimension {slot.vectors.shape[1]}, features have {features.shape[1]}"
            )
        w = features @ slot.vectors.T
        sims.append(w)
        if mode == "eval":
            logits[:, c] = w.max(axis=1) if n_regions else 0.0
            continue
        if slot.n_vectors == 1:
            logits[:, c] = w[:, 0]
            weights.append(np.ones_like(w))
            used_noise.append(None)
            continue
        if noise is not None:
            g = noise[c]
        elif rng is not None:
            g = draw_gumbel(w.shape, rng)
        else:
            raise ValidationError("train mode needs an rng or pre-drawn noise")
        s, wt = soft_select(w, g, tau)
        logits[:, c] = s
        weights.append(wt)
        used_noise.append(g)
    if mode == "eval":
        return logits, sims, None, None
    return logits, sims, weights, used_noise


def detector_forward(image: ImageSample, slots: Sequence[CategorySlot], mode: str = "eval",
                     tau: float = 1.0, rng: np.random.Generator | None = None) -> DetectionResult:
    """Frozen-detector surrogate: proposal boxes pass through untouched."""
    logits, sims, weights, _ = score_slots(image.features, slots, mode, tau, rng=rng)
    return DetectionResult(
        image_id=image.image_id,
        boxes=image.boxes,
        logits=logits,
        probabilities=sigmoid(logits),
        similarities=sims,
        weights=weights,
    )
