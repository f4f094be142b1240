"""Visual prompt construction.

A visual prompt is an ``(N, C)`` block of learnable vectors standing in for one
category.  Construction is Gaussian sampling from a vocabulary prior followed
by the stochastic similarity layer: each row is fused with a randomly chosen
donor row and the block mean is then restored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .embedding import GaussianPrior, as_embedding, as_embedding_matrix, sample_gaussian
from .errors import ValidationError

__all__ = [
    "VisualPrompt",
    "fuse_rows",
    "init_visual_prompt",
    "stochastic_similarity",
    "text_init_prompt",
]


@dataclass(frozen=True)
class VisualPrompt:
    category_id: str
    vectors: np.ndarray
    params_used: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        vectors = as_embedding_matrix(self.vectors)
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "params_used", dict(self.params_used))

    @property
    def n_vectors(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def with_vectors(self, vectors: np.ndarray, **params) -> "VisualPrompt":
        return VisualPrompt(self.category_id, vectors, {**self.params_used, **params})


def init_visual_prompt(
    prior: GaussianPrior, n_vectors: int, category_id: str, rng: np.random.Generator
) -> VisualPrompt:
    if n_vectors < 1:
        raise ValidationError(f"a visual prompt needs at least one vector, got {n_vectors}")
    rows = sample_gaussian(prior, n_vectors, rng)
    return VisualPrompt(category_id, rows, {"N": n_vectors, "init": "prior"})


def text_init_prompt(text_embedding, n_vectors: int, category_id: str) -> VisualPrompt:
    """Every row is a copy of one text embedding (the text-initialised baseline)."""
    if n_vectors < 1:
        raise ValidationError(f"a visual prompt needs at least one vector, got {n_vectors}")
    row = as_embedding(text_embedding)
    return VisualPrompt(category_id, np.tile(row, (n_vectors, 1)), {"N": n_vectors, "init": "text"})


def _check_fusion_args(a: float, p2: float) -> None:
    if not 0.0 <= a <= 1.0:
        raise ValidationError(f"independence coefficient a must lie in [0, 1], got {a}")
    if not 0.0 <= p2 <= 1.0:
        raise ValidationError(f"fusion probability p2 must lie in [0, 1], got {p2}")


def fuse_rows(rows: np.ndarray, a: float, p2: float, rng: np.random.Generator) -> np.ndarray:
    """Weighted fusion without the mean correction.

    Rows are visited in order.  For each row one uniform draw decides whether
    it fuses (probability ``p2``); if so a second draw picks the donor
    uniformly among all other indices.  Donors are read from the input
    snapshot, never from already-fused rows.
    """
    _check_fusion_args(a, p2)
    snapshot = np.array(rows, dtype=np.float64)
    out = snapshot.copy()
    n = snapshot.shape[0]
    if n < 2:
        return out
    b = math.sqrt(1.0 - a * a)
    for i in range(n):
        if rng.random() >= p2:
            continue
        j = int(rng.integers(n - 1))
        if j >= i:
            j += 1
        out[i] = a * out[i] + b * snapshot[j]
    return out


def stochastic_similarity(
    prompt: VisualPrompt, a: float, p2: float, rng: np.random.Generator
) -> VisualPrompt:
    """Fuse rows, then shift the block so its per-dimension mean is unchanged."""
    _check_fusion_args(a, p2)
    before = prompt.vectors
    fused = fuse_rows(before, a, p2, rng)
    drift = fused.mean(axis=0) - before.mean(axis=0)
    return prompt.with_vectors(fused - drift, a=a, p2=p2)
