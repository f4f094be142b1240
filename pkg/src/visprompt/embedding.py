"""Embedding primitives, Gaussian statistics and seeded sampling.

An embedding is a 1-D ``float64`` numpy array.  Sets of embeddings are passed
either as sequences of such arrays or as a 2-D ``(n, C)`` array; both are
accepted wherever a list is expected.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, ValidationError

__all__ = [
    "GaussianPrior",
    "as_embedding",
    "as_embedding_matrix",
    "cosine",
    "dot",
    "estimate_gaussian_prior",
    "make_rng",
    "mean_of_set",
    "sample_gaussian",
    "spawn_rng",
]


def as_embedding(values, dim: int | None = None) -> np.ndarray:
    """Validate ``values`` as a finite 1-D vector and return a float64 copy."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"embedding must be a non-empty 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.size != dim:
        raise DimensionMismatchError(f"embedding has dimension {arr.size}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("embedding contains non-finite entries")
    return arr


def as_embedding_matrix(embeddings, dim: int | None = None) -> np.ndarray:
    """Stack a non-empty collection of embeddings into a finite ``(n, C)`` array."""
    if isinstance(embeddings, np.ndarray):
        arr = np.array(embeddings, dtype=np.float64)
    else:
        rows = list(embeddings)
        if not rows:
            raise ValidationError("embedding set is empty")
        sizes = {np.shape(r) for r in rows}
        if len(sizes) != 1:
            raise DimensionMismatchError(f"embeddings have mixed shapes: {sorted(sizes)}")
        arr = np.array(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValidationError(f"expected a non-empty (n, C) embedding set, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise DimensionMismatchError(f"embeddings have dimension {arr.shape[1]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("embedding set contains non-finite entries")
    return arr


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ValidationError("dot/cosine operate on 1-D embeddings")
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.size} vs {b.size}")
    return a, b


def dot(a, b) -> float:
    a, b = _pair(a, b)
    return float(a @ b)


def cosine(a, b) -> float:
    a, b = _pair(a, b)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine similarity is undefined for a zero-norm embedding")
    return float((a @ b) / (na * nb))


@dataclass(frozen=True)
class GaussianPrior:
    """Per-dimension Normal prior; ``sigma`` is a standard deviation."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = as_embedding(self.mu)
        sigma = as_embedding(self.sigma, dim=mu.size)
        if np.any(sigma < 0):
            raise ValidationError("prior standard deviations must be >= 0")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.size


def estimate_gaussian_prior(embeddings) -> GaussianPrior:
    """Per-dimension mean and population standard deviation (divides by B)."""
    arr = as_embedding_matrix(embeddings)
    return GaussianPrior(mu=arr.mean(axis=0), sigma=arr.std(axis=0, ddof=0))


def sample_gaussian(prior: GaussianPrior, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` embeddings, entry ``d`` from Normal(mu_d, sigma_d^2).

    Returns an ``(n, C)`` array.  Dimensions with zero sigma reproduce ``mu``
    exactly.
    """
    if n < 1:
        raise ValidationError(f"sample count must be >= 1, got {n}")
    z = rng.standard_normal((n, prior.dim))
    return prior.mu + z * prior.sigma


def mean_of_set(embeddings) -> np.ndarray:
    return as_embedding_matrix(embeddings).mean(axis=0)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def spawn_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent child generator for parallel callers (seed + stream index)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))
