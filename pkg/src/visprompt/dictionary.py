"""Task-specific similarity dictionaries and negative-prompt sampling.

A dictionary holds the vocabulary phrases whose text embeddings sit closest
to a category's pooled context features, with near-duplicates removed by a
greedy NMS over the candidates' self-similarity matrix.  Similarity is cosine
by default; ``mode="dot"`` uses the raw inner product instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset
from .embedding import as_embedding, as_embedding_matrix, mean_of_set
from .errors import DimensionMismatchError, ValidationError

__all__ = [
    "DictEntry",
    "SimilarityDictionary",
    "Vocabulary",
    "build_similarity_dictionary",
    "dedup_nms",
    "pool_query_feature",
    "sample_negatives",
    "top_k_similar",
]

SIMILARITY_MODES = ("cosine", "dot")


@dataclass(frozen=True)
class Vocabulary:
    phrases: tuple
    embeddings: np.ndarray

    def __post_init__(self):
        phrases = tuple(self.phrases)
        if not phrases:
            raise ValidationError("vocabulary is empty")
        if len(set(phrases)) != len(phrases):
            dupes = sorted({p for p in phrases if phrases.count(p) > 1})
            raise ValidationError(f"vocabulary phrases must be unique, duplicated: {dupes[:5]}")
        emb = as_embedding_matrix(self.embeddings)
        if emb.shape[0] != len(phrases):
            raise ValidationError(f"{len(phrases)} phrases but {emb.shape[0]} embeddings")
        emb.setflags(write=False)
        object.__setattr__(self, "phrases", phrases)
        object.__setattr__(self, "embeddings", emb)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return len(self.phrases)

    def embedding(self, phrase: str) -> np.ndarray:
        return self.embeddings[self.phrases.index(phrase)]

    def without(self, exclude: Sequence[str]) -> "Vocabulary":
        drop = set(exclude)
        keep = [i for i, p in enumerate(self.phrases) if p not in drop]
        if not keep:
            raise ValidationError("exclusion list removes the entire vocabulary")
        return Vocabulary(tuple(self.phrases[i] for i in keep), self.embeddings[keep])


@dataclass(frozen=True)
class DictEntry:
    phrase: str
    embedding: np.ndarray
    similarity: float


@dataclass(frozen=True)
class SimilarityDictionary:
    entries: tuple
    k: int
    q: float
    mode: str = "cosine"

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def phrases(self) -> list[str]:
        return [e.phrase for e in self.entries]

    def embeddings(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, 0))
        return np.stack([e.embedding for e in self.entries])


def _check_mode(mode: str) -> None:
    if mode not in SIMILARITY_MODES:
        raise ValidationError(f"similarity mode must be one of {SIMILARITY_MODES}, got {mode!r}")


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValidationError("cosine similarity needs non-zero embeddings")
    return mat / norms


def pool_query_feature(context_features) -> np.ndarray:
    """Average-pool a category's context features into one query feature."""
    return mean_of_set(context_features)


def top_k_similar(query, vocab: Vocabulary, k: int, mode: str = "cosine") -> list[DictEntry]:
    """The ``min(k, B)`` most similar vocabulary entries, best first.

    Ties keep vocabulary order.
    """
    _check_mode(mode)
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    query = as_embedding(query)
    if query.size != vocab.dim:
        raise DimensionMismatchError(f"query dimension {query.size} != vocabulary dimension {vocab.dim}")
    if mode == "cosine":
        qn = np.linalg.norm(query)
        if qn == 0.0:
            raise ValidationError("query feature has zero norm")
        sims = _unit_rows(vocab.embeddings) @ (query / qn)
    else:
        sims = vocab.embeddings @ query
    order = np.argsort(-sims, kind="stable")[:k]
    return [DictEntry(vocab.phrases[i], vocab.embeddings[i], float(sims[i])) for i in order]


def dedup_nms(candidates: Sequence[DictEntry], q: float, mode: str = "cosine", k: int | None = None) -> SimilarityDictionary:
    """Greedy NMS: keep a candidate iff its similarity to every kept one is <= q."""
    _check_mode(mode)
    if not 0.0 <= q <= 1.0 and mode == "cosine":
        raise ValidationError(f"NMS threshold q must lie in [0, 1], got {q}")
    candidates = list(candidates)
    if not candidates:
        return SimilarityDictionary((), k or 0, q, mode)
    mat = np.stack([c.embedding for c in candidates])
    if mode == "cosine":
        mat = _unit_rows(mat)
    pairwise = mat @ mat.T
    kept: list[int] = []
    for i in range(len(candidates)):
        if all(pairwise[i, j] <= q for j in kept):
            kept.append(i)
    return SimilarityDictionary(tuple(candidates[i] for i in kept), k if k is not None else len(candidates), q, mode)


def build_similarity_dictionary(
    dataset: Dataset,
    vocab: Vocabulary,
    category_id: str,
    k: int,
    q: float,
    exclude: Sequence[str] = (),
    mode: str = "cosine",
) -> SimilarityDictionary:
    if vocab.dim != dataset.dim:
        raise DimensionMismatchError(f"vocabulary dimension {vocab.dim} != dataset dimension {dataset.dim}")
    instances = dataset.instances(category_id)
    if not instances:
        raise ValidationError(f"no ground-truth instances of category {category_id!r}")
    context = np.concatenate([inst.context_features for inst in instances], axis=0)
    query = pool_query_feature(context)
    candidates = top_k_similar(query, vocab.without(exclude), k, mode=mode)
    return dedup_nms(candidates, q, mode=mode, k=k)


def sample_negatives(
    dictionary: SimilarityDictionary, z_max: int, p1: float, rng: np.random.Generator
) -> list[DictEntry]:
    """Negative prompts for one training step.

    Draw order is fixed: one uniform for the ``p1`` branch, then (inside the
    branch) the length ``L`` uniform on ``0..min(z_max, len(dictionary))``,
    then ``L`` distinct indices.
    """
    if not 0.0 <= p1 <= 1.0:
        raise ValidationError(f"p1 must lie in [0, 1], got {p1}")
    if z_max < 0:
        raise ValidationError(f"z_max must be >= 0, got {z_max}")
    if rng.random() >= p1:
        return []
    upper = min(z_max, len(dictionary))
    length = int(rng.integers(upper + 1))
    if length == 0:
        return []
    picks = rng.choice(len(dictionary), size=length, replace=False)
    return [dictionary.entries[i] for i in picks]
