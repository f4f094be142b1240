"""Deterministic synthetic detection tasks in embedding space.

Each category has a unit-norm archetype, which doubles as the embedding of
its name in the vocabulary.  Object instances are drawn around one of several
appearance modes (unit vectors at a fixed cosine to the archetype), so a
category is multi-modal.  Planted confuser phrases sit at a fixed cosine to
the archetype and also appear in images as unlabelled background objects.
Filler phrases are random directions kept away from every archetype.

Random draws happen in this order: archetypes, mode directions, confuser
directions, fillers, then images (train split before eval split).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping

import numpy as np

from .data import Dataset, GroundTruth, ImageSample
from .dictionary import Vocabulary
from .errors import InfeasibleSpecError, ValidationError

__all__ = ["GeneratedTask", "TestbedSpec", "generate", "make_paired_tasks"]

MAX_ATTEMPTS = 10_000


@dataclass(frozen=True)
class TestbedSpec:
    dim: int = 32
    categories: int = 2
    archetype_separation: float = 0.3
    noise_sigma: float = 0.1
    confusers_per_category: int = 4
    confuser_similarity: float = 0.8
    images: int = 200
    eval_images: int = 100
    proposals_per_image: tuple = (8, 16)
    background_fraction: float = 0.75
    vocab_fillers: int = 200
    modes_per_category: int = 12
    mode_similarity: float = 0.7
    confuser_fraction: float = 0.3
    context_per_instance: int = 3
    context_noise: float = 0.05
    box_jitter: float = 0.05
    seed: int = 0

    __test__ = False  # not a pytest class

    def validate(self) -> "TestbedSpec":
        if self.dim < 2:
            raise ValidationError("dim must be >= 2")
        if self.categories < 1:
            raise ValidationError("need at least one category")
        if not 0.0 <= self.confuser_similarity < 1.0:
            raise ValidationError("confuser_similarity must lie in [0, 1)")
        if not -1.0 <= self.archetype_separation <= 1.0:
            raise ValidationError("archetype_separation must lie in [-1, 1]")
        if not 0.0 < self.mode_similarity <= 1.0:
            raise ValidationError("mode_similarity must lie in (0, 1]")
        for name in ("noise_sigma", "context_noise", "box_jitter"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        for name in ("confusers_per_category", "images", "eval_images", "vocab_fillers", "context_per_instance"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.modes_per_category < 1 or self.context_per_instance < 1:
            raise ValidationError("modes_per_category and context_per_instance must be >= 1")
        lo, hi = self.proposals_per_image
        if not 1 <= lo <= hi:
            raise ValidationError("proposals_per_image must be a range 1 <= lo <= hi")
        for name in ("background_fraction", "confuser_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")
        return self

    @classmethod
    def from_dict(cls, data: Mapping) -> "TestbedSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown testbed keys: {unknown}")
        data = dict(data)
        if "proposals_per_image" in data:
            data["proposals_per_image"] = tuple(data["proposals_per_image"])
        return cls(**data).validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["proposals_per_image"] = list(self.proposals_per_image)
        return d


@dataclass
class GeneratedTask:
    dataset: Dataset
    eval_dataset: Dataset
    vocabulary: Vocabulary
    planting: dict = field(default_factory=dict)


@dataclass
class _World:
    names: list
    archetypes: np.ndarray
    modes: list  # per category, (M, C)
    confusers: list  # per category, list of (phrase, embedding)
    fillers: list  # list of (phrase, embedding)

    def vocabulary(self) -> Vocabulary:
        phrases = list(self.names)
        rows = list(self.archetypes)
        for conf in self.confusers:
            phrases.extend(p for p, _ in conf)
            rows.extend(e for _, e in conf)
        phrases.extend(p for p, _ in self.fillers)
        rows.extend(e for _, e in self.fillers)
        return Vocabulary(tuple(phrases), np.array(rows))


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _orthogonal_direction(rng: np.random.Generator, dim: int, against: list) -> np.ndarray:
    """Random unit vector orthogonal to ``against`` (best effort once they span the space)."""
    basis = np.linalg.qr(np.array(against).T)[0].T if against else np.zeros((0, dim))
    for _ in range(MAX_ATTEMPTS):
        v = rng.standard_normal(dim)
        if basis.shape[0] < dim:
            v = v - basis.T @ (basis @ v)
        n = np.linalg.norm(v)
        if n > 1e-8:
            return v / n
    raise InfeasibleSpecError("could not draw an orthogonal direction")


def _draw_world(spec: TestbedSpec, rng: np.random.Generator, pair_similarity: float | None = None) -> _World:
    dim = spec.dim
    archetypes: list = []
    for c in range(spec.categories):
        if c == 1 and pair_similarity is not None:
            v = _orthogonal_direction(rng, dim, archetypes)
            archetypes.append(pair_similarity * archetypes[0] + math.sqrt(1.0 - pair_similarity ** 2) * v)
            continue
        for _ in range(MAX_ATTEMPTS):
            cand = _unit(rng.standard_normal(dim))
            if all(cand @ a <= spec.archetype_separation for a in archetypes):
                archetypes.append(cand)
                break
        else:
            raise InfeasibleSpecError(
                f"cannot place {spec.categories} archetypes in dimension {dim} with pairwise cosine "
                f"<= archetype_separation={spec.archetype_separation}"
            )
    names = [f"cat{c}" for c in range(spec.categories)]

    budget = spec.categories + spec.modes_per_category + spec.confusers_per_category
    modes, mode_dirs = [], []
    for c, arch in enumerate(archetypes):
        dirs: list = []
        if spec.modes_per_category == 1:
            modes.append(arch[None, :].copy())
        else:
            s = math.sqrt(1.0 - spec.mode_similarity ** 2)
            rows = []
            for _ in range(spec.modes_per_category):
                against = archetypes + dirs if budget <= dim else archetypes
                u = _orthogonal_direction(rng, dim, against)
                dirs.append(u)
                rows.append(spec.mode_similarity * arch + s * u)
            modes.append(np.array(rows))
        mode_dirs.append(dirs)

    confusers = []
    s = math.sqrt(1.0 - spec.confuser_similarity ** 2)
    for c, arch in enumerate(archetypes):
        dirs: list = []
        conf = []
        for j in range(spec.confusers_per_category):
            against = archetypes + mode_dirs[c] + dirs if budget <= dim else archetypes
            v = _orthogonal_direction(rng, dim, against)
            dirs.append(v)
            conf.append((f"{names[c]}/confuser{j}", spec.confuser_similarity * arch + s * v))
        confusers.append(conf)

    fillers = []
    for f in range(spec.vocab_fillers):
        for _ in range(MAX_ATTEMPTS):
            cand = _unit(rng.standard_normal(dim))
            if all(cand @ a <= spec.archetype_separation for a in archetypes):
                fillers.append((f"filler{f:04d}", cand))
                break
        else:
            raise InfeasibleSpecError(
                f"cannot draw fillers with cosine <= archetype_separation={spec.archetype_separation} "
                f"to every archetype in dimension {dim}"
            )
    return _World(names, np.array(archetypes), modes, confusers, fillers)


def _random_box(rng: np.random.Generator) -> np.ndarray:
    w, h = rng.uniform(0.1, 0.4, size=2)
    x1 = rng.uniform(0.0, 1.0 - w)
    y1 = rng.uniform(0.0, 1.0 - h)
    return np.array([x1, y1, x1 + w, y1 + h])


def _jitter(box: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    w = box[2] - box[0]
    h = box[3] - box[1]
    out = box + rng.standard_normal(4) * scale * np.array([w, h, w, h])
    out = np.clip(out, 0.0, 1.0)
    if out[2] - out[0] < 0.25 * w or out[3] - out[1] < 0.25 * h:
        return box.copy()
    return out


def _draw_images(world: _World, spec: TestbedSpec, labelled: list, count: int, prefix: str,
                 rng: np.random.Generator, cross: list | None = None, cross_rate: float = 0.0):
    """Draw ``count`` images whose labelled objects come from category indices ``labelled``.

    ``cross`` lists category indices planted as unlabelled objects in a
    ``cross_rate`` fraction of images.  Returns images and per-proposal sources.
    """
    dim = spec.dim
    lo, hi = spec.proposals_per_image
    images, sources = [], {}
    confuser_pool = [(c, j) for c in labelled for j in range(len(world.confusers[c]))]
    for n in range(count):
        image_id = f"{prefix}{n:05d}"
        total = int(rng.integers(lo, hi + 1))
        n_objects = max(1, total - int(round(total * spec.background_fraction)))
        feats, boxes, labels, src, gts = [], [], [], [], []
        for _ in range(n_objects):
            c = labelled[int(rng.integers(len(labelled)))]
            m = int(rng.integers(world.modes[c].shape[0]))
            feat = world.modes[c][m] + spec.noise_sigma * rng.standard_normal(dim)
            gt_box = _random_box(rng)
            context = feat + spec.context_noise * rng.standard_normal((spec.context_per_instance, dim))
            gts.append(GroundTruth(world.names[c], gt_box, context))
            feats.append(feat)
            boxes.append(_jitter(gt_box, spec.box_jitter, rng))
            labels.append(world.names[c])
            src.append(f"{world.names[c]}#mode{m}")
        if cross and rng.random() < cross_rate:
            c = cross[int(rng.integers(len(cross)))]
            m = int(rng.integers(world.modes[c].shape[0]))
            feats.append(world.modes[c][m] + spec.noise_sigma * rng.standard_normal(dim))
            boxes.append(_random_box(rng))
            labels.append(None)
            src.append(f"cross:{world.names[c]}#mode{m}")
        for _ in range(total - n_objects):
            if confuser_pool and rng.random() < spec.confuser_fraction:
                c, j = confuser_pool[int(rng.integers(len(confuser_pool)))]
                phrase, emb = world.confusers[c][j]
            elif world.fillers:
                phrase, emb = world.fillers[int(rng.integers(len(world.fillers)))]
            else:
                phrase, emb = "noise", np.zeros(dim)
            feats.append(emb + spec.noise_sigma * rng.standard_normal(dim))
            boxes.append(_random_box(rng))
            labels.append(None)
            src.append(phrase)
        images.append(ImageSample(image_id, np.array(feats), np.array(boxes), tuple(labels), tuple(gts)))
        sources[image_id] = src
    return images, sources


def _planting(world: _World, categories: list, sources: dict) -> dict:
    return {
        "archetypes": {world.names[c]: world.names[c] for c in categories},
        "confusers": {world.names[c]: [p for p, _ in world.confusers[c]] for c in categories},
        "sources": sources,
    }


def generate(spec: TestbedSpec, rng: np.random.Generator | None = None) -> GeneratedTask:
    spec.validate()
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    world = _draw_world(spec, rng)
    cats = list(range(spec.categories))
    train, train_src = _draw_images(world, spec, cats, spec.images, "train-", rng)
    evals, eval_src = _draw_images(world, spec, cats, spec.eval_images, "eval-", rng)
    names = tuple(world.names)
    return GeneratedTask(
        dataset=Dataset(spec.dim, names, tuple(train)),
        eval_dataset=Dataset(spec.dim, names, tuple(evals)),
        vocabulary=world.vocabulary(),
        planting=_planting(world, cats, {**train_src, **eval_src}),
    )


def make_paired_tasks(spec: TestbedSpec, rng: np.random.Generator | None = None,
                      cross_plant_rate: float = 0.6,
                      pair_similarity: float | None = None) -> tuple[GeneratedTask, GeneratedTask]:
    """Two single-category tasks sharing one embedding world.

    Task A labels only category 0 and task B only category 1; each task's
    images carry unlabelled objects of the other category in a
    ``cross_plant_rate`` fraction of images.
    """
    spec.validate()
    if spec.categories < 2:
        raise ValidationError("paired tasks need at least two categories")
    if not 0.0 <= cross_plant_rate <= 1.0:
        raise ValidationError("cross_plant_rate must lie in [0, 1]")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    world = _draw_world(spec, rng, pair_similarity)
    vocab = world.vocabulary()
    tasks = []
    for own, other, tag in ((0, 1, "A"), (1, 0, "B")):
        train, train_src = _draw_images(world, spec, [own], spec.images, f"{tag}-train-", rng,
                                        cross=[other], cross_rate=cross_plant_rate)
        evals, eval_src = _draw_images(world, spec, [own], spec.eval_images, f"{tag}-eval-", rng,
                                       cross=[other], cross_rate=cross_plant_rate)
        names = (world.names[own],)
        tasks.append(GeneratedTask(
            dataset=Dataset(spec.dim, names, tuple(train)),
            eval_dataset=Dataset(spec.dim, names, tuple(evals)),
            vocabulary=vocab,
            planting={**_planting(world, [own], {**train_src, **eval_src}), "cross_category": world.names[other]},
        ))
    return tasks[0], tasks[1]
