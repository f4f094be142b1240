"""Training loop for visual prompts against frozen region features.

Random draws happen in a fixed order so a seed replays a run exactly:

1. prompt initialisation (when the trainer builds the prompts), category by
   category: Gaussian rows, then the fusion draws;
2. three child streams are spawned from the generator: ``order``,
   ``negatives`` and ``noise``;
3. per epoch, one permutation of the images from ``order``;
4. per step, negatives for each category in category order from
   ``negatives``, then one ``(R, N_c)`` Gumbel block per multi-vector visual
   prompt in category order from ``noise`` (``R`` counts the batch's
   proposals, images in batch order).

Separate streams keep shuffling and Gumbel noise identical between runs that
differ only in their dictionaries, so such ablations are paired.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, ImageSample
from .dictionary import DictEntry, SimilarityDictionary, sample_negatives
from .embedding import GaussianPrior
from .errors import ValidationError
from .losses import EQ5_MODES, alignment_loss, iou, localization_loss
from .optim import OptimizerState, adamw_step
from .prompts import VisualPrompt, init_visual_prompt, stochastic_similarity, text_init_prompt
from .scoring import draw_gumbel, soft_select

log = logging.getLogger(__name__)

__all__ = [
    "BatchResult",
    "TrainConfig",
    "TrainReport",
    "batch_objective",
    "end_to_end_gradient_check",
    "initialize_prompts",
    "train_visual_prompts",
]


@dataclass(frozen=True)
class TrainConfig:
    n_vectors: int = 20
    independence: float = 0.99
    neg_probability: float = 0.7
    fusion_probability: float = 0.5
    nms_threshold: float = 0.7
    top_k: int = 50
    neg_max_len: int = 20
    temperature: float = 1.0
    learning_rate: float = 0.1
    epochs: int = 12
    batch_size: int = 16
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    eq5_mode: str = "bce"
    background_negatives: bool = False
    similarity_mode: str = "cosine"
    init: str = "prior"
    use_fusion: bool = True
    logit_bias: float = -4.59511985013459

    def validate(self) -> "TrainConfig":
        for name in ("independence", "neg_probability", "fusion_probability"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value}")
        if self.similarity_mode == "cosine" and not 0.0 <= self.nms_threshold <= 1.0:
            raise ValidationError(f"nms_threshold must lie in [0, 1], got {self.nms_threshold}")
        for name in ("top_k", "neg_max_len", "epochs"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.n_vectors < 1:
            raise ValidationError(f"n_vectors must be >= 1, got {self.n_vectors}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate >= 0.0:
            raise ValidationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not self.temperature > 0.0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")
        if self.eq5_mode not in EQ5_MODES:
            raise ValidationError(f"eq5_mode must be one of {EQ5_MODES}, got {self.eq5_mode!r}")
        if self.similarity_mode not in ("cosine", "dot"):
            raise ValidationError(f"similarity_mode must be 'cosine' or 'dot', got {self.similarity_mode!r}")
        if self.init not in ("prior", "text"):
            raise ValidationError(f"init must be 'prior' or 'text', got {self.init!r}")
        return self

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        kwargs = {}
        for key, value in data.items():
            default = known[key].default
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ValidationError(f"config key {key!r} must be a boolean")
            elif isinstance(default, int):
                if isinstance(value, bool) or not float(value).is_integer():
                    raise ValidationError(f"config key {key!r} must be an integer")
                value = int(value)
            elif isinstance(default, float):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ValidationError(f"config key {key!r} must be a number")
                value = float(value)
            kwargs[key] = value
        return cls(**kwargs).validate()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    prompts: dict
    config: TrainConfig
    seed: int
    loss_curve: list = field(default_factory=list)
    l1_curve: list = field(default_factory=list)
    giou_curve: list = field(default_factory=list)
    steps: int = 0
    wall_clock: float = 0.0


def initialize_prompts(categories: Sequence[str], config: TrainConfig, rng: np.random.Generator,
                       prior: GaussianPrior | None = None, text_embedding=None) -> dict[str, VisualPrompt]:
    """Build one prompt per category: prior sampling (or text copies), then fusion."""
    prompts = {}
    for cat in categories:
        if config.init == "prior":
            if prior is None:
                raise ValidationError("prior initialisation needs a GaussianPrior")
            prompt = init_visual_prompt(prior, config.n_vectors, cat, rng)
        else:
            if text_embedding is None:
                raise ValidationError("text initialisation needs a text embedding")
            prompt = text_init_prompt(text_embedding, config.n_vectors, cat)
        if config.use_fusion:
            prompt = stochastic_similarity(prompt, config.independence, config.fusion_probability, rng)
        prompts[cat] = prompt
    return prompts


@dataclass
class BatchResult:
    loss: float
    grads: list
    logits: np.ndarray


def batch_objective(features: np.ndarray, targets: np.ndarray, blocks: Sequence[np.ndarray],
                    negatives: np.ndarray, noise: Sequence[np.ndarray | None], config: TrainConfig) -> BatchResult:
    """Alignment loss of one batch and its gradient with respect to every prompt block.

    ``features`` is ``(R, C)``; ``targets[r]`` is a category index into
    ``blocks`` or -1; ``negatives`` is ``(D_n, C)``.  With soft selection
    weights ``w`` and ``S = sum_k w_k W_k`` the chain rule gives
    ``dS/dW_m = w_m * (1 + (W_m - S) / tau)`` and ``dW_m/dE_m = F``.
    """
    tau = config.temperature
    d_p = len(blocks)
    d_n = negatives.shape[0]
    n_regions = features.shape[0]
    logits = np.empty((n_regions, d_p + d_n))
    cache = []
    for c, block in enumerate(blocks):
        w = features @ block.T
        if block.shape[0] == 1:
            logits[:, c] = w[:, 0]
            cache.append((w, None))
        else:
            s, weights = soft_select(w, noise[c], tau)
            logits[:, c] = s
            cache.append((w, weights))
    if d_n:
        logits[:, d_p:] = features @ negatives.T
    loss, dlogits = alignment_loss(logits + config.logit_bias, targets, d_p, d_n, mode=config.eq5_mode,
                                   background_negatives=config.background_negatives)
    grads = []
    for c, (w, weights) in enumerate(cache):
        upstream = dlogits[:, c:c + 1]
        if weights is None:
            coef = upstream
        else:
            coef = upstream * weights * (1.0 + (w - logits[:, c:c + 1]) / tau)
        grads.append(coef.T @ features)
    return BatchResult(loss, grads, logits)


def _stack_batch(images: Sequence[ImageSample], index: Mapping[str, int], dim: int):
    feats = [img.features for img in images if img.n_proposals]
    features = np.concatenate(feats, axis=0) if feats else np.zeros((0, dim))
    targets = np.array([index[l] if l is not None else -1 for img in images for l in img.labels], dtype=np.int64)
    return features, targets


def _localization_matches(images: Sequence[ImageSample]):
    """Pair each labelled proposal with the same-category ground truth of highest IoU."""
    preds, gts, matches = [], [], []
    for img in images:
        for p, label in enumerate(img.labels):
            if label is None:
                continue
            candidates = [g for g in img.gt if g.category_id == label]
            if not candidates:
                continue
            best = max(candidates, key=lambda g: iou(img.boxes[p], g.box))
            matches.append((len(preds), len(gts)))
            preds.append(img.boxes[p])
            gts.append(best.box)
    return preds, gts, matches


def _draw_step(dictionaries: Sequence[SimilarityDictionary | None], blocks: Sequence[np.ndarray],
               n_regions: int, dim: int, config: TrainConfig, neg_rng: np.random.Generator,
               noise_rng: np.random.Generator):
    negatives: list[DictEntry] = []
    seen = set()
    for dictionary in dictionaries:
        if dictionary is None:
            continue
        for entry in sample_negatives(dictionary, config.neg_max_len, config.neg_probability, neg_rng):
            if entry.phrase not in seen:
                seen.add(entry.phrase)
                negatives.append(entry)
    neg = np.stack([e.embedding for e in negatives]) if negatives else np.zeros((0, dim))
    noise = [None if b.shape[0] == 1 else draw_gumbel((n_regions, b.shape[0]), noise_rng) for b in blocks]
    return neg, noise


def _validate_inputs(dataset: Dataset, prompts: Mapping[str, VisualPrompt]) -> None:
    if len(dataset) == 0:
        raise ValidationError("training dataset is empty")
    for cat in dataset.categories:
        if cat not in prompts:
            raise ValidationError(f"no visual prompt for category {cat!r}")
        if prompts[cat].dim != dataset.dim:
            raise ValidationError(f"prompt for {cat!r} has dimension {prompts[cat].dim}, dataset has {dataset.dim}")


def train_visual_prompts(dataset: Dataset, dictionaries: Mapping[str, SimilarityDictionary] | None,
                         config: TrainConfig, rng: np.random.Generator,
                         prompts: Mapping[str, VisualPrompt] | None = None,
                         prior: GaussianPrior | None = None, text_embedding=None) -> TrainReport:
    """Optimise one visual prompt per dataset category with AdamW.

    Only prompt vectors change; features, boxes and dictionaries are read
    only.  Localisation terms are logged per epoch but carry no gradient.
    """
    config.validate()
    started = time.perf_counter()
    if prompts is None:
        prompts = initialize_prompts(dataset.categories, config, rng, prior=prior, text_embedding=text_embedding)
    _validate_inputs(dataset, prompts)
    dictionaries = dictionaries or {}
    categories = dataset.categories
    index = {c: i for i, c in enumerate(categories)}
    dicts = [dictionaries.get(c) for c in categories]
    blocks = [np.array(prompts[c].vectors) for c in categories]
    state = OptimizerState.for_params(blocks, beta1=config.beta1, beta2=config.beta2,
                                      eps=config.eps, weight_decay=config.weight_decay)
    report = TrainReport(prompts={}, config=config, seed=config.seed)
    n_images = len(dataset)
    order_rng, neg_rng, noise_rng = rng.spawn(3)
    for epoch in range(config.epochs):
        order = order_rng.permutation(n_images)
        losses, l1s, gious = [], [], []
        for start in range(0, n_images, config.batch_size):
            batch = [dataset.images[i] for i in order[start:start + config.batch_size]]
            features, targets = _stack_batch(batch, index, dataset.dim)
            neg, noise = _draw_step(dicts, blocks, features.shape[0], dataset.dim, config, neg_rng, noise_rng)
            result = batch_objective(features, targets, blocks, neg, noise, config)
            blocks, state = adamw_step(blocks, result.grads, state, config.learning_rate)
            losses.append(result.loss)
            l1, g = localization_loss(*_localization_matches(batch))
            l1s.append(l1)
            gious.append(g)
            report.steps += 1
        report.loss_curve.append(float(np.mean(losses)))
        report.l1_curve.append(float(np.mean(l1s)))
        report.giou_curve.append(float(np.mean(gious)))
        log.info("epoch %d/%d  alignment %.6f  l1 %.4f  giou %.4f", epoch + 1, config.epochs,
                 report.loss_curve[-1], report.l1_curve[-1], report.giou_curve[-1])
    report.prompts = {
        c: prompts[c].with_vectors(b, trained_epochs=config.epochs, logit_bias=config.logit_bias)
        for c, b in zip(categories, blocks)
    }
    report.wall_clock = time.perf_counter() - started
    return report


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-300:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def end_to_end_gradient_check(dataset: Dataset, config: TrainConfig, prompts: Mapping[str, VisualPrompt],
                              dictionaries: Mapping[str, SimilarityDictionary] | None = None,
                              rng: np.random.Generator | None = None, h: float = 1e-6) -> float:
    """Worst per-prompt relative error between analytic and central-difference gradients.

    The whole slice is one batch; negatives and Gumbel noise are drawn once
    and held fixed while the prompt entries are perturbed.
    """
    _validate_inputs(dataset, prompts)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    categories = dataset.categories
    index = {c: i for i, c in enumerate(categories)}
    blocks = [np.array(prompts[c].vectors) for c in categories]
    features, targets = _stack_batch(dataset.images, index, dataset.dim)
    dicts = [(dictionaries or {}).get(c) for c in categories]
    neg, noise = _draw_step(dicts, blocks, features.shape[0], dataset.dim, config, rng, rng)
    analytic = batch_objective(features, targets, blocks, neg, noise, config).grads
    worst = 0.0
    for c, block in enumerate(blocks):
        numeric = np.zeros_like(block)
        for idx in np.ndindex(block.shape):
            plus = [b.copy() for b in blocks]
            minus = [b.copy() for b in blocks]
            plus[c][idx] += h
            minus[c][idx] -= h
            f_plus = batch_objective(features, targets, plus, neg, noise, config).loss
            f_minus = batch_objective(features, targets, minus, neg, noise, config).loss
            numeric[idx] = (f_plus - f_minus) / (2.0 * h)
        worst = max(worst, _relative_error(analytic[c], numeric))
    return worst
