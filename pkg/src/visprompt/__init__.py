"""Learnable visual prompts for open-set detection on frozen region features."""

from .data import Dataset, GroundTruth, ImageSample
from .dictionary import (
    DictEntry,
    SimilarityDictionary,
    Vocabulary,
    build_similarity_dictionary,
    dedup_nms,
    sample_negatives,
    top_k_similar,
)
from .embedding import GaussianPrior, cosine, dot, estimate_gaussian_prior, make_rng
from .errors import (
    DimensionMismatchError,
    FormatError,
    InfeasibleSpecError,
    ValidationError,
    VersionMismatchError,
    VispromptError,
)
from .evaluator import Detection, EvalReport, average_precision, combined_inference, evaluate, evaluate_prompts
from .losses import alignment_loss, giou, iou, localization_loss
from .optim import OptimizerState, adamw_step
from .prompts import VisualPrompt, init_visual_prompt, stochastic_similarity, text_init_prompt
from .scoring import CategorySlot, detector_forward, score_eval, score_train
from .testbed import GeneratedTask, TestbedSpec, generate, make_paired_tasks
from .trainer import TrainConfig, TrainReport, end_to_end_gradient_check, train_visual_prompts

__version__ = "0.1.0"
