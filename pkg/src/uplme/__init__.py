"""Uncertainty-aware heteroscedastic regression over text pairs."""

from .data import (
    DatasetSchema,
    DatasetSplits,
    ExamplePair,
    HashTokenizer,
    augment,
    inject_noise,
    load_dataset,
    make_synthetic_splits,
    tokenize_pair,
)
from .ensemble import EnsembleOutput, ensemble_forward
from .losses import (
    BatchTargets,
    LossWeights,
    alignment_loss,
    beta_nll,
    rescale_labels,
    total_loss,
    variance_penalty,
)
from .metrics import (
    MetricReport,
    noise_separation_auroc,
    regression_metrics,
    uq_metrics,
    welch_t_test,
)
from .model import EncoderConfig, ModelOutput, PairRegressor, TokenizedPair, segment_similarity
from .trainer import RunResult, TrainConfig, evaluate_split, lr_at, multi_seed, train

__version__ = "0.1.0"

__all__ = [
    "BatchTargets",
    "DatasetSchema",
    "DatasetSplits",
    "EncoderConfig",
    "EnsembleOutput",
    "ExamplePair",
    "HashTokenizer",
    "LossWeights",
    "MetricReport",
    "ModelOutput",
    "PairRegressor",
    "RunResult",
    "TokenizedPair",
    "TrainConfig",
    "alignment_loss",
    "augment",
    "beta_nll",
    "ensemble_forward",
    "evaluate_split",
    "inject_noise",
    "load_dataset",
    "lr_at",
    "make_synthetic_splits",
    "multi_seed",
    "noise_separation_auroc",
    "regression_metrics",
    "rescale_labels",
    "segment_similarity",
    "tokenize_pair",
    "total_loss",
    "train",
    "uq_metrics",
    "variance_penalty",
    "welch_t_test",
]
