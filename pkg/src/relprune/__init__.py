"""Relevance-guided structured filter pruning for small sequential CNNs."""

from ._kernels import ACTIVE as _ACTIVE_KERNELS
from .lrp import LrpConfig, RelevanceMap, relevance_aggregate, relevance_single
from .metrics import ClassAccuracy, CurveRecord, auc_lowest_class, harmonic_mean, per_class_accuracy
from .nn import (
    BatchNorm2D,
    Conv2D,
    Dense,
    Flatten,
    GlobalAvgPool,
    MaxPool2D,
    ModelGraph,
    ReLU,
    backward,
    fold_batchnorm,
    forward,
)
from .pruning import PruneMaskDelta, boost_low_relevance, compact, count_to_prune, filter_pruner
from .strategies import SdDpxConfig, best_model_choice, run_dpx, run_px, run_sd_dpx

KERNEL_BACKEND = _ACTIVE_KERNELS.name

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "BatchNorm2D",
    "ClassAccuracy",
    "Conv2D",
    "CurveRecord",
    "Dense",
    "Flatten",
    "GlobalAvgPool",
    "LrpConfig",
    "MaxPool2D",
    "ModelGraph",
    "PruneMaskDelta",
    "ReLU",
    "RelevanceMap",
    "SdDpxConfig",
    "auc_lowest_class",
    "backward",
    "best_model_choice",
    "boost_low_relevance",
    "compact",
    "count_to_prune",
    "filter_pruner",
    "fold_batchnorm",
    "forward",
    "harmonic_mean",
    "per_class_accuracy",
    "relevance_aggregate",
    "relevance_single",
    "run_dpx",
    "run_px",
    "run_sd_dpx",
]
