"""White-box rate-reduction networks with exact class-incremental merging.

Networks are constructed layer by layer as projected-gradient-ascent steps on
the rate-reduction objective; a trained network can absorb new classes
without old data, producing the same parameters joint construction would.
"""

from .builder import build_redunet, layer_forward_train
from .classifier import ClassSubspaces, classify, classify_batch, evaluate, fit_subspaces
from .errors import (
    ChecksumError,
    DegenerateInputError,
    FormatError,
    InconsistentParameterError,
    InvalidInputError,
    NumericalDegradationError,
    NumericalError,
    RedunetError,
    VersionError,
)
from .forward import (
    estimate_membership,
    estimate_membership_batch,
    forward_batch,
    forward_sample,
)
from .merge import TaskBatch, chain_merge, merge_new_task, recover_initial_covariances
from .model import BuildConfig, Layer, ReduNetModel
from .rates import (
    CodingParams,
    LabelAssignment,
    coding_rate,
    compression_matrix,
    compression_rate,
    expansion_matrix,
    normalize_classwise,
    rate_reduction,
    recover_covariance,
)
from .serialize import load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "BuildConfig",
    "ChecksumError",
    "ClassSubspaces",
    "CodingParams",
    "DegenerateInputError",
    "FormatError",
    "InconsistentParameterError",
    "InvalidInputError",
    "LabelAssignment",
    "Layer",
    "NumericalDegradationError",
    "NumericalError",
    "RedunetError",
    "ReduNetModel",
    "TaskBatch",
    "VersionError",
    "build_redunet",
    "chain_merge",
    "classify",
    "classify_batch",
    "coding_rate",
    "compression_matrix",
    "compression_rate",
    "estimate_membership",
    "estimate_membership_batch",
    "evaluate",
    "expansion_matrix",
    "fit_subspaces",
    "forward_batch",
    "forward_sample",
    "layer_forward_train",
    "load_model",
    "merge_new_task",
    "normalize_classwise",
    "rate_reduction",
    "recover_covariance",
    "recover_initial_covariances",
    "save_model",
    "__version__",
]
