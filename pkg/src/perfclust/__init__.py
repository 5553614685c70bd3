"""Performance based clustering of labelled data and an online weighted ensemble."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Dataset,
    InvalidInputError,
    InvalidStateError,
    LabeledPoint,
    LossKind,
    PbcError,
    UnsupportedLossError,
    dataset_loss,
    point_loss,
)
from .learners import RegressorKind, RegressorSpec, TrainedModel, fit, predict  # noqa: E402
from .clustering import ClusteringResult, PbcConfig, run_pbc  # noqa: E402
from .ensemble import EnsembleState, stream_evaluate  # noqa: E402

__all__ = [
    "ClusteringResult",
    "Dataset",
    "EnsembleState",
    "InvalidInputError",
    "InvalidStateError",
    "LabeledPoint",
    "LossKind",
    "PbcConfig",
    "PbcError",
    "RegressorKind",
    "RegressorSpec",
    "TrainedModel",
    "UnsupportedLossError",
    "dataset_loss",
    "fit",
    "point_loss",
    "predict",
    "run_pbc",
    "stream_evaluate",
]
