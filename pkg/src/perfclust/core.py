"""Shared domain types, losses and dataset-level loss accounting."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class PbcError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(PbcError, ValueError):
    pass


class InvalidStateError(PbcError, RuntimeError):
    pass


class UnsupportedLossError(PbcError, ValueError):
    pass


class LossKind(str, enum.Enum):
    SQUARED = "squared"
    ABSOLUTE = "absolute"


@dataclass(frozen=True)
class LabeledPoint:
    features: np.ndarray
    target: float

    def __post_init__(self):
        x = np.array(self.features, dtype=float).reshape(-1)
        if x.size < 1:
            raise InvalidInputError("a point needs at least one feature")
        if not np.all(np.isfinite(x)) or not math.isfinite(float(self.target)):
            raise InvalidInputError("point contains non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "target", float(self.target))


class Dataset:
    """An ordered, immutable collection of (features, target) pairs.

    Stored column-wise: ``X`` has shape ``(N, d)`` and ``y`` shape ``(N,)``.
    Both arrays are read-only. Non-finite values are rejected here so nothing
    downstream has to check again.
    """

    __slots__ = ("X", "y")

    def __init__(self, X, y):
        X = np.array(X, dtype=float)
        y = np.array(y, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[1] < 1:
            raise InvalidInputError(f"features must be a 2-d array, got shape {X.shape}")
        if y.ndim != 1:
            raise InvalidInputError("targets must be scalar (a 1-d array)")
        if X.shape[0] != y.shape[0]:
            raise InvalidInputError(
                f"{X.shape[0]} feature rows but {y.shape[0]} targets"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidInputError("dataset contains non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    @classmethod
    def from_points(cls, points: Sequence[LabeledPoint], dimension: int | None = None) -> "Dataset":
        if not points:
            if dimension is None:
                raise InvalidInputError("cannot infer dimension of an empty point list")
            return cls(np.empty((0, dimension)), np.empty(0))
        dims = {p.features.size for p in points}
        if len(dims) != 1 or (dimension is not None and dims != {dimension}):
            raise InvalidInputError(f"points have inconsistent dimensions {sorted(dims)}")
        return cls(np.stack([p.features for p in points]), [p.target for p in points])

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, i: int) -> LabeledPoint:
        return LabeledPoint(self.X[i], self.y[i])

    def __iter__(self) -> Iterable[LabeledPoint]:
        for i in range(len(self)):
            yield self[i]

    def __repr__(self) -> str:
        return f"Dataset(N={len(self)}, d={self.dimension})"

    def subset(self, index) -> "Dataset":
        return Dataset(self.X[index], self.y[index])

    def require_nonempty(self):
        if len(self) == 0:
            raise InvalidInputError("dataset is empty")


def concat(datasets: Sequence[Dataset]) -> Dataset:
    return Dataset(np.concatenate([d.X for d in datasets]), np.concatenate([d.y for d in datasets]))


def as_assignment(labels, n_points: int, k_hat: int) -> np.ndarray:
    """Validate a hard assignment and return it as an int array."""
    labels = np.asarray(labels)
    if labels.shape != (n_points,):
        raise InvalidInputError(f"assignment has shape {labels.shape}, expected ({n_points},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k_hat):
        raise InvalidInputError(f"assignment labels must lie in [0, {k_hat})")
    return labels.astype(np.int64, copy=False)


def elementwise_loss(predictions, targets, kind: LossKind) -> np.ndarray:
    diff = np.asarray(predictions, dtype=float) - np.asarray(targets, dtype=float)
    if kind is LossKind.SQUARED:
        return diff * diff
    if kind is LossKind.ABSOLUTE:
        return np.abs(diff)
    raise UnsupportedLossError(f"unknown loss {kind!r}")


def point_loss(prediction: float, target: float, kind: LossKind = LossKind.SQUARED) -> float:
    if not (math.isfinite(prediction) and math.isfinite(target)):
        raise InvalidInputError("point_loss needs finite inputs")
    return float(elementwise_loss(prediction, target, kind))


def dataset_loss(dataset: Dataset, assignment, models, kind: LossKind = LossKind.SQUARED) -> float:
    """Mean loss of every point under the model of the cluster it is assigned to."""
    from .learners import predict_many

    dataset.require_nonempty()
    labels = as_assignment(assignment, len(dataset), len(models))
    per_point = np.empty(len(dataset))
    for k, model in enumerate(models):
        members = labels == k
        if members.any():
            preds = predict_many(model, dataset.X[members])
            per_point[members] = elementwise_loss(preds, dataset.y[members], kind)
    # np.sum reduces pairwise in index order, so the result is reproducible
    return float(np.sum(per_point) / len(dataset))
