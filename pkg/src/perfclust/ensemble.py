"""Online weighted ensemble over a fixed set of fitted models.

For every incoming batch the ensemble first predicts from the features
alone with the current weights. Once the targets are revealed, the weights
take one gradient step on the batch mean squared error. The weights are
not normalised or projected unless explicitly asked for.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (
    Dataset,
    InvalidInputError,
    InvalidStateError,
    LossKind,
    UnsupportedLossError,
)
from .learners import TrainedModel, predict_many

Batch = Dataset


@dataclass(frozen=True)
class TrajectoryEntry:
    batch_index: int
    weights: tuple
    batch_loss: float

    def to_dict(self) -> dict:
        return {"batch": self.batch_index, "weights": list(self.weights), "loss": self.batch_loss}


@dataclass(frozen=True)
class EnsembleState:
    weights: np.ndarray
    models: tuple
    learning_rate: float
    trajectory: tuple = ()
    project_to_simplex: bool = False

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        object.__setattr__(self, "models", tuple(self.models))
        if w.size != len(self.models) or w.size == 0:
            raise InvalidInputError("need exactly one weight per model")
        if not np.all(np.isfinite(w)):
            raise InvalidStateError("ensemble weights are not finite")
        if self.learning_rate < 0:
            raise InvalidInputError("learning_rate must be >= 0")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def start(cls, models: Sequence[TrainedModel], learning_rate: float, **kwargs) -> "EnsembleState":
        return cls(init_weights(len(models)), models, learning_rate, **kwargs)


def init_weights(k_hat: int) -> np.ndarray:
    if k_hat < 1:
        raise InvalidInputError("k_hat must be >= 1")
    return np.full(k_hat, 1.0 / k_hat)


def model_outputs(models, X) -> np.ndarray:
    """Matrix of shape (n, K) whose row i holds every model's prediction for x_i."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.column_stack([predict_many(m, X) for m in models])


def ensemble_predict(state: EnsembleState, features) -> float:
    features = np.asarray(features, dtype=float).reshape(1, -1)
    return float(model_outputs(state.models, features)[0] @ state.weights)


def predict_batch(state: EnsembleState, features) -> np.ndarray:
    """First phase of a batch: predictions from the features only."""
    return model_outputs(state.models, features) @ state.weights


def batch_gradient(state: EnsembleState, batch: Batch, predictions, loss: LossKind = LossKind.SQUARED) -> np.ndarray:
    """Gradient of the batch mean squared error with respect to the weights.

    Equals ``(2 / n) * G^T (predictions - y)`` where row i of ``G`` holds the
    model outputs for point i.
    """
    if LossKind(loss) is not LossKind.SQUARED:
        raise UnsupportedLossError("ensemble weight updates are defined for squared error only")
    predictions = np.asarray(predictions, dtype=float)
    if predictions.shape != batch.y.shape:
        raise InvalidInputError("one prediction per batch point is required")
    G = model_outputs(state.models, batch.X)
    return (2.0 / len(batch)) * (G.T @ (predictions - batch.y))


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u - css / np.arange(1, v.size + 1) > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def update_weights(state: EnsembleState, gradient) -> np.ndarray:
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != state.weights.shape:
        raise InvalidInputError("gradient length must equal the number of models")
    if not np.all(np.isfinite(gradient)):
        raise InvalidStateError("gradient is not finite")
    w = state.weights - state.learning_rate * gradient
    if state.project_to_simplex:
        w = project_simplex(w)
    return w


def observe_batch(state: EnsembleState, batch: Batch, predictions) -> EnsembleState:
    """Second phase of a batch: targets are revealed and the weights step."""
    predictions = np.asarray(predictions, dtype=float)
    batch_loss = float(np.mean((predictions - batch.y) ** 2))
    grad = batch_gradient(state, batch, predictions)
    entry = TrajectoryEntry(len(state.trajectory), tuple(update_weights(state, grad).tolist()), batch_loss)
    return replace(state, weights=np.array(entry.weights), trajectory=state.trajectory + (entry,))


@dataclass
class StreamResult:
    batch_losses: list
    trajectory: list
    predictions: np.ndarray = field(repr=False)
    squared_errors: np.ndarray = field(repr=False)
    final_state: EnsembleState = field(repr=False)

    @property
    def mse(self) -> float:
        """Mean squared error over every streamed point."""
        return float(np.mean(self.squared_errors))


def stream_evaluate(models, batches: Sequence[Batch], learning_rate: float,
                    project_to_simplex: bool = False) -> StreamResult:
    """Replay ``batches`` in order: predict with w^{t-1}, reveal, update to w^t."""
    state = EnsembleState.start(models, learning_rate, project_to_simplex=project_to_simplex)
    all_preds, sq = [], []
    for batch in batches:
        if batch.dimension != models[0].dimension:
            raise InvalidInputError("batch dimension does not match the models")
        preds = predict_batch(state, batch.X)
        state = observe_batch(state, batch, preds)
        all_preds.append(preds)
        sq.append((preds - batch.y) ** 2)
    return StreamResult(
        batch_losses=[e.batch_loss for e in state.trajectory],
        trajectory=list(state.trajectory),
        predictions=np.concatenate(all_preds) if all_preds else np.empty(0),
        squared_errors=np.concatenate(sq) if sq else np.empty(0),
        final_state=state,
    )


def replay_trajectory(models, batches: Sequence[Batch], trajectory) -> list:
    """Recompute each batch's predictions from the weights logged before it."""
    weights = [init_weights(len(models))] + [np.array(e.weights) for e in trajectory]
    return [model_outputs(models, b.X) @ weights[t] for t, b in enumerate(batches)]
