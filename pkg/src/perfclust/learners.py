"""Regressors with a common fit/predict contract.

Two families are provided: ridge-penalised linear regression solved in
closed form, and a small fully connected network trained with plain
mini-batch gradient descent. Fitted models are immutable value objects
holding a flat parameter vector, so they can be serialised and compared
bit for bit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from .core import Dataset, InvalidInputError, InvalidStateError, LabeledPoint


class RegressorKind(str, enum.Enum):
    RIDGE_LINEAR = "ridge_linear"
    MLP = "mlp"


class Activation(str, enum.Enum):
    RELU = "relu"
    TANH = "tanh"


@dataclass(frozen=True)
class RegressorSpec:
    kind: RegressorKind = RegressorKind.RIDGE_LINEAR
    ridge_lambda: float = 0.0
    hidden_sizes: tuple = (32,)
    activation: Activation = Activation.RELU
    epochs: int = 200
    step_size: float = 0.01
    batch_size: int = 32
    train_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", RegressorKind(self.kind))
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.ridge_lambda < 0:
            raise InvalidInputError("ridge_lambda must be >= 0")
        if self.kind is RegressorKind.MLP:
            if not self.hidden_sizes or min(self.hidden_sizes) < 1:
                raise InvalidInputError("an MLP needs at least one positive hidden layer size")
            if self.epochs < 1 or self.step_size <= 0 or self.batch_size < 1:
                raise InvalidInputError("epochs, step_size and batch_size must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["activation"] = self.activation.value
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RegressorSpec":
        return cls(**d)

    def layer_sizes(self, dimension: int) -> list[int]:
        return [dimension, *self.hidden_sizes, 1]

    def n_parameters(self, dimension: int) -> int:
        if self.kind is RegressorKind.RIDGE_LINEAR:
            return dimension + 1
        sizes = self.layer_sizes(dimension)
        return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass(frozen=True)
class TrainedModel:
    """A fitted regressor.

    Linear parameters are laid out as ``[intercept, c_1, ..., c_d]``. MLP
    parameters concatenate, layer by layer, the row-major ``(fan_in, fan_out)``
    weight matrix followed by the bias vector.
    """

    spec: RegressorSpec
    parameters: np.ndarray = field(repr=False)
    dimension: int

    def __post_init__(self):
        p = np.array(self.parameters, dtype=float).reshape(-1)
        expected = self.spec.n_parameters(self.dimension)
        if p.size != expected:
            raise InvalidInputError(
                f"{self.spec.kind.value} with d={self.dimension} needs {expected} parameters, got {p.size}"
            )
        if not np.all(np.isfinite(p)):
            raise InvalidStateError("model parameters are not finite")
        p.setflags(write=False)
        object.__setattr__(self, "parameters", p)

    @property
    def intercept(self) -> float:
        return float(self.parameters[0])

    @property
    def coefficients(self) -> np.ndarray:
        return self.parameters[1:]

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return _unpack(self.parameters, self.spec.layer_sizes(self.dimension))

    def __eq__(self, other):
        if not isinstance(other, TrainedModel):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.dimension == other.dimension
            and np.array_equal(self.parameters, other.parameters)
        )

    __hash__ = None


def linear_model(coefficients, intercept: float = 0.0, ridge_lambda: float = 0.0) -> TrainedModel:
    """Build a linear model directly from its coefficients."""
    coefficients = np.atleast_1d(np.asarray(coefficients, dtype=float))
    return TrainedModel(
        RegressorSpec(kind=RegressorKind.RIDGE_LINEAR, ridge_lambda=ridge_lambda),
        np.concatenate([[intercept], coefficients]),
        coefficients.size,
    )


def _unpack(flat: np.ndarray, sizes: Sequence[int]):
    layers = []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = flat[offset:offset + fan_out]
        offset += fan_out
        layers.append((W, b))
    return layers


def _pack(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in layers])


def _activate(z, activation: Activation):
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z, a, activation: Activation):
    if activation is Activation.RELU:
        return (z > 0).astype(float)
    return 1.0 - a * a


def _mlp_forward(layers, X, activation):
    h = X
    for W, b in layers[:-1]:
        h = _activate(h @ W + b, activation)
    W, b = layers[-1]
    return (h @ W + b)[:, 0]


def predict_many(model: TrainedModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != model.dimension:
        raise InvalidInputError(
            f"model expects {model.dimension} features, got {X.shape[1]}"
        )
    if model.spec.kind is RegressorKind.RIDGE_LINEAR:
        return X @ model.parameters[1:] + model.parameters[0]
    return _mlp_forward(model.layers(), X, model.spec.activation)


def predict(model: TrainedModel, features) -> float:
    features = np.asarray(features, dtype=float).reshape(-1)
    if features.size != model.dimension:
        raise InvalidInputError(
            f"model expects {model.dimension} features, got {features.size}"
        )
    return float(predict_many(model, features.reshape(1, -1))[0])


def _as_dataset(points) -> Dataset:
    if isinstance(points, Dataset):
        return points
    points = list(points)
    if points and not isinstance(points[0], LabeledPoint):
        raise InvalidInputError("expected a Dataset or a list of LabeledPoint")
    return Dataset.from_points(points, None if points else 1)


def fit(spec: RegressorSpec, points, warm_start: Optional[TrainedModel] = None) -> TrainedModel:
    """Fit ``spec`` to ``points`` (a Dataset or a list of LabeledPoint)."""
    data = _as_dataset(points)
    if len(data) < 1:
        raise InvalidInputError("cannot fit on zero points")
    if warm_start is not None and (warm_start.spec.kind != spec.kind or warm_start.dimension != data.dimension):
        raise InvalidInputError("warm start does not match the spec or the data dimension")
    if spec.kind is RegressorKind.RIDGE_LINEAR:
        params = _fit_ridge(data.X, data.y, spec.ridge_lambda)
    else:
        params = _fit_mlp(spec, data.X, data.y, warm_start)
    return TrainedModel(spec, params, data.dimension)


def _fit_ridge(X, y, lam):
    Z = np.hstack([np.ones((X.shape[0], 1)), X])
    if lam == 0.0:
        # minimum-norm least squares; also covers rank-deficient designs
        theta, *_ = np.linalg.lstsq(Z, y, rcond=None)
        return theta
    penalty = np.eye(Z.shape[1]) * lam
    penalty[0, 0] = 0.0
    A = Z.T @ Z + penalty
    try:
        return np.linalg.solve(A, Z.T @ y)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(A) @ (Z.T @ y)


def init_mlp_parameters(spec: RegressorSpec, dimension: int) -> np.ndarray:
    rng = np.random.default_rng(spec.train_seed)
    gain = 2.0 if spec.activation is Activation.RELU else 1.0
    layers = []
    sizes = spec.layer_sizes(dimension)
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out))
        layers.append((W, np.zeros(fan_out)))
    return _pack(layers)


def mlp_gradient(layers, X, y, activation):
    """Mean squared error over (X, y) and its gradient for every layer."""
    pre, post = [], [X]
    h = X
    for W, b in layers[:-1]:
        z = h @ W + b
        h = _activate(z, activation)
        pre.append(z)
        post.append(h)
    W_out, b_out = layers[-1]
    out = (h @ W_out + b_out)[:, 0]
    resid = out - y
    n = X.shape[0]
    delta = (2.0 / n) * resid[:, None]
    grads = [None] * len(layers)
    for idx in range(len(layers) - 1, -1, -1):
        W, _ = layers[idx]
        grads[idx] = (post[idx].T @ delta, delta.sum(axis=0))
        if idx > 0:
            delta = (delta @ W.T) * _activate_grad(pre[idx - 1], post[idx], activation)
    return float(np.mean(resid * resid)), grads


def _fit_mlp(spec: RegressorSpec, X, y, warm_start):
    sizes = spec.layer_sizes(X.shape[1])
    flat = (warm_start.parameters if warm_start is not None
            else init_mlp_parameters(spec, X.shape[1])).copy()
    layers = _unpack(flat, sizes)
    rng = np.random.default_rng([spec.train_seed, 1])
    n = X.shape[0]
    bs = min(spec.batch_size, n)
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            _, grads = mlp_gradient(layers, X[idx], y[idx], spec.activation)
            for (W, b), (gW, gb) in zip(layers, grads):
                W -= spec.step_size * gW
                b -= spec.step_size * gb
    if not np.all(np.isfinite(flat)):
        raise InvalidStateError("MLP training diverged; lower step_size")
    return flat
