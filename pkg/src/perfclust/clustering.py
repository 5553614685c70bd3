"""Performance based clustering.

Points are grouped by which regression model explains them best rather
than by where their features lie. The procedure alternates an assignment
step (each point goes to the model with the lowest loss on it) with a refit
step (each cluster's model is retrained on its members) until few points
change cluster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .core import Dataset, InvalidInputError, LossKind, dataset_loss, elementwise_loss
from .learners import RegressorKind, RegressorSpec, TrainedModel, fit, predict_many

UNASSIGNED = -1


@dataclass(frozen=True)
class PbcConfig:
    k_hat: int = 3
    loss: LossKind = LossKind.SQUARED
    regressor: RegressorSpec = field(default_factory=RegressorSpec)
    zeta: float = 0.01
    max_iterations: int = 50
    init_fraction: float = 0.3
    soft_assignment: bool = False
    warm_start: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss))
        if isinstance(self.regressor, dict):
            object.__setattr__(self, "regressor", RegressorSpec.from_dict(self.regressor))
        if self.k_hat < 1:
            raise InvalidInputError("k_hat must be >= 1")
        if not 0.0 < self.zeta <= 1.0:
            raise InvalidInputError("zeta must lie in (0, 1]")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be >= 1")
        if not 0.0 < self.init_fraction <= 1.0:
            raise InvalidInputError("init_fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.value
        d["regressor"] = self.regressor.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PbcConfig":
        return cls(**d)


@dataclass
class ClusteringResult:
    assignment: np.ndarray
    models: list
    loss_history: list
    reassignment_history: list
    iterations: int
    converged: bool
    reseeded: list = field(default_factory=list)
    # filled only when run_pbc(..., record_history=True); model_history[0]
    # holds the seed models and model_history[m] the models after iteration m
    assignment_history: list = field(default_factory=list, repr=False)
    model_history: list = field(default_factory=list, repr=False)

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1]

    def cluster_sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=len(self.models)).tolist()


def cost_matrix(dataset: Dataset, models, loss: LossKind = LossKind.SQUARED) -> np.ndarray:
    """Loss of every point (rows) under every model (columns)."""
    if not models:
        raise InvalidInputError("cost_matrix needs at least one model")
    costs = np.empty((len(dataset), len(models)))
    for k, model in enumerate(models):
        costs[:, k] = elementwise_loss(predict_many(model, dataset.X), dataset.y, loss)
    return costs


def expectation_step(costs: np.ndarray) -> np.ndarray:
    # np.argmin returns the first minimum, i.e. ties go to the lowest index
    return np.argmin(costs, axis=1).astype(np.int64)


def soft_assignment_probabilities(costs: np.ndarray) -> np.ndarray:
    logits = -np.asarray(costs, dtype=float)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def sample_soft_assignment(costs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one label per point with probability proportional to exp(-cost)."""
    probs = soft_assignment_probabilities(costs)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(costs.shape[0])[:, None]
    labels = (u >= cdf).sum(axis=1)
    return np.minimum(labels, costs.shape[1] - 1).astype(np.int64)


def reassignment_fraction(previous, current) -> float:
    """Share of points whose label changed.

    Entries of ``previous`` equal to ``UNASSIGNED`` had no cluster yet and
    are not counted as changes.
    """
    previous = np.asarray(previous)
    current = np.asarray(current)
    if previous.shape != current.shape:
        raise InvalidInputError("assignments differ in length")
    if previous.size == 0:
        return 0.0
    changed = (previous != current) & (previous != UNASSIGNED)
    return float(np.count_nonzero(changed) / previous.size)


def seed_size(n_points: int, config: PbcConfig) -> int:
    return math.ceil(config.init_fraction * n_points / config.k_hat)


def weighted_sample_without_replacement(rng: np.random.Generator, weights, size: int) -> np.ndarray:
    """Indices drawn without replacement with probability proportional to ``weights``.

    Uses exponential keys: item i gets ``-log(u_i) / w_i`` and the ``size``
    smallest keys win, which matches drawing items one at a time in
    proportion to the remaining weights. Zero-weight items are only taken
    (uniformly) when there are too few positive weights; if every weight is
    zero the draw is uniform.
    """
    w = np.asarray(weights, dtype=float)
    if size > w.size:
        raise InvalidInputError(f"cannot draw {size} items from {w.size}")
    u = rng.random(w.size)
    keys = np.full(w.size, np.inf)
    pos = w > 0
    with np.errstate(over="ignore"):  # tiny weights give infinite keys, i.e. drawn last
        keys[pos] = -np.log(u[pos]) / w[pos]
    order = np.argsort(keys, kind="stable")
    n_pos = int(pos.sum())
    if n_pos >= size:
        return order[:size]
    zeros = np.flatnonzero(~pos)
    fill = zeros[np.argsort(u[zeros], kind="stable")[: size - n_pos]]
    return np.concatenate([order[:n_pos], fill])


def selection_probabilities(best_loss: np.ndarray) -> np.ndarray:
    """Normalised distances of the candidate points; uniform if all are zero."""
    total = best_loss.sum()
    if total > 0 and np.isfinite(total):
        return best_loss / total
    return np.full(best_loss.size, 1.0 / best_loss.size)


def initialize_clusters(dataset: Dataset, config: PbcConfig, rng_seed: Optional[int] = None):
    """Seed ``k_hat`` clusters and their models.

    The first cluster is a uniform sample. Each later cluster samples, without
    replacement, from the still unassigned points with probability
    proportional to the point's smallest loss under the models built so far,
    so poorly explained points are favoured.

    Returns the seed labels (``UNASSIGNED`` for points in no seed cluster)
    and the list of seed models.
    """
    n = len(dataset)
    size = seed_size(n, config)
    if config.k_hat * size > n:
        raise InvalidInputError(
            f"cannot seed {config.k_hat} clusters of {size} points from {n} points"
        )
    rng = np.random.default_rng(config.seed if rng_seed is None else rng_seed)
    labels = np.full(n, UNASSIGNED, dtype=np.int64)
    models: list[TrainedModel] = []
    best_loss = np.full(n, np.inf)
    for k in range(config.k_hat):
        free = np.flatnonzero(labels == UNASSIGNED)
        if k == 0:
            probs = np.full(free.size, 1.0 / free.size)
        else:
            probs = selection_probabilities(best_loss[free])
        chosen = free[weighted_sample_without_replacement(rng, probs, size)]
        labels[chosen] = k
        model = fit(config.regressor, dataset.subset(chosen))
        models.append(model)
        best_loss = np.minimum(best_loss, cost_matrix(dataset, [model], config.loss)[:, 0])
    return labels, models


def reseed_empty_clusters(dataset: Dataset, labels: np.ndarray, costs: np.ndarray, k_hat: int) -> np.ndarray:
    """Give every empty cluster the worst explained points of the others.

    ``costs`` is the matrix the labels were derived from. Each empty cluster
    takes the ceil(N / (10 k_hat)) points with the highest loss under their
    current model, taken only from clusters that keep at least one member.
    """
    labels = labels.copy()
    n = len(labels)
    take = math.ceil(n / (10 * k_hat))
    own = costs[np.arange(n), labels]
    movable = np.ones(n, dtype=bool)
    for k in range(k_hat):
        if np.any(labels == k):
            continue
        sizes = np.bincount(labels, minlength=k_hat)
        chosen = []
        # stable sort keeps the result deterministic under equal losses
        for i in np.argsort(-own, kind="stable"):
            if len(chosen) == take:
                break
            if movable[i] and sizes[labels[i]] > 1:
                sizes[labels[i]] -= 1
                chosen.append(i)
        chosen = np.array(chosen, dtype=np.int64)
        labels[chosen] = k
        movable[chosen] = False
    return labels


def maximization_step(dataset: Dataset, assignment, config: PbcConfig, previous_models) -> list:
    """Refit every cluster's model on its current members."""
    labels = np.asarray(assignment)
    models = []
    for k in range(config.k_hat):
        members = np.flatnonzero(labels == k)
        if members.size == 0:
            # no members means no loss contribution; keep the old model
            models.append(previous_models[k])
            continue
        warm = previous_models[k] if (
            config.warm_start and config.regressor.kind is RegressorKind.MLP
        ) else None
        models.append(fit(config.regressor, dataset.subset(members), warm_start=warm))
    return models


def run_pbc(dataset: Dataset, config: PbcConfig, record_history: bool = False) -> ClusteringResult:
    """Cluster ``dataset`` by model performance.

    Each iteration records the mean loss of the points under their refitted
    assigned models and the fraction of points that changed cluster. The loop
    stops once that fraction falls below ``config.zeta`` or after
    ``config.max_iterations`` iterations.
    """
    dataset.require_nonempty()
    if len(dataset) < config.k_hat:
        raise InvalidInputError("need at least k_hat points")
    labels, models = initialize_clusters(dataset, config)
    rng = np.random.default_rng([config.seed, 2])
    loss_history, reassign_history, reseeded = [], [], []
    assignment_history, model_history = [], []
    if record_history:
        model_history.append(models)
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iterations + 1):
        costs = cost_matrix(dataset, models, config.loss)
        if config.soft_assignment:
            new_labels = sample_soft_assignment(costs, rng)
        else:
            new_labels = expectation_step(costs)
        empty = config.k_hat > 1 and np.unique(new_labels).size < config.k_hat
        if empty:
            new_labels = reseed_empty_clusters(dataset, new_labels, costs, config.k_hat)
        reseeded.append(bool(empty))
        fraction = reassignment_fraction(labels, new_labels)
        labels = new_labels
        models = maximization_step(dataset, labels, config, models)
        loss_history.append(dataset_loss(dataset, labels, models, config.loss))
        reassign_history.append(fraction)
        if record_history:
            assignment_history.append(labels.copy())
            model_history.append(models)
        if fraction < config.zeta:
            converged = True
            break
    return ClusteringResult(
        assignment=labels,
        models=models,
        loss_history=loss_history,
        reassignment_history=reassign_history,
        iterations=iteration,
        converged=converged,
        reseeded=reseeded,
        assignment_history=assignment_history,
        model_history=model_history,
    )
