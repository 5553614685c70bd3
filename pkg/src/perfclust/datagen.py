"""Synthetic multi-relation data, cluster scoring and a K-Means baseline."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .core import Dataset, InvalidInputError


@dataclass(frozen=True)
class SyntheticConfig:
    n_points: int = 5000
    n_relations: int = 3
    dimension: int = 3
    coefficient_range: tuple = (-3.0, 3.0)
    noise_std: float = 0.1
    min_coefficient_distance: float = 0.5
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.coefficient_range
        object.__setattr__(self, "coefficient_range", (float(lo), float(hi)))
        if not lo < hi:
            raise InvalidInputError("coefficient_range must be a nonempty interval")
        if self.noise_std < 0:
            raise InvalidInputError("noise_std must be >= 0")
        if min(self.n_points, self.n_relations, self.dimension) < 1:
            raise InvalidInputError("n_points, n_relations and dimension must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coefficient_range"] = list(self.coefficient_range)
        return d


@dataclass(frozen=True)
class LabeledSyntheticDataset:
    dataset: Dataset
    ground_truth: np.ndarray
    coefficients: np.ndarray  # (n_relations, dimension)


def draw_coefficients(config: SyntheticConfig, rng: np.random.Generator, max_tries: int = 10_000) -> np.ndarray:
    """Uniform coefficient vectors, redrawn while two relations are too close."""
    lo, hi = config.coefficient_range
    for _ in range(max_tries):
        beta = rng.uniform(lo, hi, size=(config.n_relations, config.dimension))
        gaps = np.linalg.norm(beta[:, None, :] - beta[None, :, :], axis=-1)
        gaps[np.diag_indices(config.n_relations)] = np.inf
        if gaps.min() >= config.min_coefficient_distance:
            return beta
    raise InvalidInputError("could not draw well separated coefficients; relax the settings")


def relation_counts(n_points: int, n_relations: int) -> np.ndarray:
    counts = np.full(n_relations, n_points // n_relations)
    counts[: n_points % n_relations] += 1
    return counts


def generate_synthetic(config: SyntheticConfig) -> LabeledSyntheticDataset:
    """Points from ``n_relations`` noisy linear relations ``y = beta_r . x + eps``.

    Features are standard normal, noise is Gaussian with standard deviation
    ``noise_std``. The rows are shuffled so relations are interleaved.
    """
    rng = np.random.default_rng(config.seed)
    beta = draw_coefficients(config, rng)
    truth = np.repeat(np.arange(config.n_relations), relation_counts(config.n_points, config.n_relations))
    truth = truth[rng.permutation(config.n_points)]
    X = rng.standard_normal((config.n_points, config.dimension))
    noise = rng.normal(0.0, config.noise_std, size=config.n_points) if config.noise_std > 0 else 0.0
    y = np.einsum("ij,ij->i", X, beta[truth]) + noise
    return LabeledSyntheticDataset(Dataset(X, y), truth, beta)


def majority_labels(predicted, truth) -> dict:
    """Map each nonempty predicted cluster to its most common true label."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    mapping = {}
    for c in np.unique(predicted):
        # bincount argmax breaks ties toward the smaller label
        mapping[int(c)] = int(np.argmax(np.bincount(truth[predicted == c])))
    return mapping


def misclassification_rate(predicted, truth) -> float:
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise InvalidInputError("predicted and true labels differ in length")
    if predicted.size == 0:
        return 0.0
    mapping = majority_labels(predicted, truth)
    relabeled = np.array([mapping[int(c)] for c in predicted])
    return float(np.mean(relabeled != truth))


def per_cluster_misclassification(predicted, truth, k_hat: int) -> list:
    """Within-cluster error after majority matching; None for empty clusters."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    mapping = majority_labels(predicted, truth)
    rates = []
    for k in range(k_hat):
        members = predicted == k
        rates.append(float(np.mean(truth[members] != mapping[k])) if members.any() else None)
    return rates


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia_history: list


def _kmeanspp_centers(X, k, rng):
    centers = [X[rng.integers(len(X))]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(len(X), p=d2 / total) if total > 0 else rng.integers(len(X))
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def kmeans(X, k_hat: int, seed: int = 0, max_iterations: int = 100) -> KMeansResult:
    """Lloyd's algorithm with distance-proportional seeding.

    ``inertia_history[m]`` is the within-cluster sum of squared distances
    right after the m-th assignment step.
    """
    X = np.asarray(X, dtype=float)
    if len(X) < k_hat:
        raise InvalidInputError("need at least k_hat points")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_centers(X, k_hat, rng)
    labels = None
    inertia = []
    for _ in range(max_iterations):
        d2 = np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
        new_labels = np.argmin(d2, axis=1)
        inertia.append(float(d2[np.arange(len(X)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k_hat):
            members = labels == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
    return KMeansResult(labels.astype(np.int64), centers, inertia)


def kmeans_baseline(dataset: Dataset, k_hat: int, seed: int = 0) -> np.ndarray:
    """Cluster on the feature vectors alone; targets are ignored."""
    return kmeans(dataset.X, k_hat, seed).labels


def blocked_order(ground_truth, segment_length=(100, 200), seed: int = 0) -> np.ndarray:
    """Row order that presents the relations in contiguous temporal blocks.

    Relations take turns in index order; each turn emits the next
    ``segment_length``-sized run (uniform length) of that relation's rows.
    Applying the order to a synthetic set turns it into a piecewise stream
    whose generating mechanism changes at block boundaries.
    """
    truth = np.asarray(ground_truth)
    rng = np.random.default_rng(seed)
    lo, hi = segment_length
    pools = [list(np.flatnonzero(truth == r)) for r in range(int(truth.max()) + 1)]
    order: list[int] = []
    r = 0
    while any(pools):
        if pools[r]:
            n = int(rng.integers(lo, hi + 1))
            order.extend(pools[r][:n])
            pools[r] = pools[r][n:]
        r = (r + 1) % len(pools)
    return np.array(order, dtype=np.int64)
