"""Quantile embeddings of per-class score distributions and weighted k-means.

Each class with enough clustering data is summarised by a vector of its
finite-sample adjusted score quantiles; classes with too little data go to
the null cluster. The remaining embeddings are grouped by k-means in which
every class is weighted by the square root of its sample count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .quantiles import _order_statistic, check_alpha

NULL = -1
BASE_LEVELS = tuple(Fraction(k, 10) for k in range(5, 10))


def embedding_levels(alpha) -> tuple[Fraction, ...]:
    """Sorted, de-duplicated quantile levels {0.5, ..., 0.9} U {1 - alpha}."""
    a = check_alpha(alpha)
    return tuple(sorted(set(BASE_LEVELS) | {1 - a}))


def null_cutoff(alpha) -> Fraction:
    """Minimum class count for embedding: 1 / min(alpha, 0.1) - 1."""
    a = check_alpha(alpha)
    return 1 / min(a, Fraction(1, 10)) - 1


@dataclass(frozen=True)
class ClassEmbedding:
    class_id: int
    vector: np.ndarray
    weight: float


def embed_class(class_scores, alpha, class_id: int = 0) -> ClassEmbedding | None:
    """Quantile embedding of one class, or None when the class is too rare.

    Entry j is the ceil((n + 1) tau_j)-th smallest score, which is finite for
    every level once n reaches the null cutoff.
    """
    v = np.asarray(class_scores, dtype=float).ravel()
    n = v.size
    if n == 0 or n < null_cutoff(alpha):
        return None
    vec = np.array([_order_statistic(v, min(n, math.ceil((n + 1) * tau)))
                    for tau in embedding_levels(alpha)])
    return ClassEmbedding(int(class_id), vec, math.sqrt(n))


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    objective: float
    n_iter: int
    history: list[float] = field(default_factory=list)


def weighted_objective(points, weights, labels, centroids) -> float:
    diff = points - centroids[labels]
    return float(np.sum(weights * np.einsum("ij,ij->i", diff, diff)))


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeanspp(points, weights, k, rng) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    first = rng.choice(n, p=weights / weights.sum())
    centers[0] = points[first]
    closest = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        mass = weights * closest
        total = mass.sum()
        p = mass / total if total > 0 else weights / weights.sum()
        idx = rng.choice(n, p=p)
        centers[j] = points[idx]
        closest = np.minimum(closest, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def _lloyd(points, weights, centroids, max_iter, tol):
    k = centroids.shape[0]
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _sq_dists(points, centroids)
        labels = np.argmin(d2, axis=1)
        cost = weights * d2[np.arange(len(labels)), labels]
        history.append(float(cost.sum()))

        new = centroids.copy()
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts):
            members = labels == j
            w = weights[members]
            new[j] = w @ points[members] / w.sum()
        # empty cluster: move its centroid onto the worst-served point
        for j in np.flatnonzero(counts == 0):
            movable = counts[labels] > 1
            if not movable.any():
                break
            i = int(np.argmax(np.where(movable, cost, -1.0)))
            counts[labels[i]] -= 1
            counts[j] += 1
            labels[i] = j
            cost[i] = 0.0
            new[j] = points[i]

        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids = new
        if shift < tol:
            break

    labels = np.argmin(_sq_dists(points, centroids), axis=1)
    objective = weighted_objective(points, weights, labels, centroids)
    history.append(objective)
    return KMeansResult(labels, centroids, objective, n_iter, history)


def weighted_kmeans(points, weights, k: int, seed: int = 0, max_iter: int = 300,
                    tol: float = 1e-6, n_init: int = 10) -> KMeansResult:
    """Weighted Lloyd's algorithm with weighted k-means++ seeding.

    Minimises sum_i w_i * ||x_i - c(x_i)||^2. Runs `n_init` restarts on
    independent streams derived from `seed` and keeps the lowest objective,
    the earliest restart winning ties.

    Parameters
    ----------
    points : array of shape (n, d)
    weights : array of shape (n,), strictly positive
    k : number of clusters, 1 <= k <= n
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    w = np.asarray(weights, dtype=float).ravel()
    n = x.shape[0]
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got {w.shape}")
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")

    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        rng = np.random.default_rng(child)
        result = _lloyd(x, w, _kmeanspp(x, w, k, rng), max_iter, tol)
        if best is None or result.objective < best.objective:
            best = result
    return best


@dataclass(frozen=True, eq=False)
class ClusterMap:
    """Class-to-cluster assignment; ``NULL`` (-1) marks the null cluster."""

    assignment: np.ndarray
    n_clusters: int
    requested_clusters: int | None = None

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=int).copy()
        if np.any((a < NULL) | (a >= max(self.n_clusters, 0))):
            raise ValueError("cluster ids must be NULL or lie in [0, n_clusters)")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    @property
    def n_classes(self) -> int:
        return self.assignment.size

    @property
    def null_classes(self) -> np.ndarray:
        return np.flatnonzero(self.assignment == NULL)

    def members(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == m)

    def to_json(self) -> list:
        return ["null" if c == NULL else int(c) for c in self.assignment]

    @classmethod
    def from_json(cls, items) -> ClusterMap:
        a = np.array([NULL if c == "null" or c is None else int(c) for c in items], dtype=int)
        return cls(a, int(a.max()) + 1 if a.size and a.max() >= 0 else 0)


def build_cluster_map(scores, labels, n_classes: int, alpha, n_clusters: int,
                      seed: int = 0) -> ClusterMap:
    """Cluster classes by their score quantiles on the clustering split.

    Classes below the null cutoff or absent from the data map to NULL. If
    fewer than `n_clusters` classes survive, the cluster count drops to that
    number and the map records the originally requested value.
    """
    if n_clusters < 1:
        raise ValueError(f"n_clusters must be >= 1, got {n_clusters}")
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    assignment = np.full(n_classes, NULL, dtype=int)

    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(n_classes + 1))
    embeddings = []
    for y in range(n_classes):
        emb = embed_class(scores[order[bounds[y]:bounds[y + 1]]], alpha, class_id=y)
        if emb is not None:
            embeddings.append(emb)

    if not embeddings:
        return ClusterMap(assignment, 0, n_clusters)
    k = n_clusters
    if len(embeddings) < k:
        warnings.warn(f"only {len(embeddings)} classes can be embedded; "
                      f"reducing clusters from {n_clusters} to {len(embeddings)}", stacklevel=2)
        k = len(embeddings)
    points = np.stack([e.vector for e in embeddings])
    weights = np.array([e.weight for e in embeddings])
    result = weighted_kmeans(points, weights, k, seed=seed)
    assignment[[e.class_id for e in embeddings]] = result.labels
    return ClusterMap(assignment, k, n_clusters)


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def tv_diagnostic(cluster_map: ClusterMap, scores, labels) -> np.ndarray:
    """Per-cluster heterogeneity: the largest pairwise KS statistic between
    member classes' empirical score distributions.

    This is a finite-sample surrogate for the total-variation bound between
    classes sharing a cluster, not an estimate of it. Clusters with fewer
    than two member classes that have data report 0.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    out = np.zeros(cluster_map.n_clusters)
    for m in range(cluster_map.n_clusters):
        samples = [scores[labels == y] for y in cluster_map.members(m)]
        samples = [s for s in samples if s.size]
        worst = 0.0
        for i in range(len(samples)):
            for j in range(i + 1, len(samples)):
                worst = max(worst, ks_statistic(samples[i], samples[j]))
        out[m] = worst
    return out
