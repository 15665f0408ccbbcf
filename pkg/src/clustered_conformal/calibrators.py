"""Standard, classwise and clustered conformal calibration.

A fitted `CalibratedModel` is just a per-class threshold vector: label y is
in the prediction set iff its score is <= thresholds[y]. The three methods
differ only in which calibration scores feed each threshold.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

from .clustering import NULL, ClusterMap, build_cluster_map
from .quantiles import (
    INF,
    as_fraction,
    check_alpha,
    conformal_quantile,
    randomization_weights,
    randomized_conformal_quantile,
)
from .seeding import derive_int, derive_rng

# gamma = K / (K + CLUSTER_BUDGET): enough proper-calibration data per cluster
CLUSTER_BUDGET = 75


class Method(str, Enum):
    STANDARD = "standard"
    CLASSWISE = "classwise"
    CLUSTERED = "clustered"


@dataclass(frozen=True, eq=False)
class LabeledScores:
    """Calibration scores s_i = s(X_i, Y_i) with their true labels."""

    scores: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float).ravel()
        y = np.asarray(self.labels).ravel()
        if s.shape != y.shape:
            raise ValueError(f"{s.size} scores but {y.size} labels")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.round(y)):
                raise ValueError("labels must be integers")
        y = y.astype(int)
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.scores.size

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, idx) -> LabeledScores:
        return LabeledScores(self.scores[idx], self.labels[idx], self.n_classes)

    def by_class(self) -> list[np.ndarray]:
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(self.n_classes + 1))
        s = self.scores[order]
        return [s[bounds[y]:bounds[y + 1]] for y in range(self.n_classes)]


@dataclass(frozen=True, eq=False)
class CalibratedModel:
    method: Method
    alpha: float
    thresholds: np.ndarray
    cluster_map: ClusterMap | None = None
    randomized: bool = False
    seed: int = 0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        t = np.array(self.thresholds, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "thresholds", t)

    @property
    def n_classes(self) -> int:
        return self.thresholds.size

    @property
    def n_null_classes(self) -> int:
        return 0 if self.cluster_map is None else int(self.cluster_map.null_classes.size)

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "alpha": self.alpha,
            "thresholds": [_threshold_out(t) for t in self.thresholds],
            "cluster_map": None if self.cluster_map is None else self.cluster_map.to_json(),
            "randomized": self.randomized,
            "seed": self.seed,
            "n_classes": self.n_classes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> CalibratedModel:
        thresholds = [_threshold_in(t) for t in d["thresholds"]]
        if len(thresholds) != d["n_classes"]:
            raise ValueError(f"model lists {len(thresholds)} thresholds for {d['n_classes']} classes")
        cmap = d.get("cluster_map")
        return cls(
            method=Method(d["method"]),
            alpha=float(d["alpha"]),
            thresholds=np.array(thresholds),
            cluster_map=None if cmap is None else ClusterMap.from_json(cmap),
            randomized=bool(d.get("randomized", False)),
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> CalibratedModel:
        return cls.from_dict(json.loads(text))


def _threshold_out(t: float):
    # repr-based float output round-trips bit-exactly
    if math.isinf(t):
        return "inf" if t > 0 else "-inf"
    return float(t)


def _threshold_in(t) -> float:
    if isinstance(t, str):
        if t in ("inf", "-inf"):
            return float(t)
        raise ValueError(f"bad threshold {t!r}")
    return float(t)


class _Thresholder:
    """Computes group thresholds, optionally randomized from one seeded stream.

    Every group consumes exactly one uniform draw so the stream stays aligned
    regardless of which groups are empty.
    """

    def __init__(self, alpha, randomized: bool, seed: int, label: str):
        self.alpha = check_alpha(alpha)
        self.randomized = randomized
        self.rng = derive_rng(seed, "randomize", label) if randomized else None

    def __call__(self, scores: np.ndarray) -> float:
        if not self.randomized:
            return conformal_quantile(scores, self.alpha)
        draw = self.rng.random()
        if scores.size == 0:
            return INF
        _, _, p_keep = randomization_weights(scores.size, self.alpha)
        return randomized_conformal_quantile(scores, self.alpha, int(draw < p_keep)).chosen


def fit_standard(data: LabeledScores, alpha, randomized: bool = False, seed: int = 0) -> CalibratedModel:
    """One pooled threshold from all calibration scores, shared by every class."""
    q = _Thresholder(alpha, randomized, seed, "standard")(data.scores)
    return CalibratedModel(Method.STANDARD, float(alpha), np.full(data.n_classes, q),
                           randomized=randomized, seed=seed)


def fit_classwise(data: LabeledScores, alpha, randomized: bool = False, seed: int = 0) -> CalibratedModel:
    """A separate threshold per class; classes without data get +inf."""
    thresholder = _Thresholder(alpha, randomized, seed, "classwise")
    thresholds = np.array([thresholder(s) for s in data.by_class()])
    return CalibratedModel(Method.CLASSWISE, float(alpha), thresholds,
                           randomized=randomized, seed=seed)


def split_indices(n: int, gamma, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random split into floor(gamma * n) clustering indices and the rest."""
    g = as_fraction(gamma)
    if not 0 <= g <= 1:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    n1 = math.floor(g * n)
    perm = derive_rng(seed, "split").permutation(n)
    return np.sort(perm[:n1]), np.sort(perm[n1:])


def fit_clustered(data: LabeledScores, alpha, gamma, n_clusters: int, seed: int = 0,
                  randomized: bool = False) -> CalibratedModel:
    """Clustered conformal calibration.

    A `gamma` fraction of the data is used to cluster classes by their score
    quantiles; the rest calibrates one threshold per cluster. Null-cluster
    classes (too rare to embed, or absent) use the pooled threshold of the
    proper calibration split.
    """
    check_alpha(alpha)
    if n_clusters < 1:
        raise ValueError(f"n_clusters must be >= 1, got {n_clusters}")
    idx1, idx2 = split_indices(len(data), gamma, seed)
    d1, d2 = data.subset(idx1), data.subset(idx2)
    cmap = build_cluster_map(d1.scores, d1.labels, data.n_classes, alpha, n_clusters,
                             seed=derive_int(seed, "kmeans"))

    thresholder = _Thresholder(alpha, randomized, seed, "clustered")
    cluster_of = cmap.assignment[d2.labels]
    cluster_q = np.array([thresholder(d2.scores[cluster_of == m]) for m in range(cmap.n_clusters)])
    null_q = thresholder(d2.scores)
    thresholds = np.where(cmap.assignment == NULL, null_q,
                          cluster_q[np.maximum(cmap.assignment, 0)] if cmap.n_clusters else null_q)
    info = {
        "gamma": float(gamma),
        "n_clustering": int(idx1.size),
        "n_proper": int(idx2.size),
        "cluster_thresholds": cluster_q.tolist(),
        "null_threshold": null_q,
    }
    return CalibratedModel(Method.CLUSTERED, float(alpha), thresholds, cluster_map=cmap,
                           randomized=randomized, seed=seed, info=info)


@dataclass(frozen=True)
class TuneResult:
    gamma: float
    n_clusters: int
    n_min: int
    n_tilde: int
    n_classes_kept: int
    n_alpha: int

    @property
    def fallback(self) -> bool:
        """True when the heuristic leaves no room for even one cluster."""
        return self.n_clusters < 1


def auto_tune(data: LabeledScores, alpha) -> TuneResult:
    """Heuristic choice of the clustering fraction and cluster count.

    With n_min the smallest count among classes present and
    n_alpha = ceil(1/alpha - 1), let n_tilde = max(n_min, n_alpha) and K the
    number of classes with at least n_tilde examples. Then
    gamma = K / (K + 75) and M = floor(gamma * n_tilde / 2).
    """
    a = check_alpha(alpha)
    if len(data) == 0:
        raise ValueError("auto_tune needs calibration data")
    counts = data.class_counts()
    n_min = int(counts[counts > 0].min())
    n_alpha = math.ceil(1 / a - 1)
    n_tilde = max(n_min, n_alpha)
    k = int(np.sum(counts >= n_tilde))
    gamma = Fraction(k, k + CLUSTER_BUDGET)
    m = math.floor(gamma * n_tilde / 2)
    return TuneResult(float(gamma), m, n_min, n_tilde, k, n_alpha)


def fit_clustered_auto(data: LabeledScores, alpha, seed: int = 0, gamma=None,
                       n_clusters: int | None = None, randomized: bool = False) -> CalibratedModel:
    """`fit_clustered` with any parameter not supplied filled in by `auto_tune`.

    If the resulting cluster count is below one the data cannot support
    clustering: every class goes to the null cluster and the pooled threshold
    is computed on the full calibration set.
    """
    tune = auto_tune(data, alpha) if gamma is None or n_clusters is None else None
    g = tune.gamma if gamma is None else gamma
    m = tune.n_clusters if n_clusters is None else n_clusters
    if m < 1:
        warnings.warn("too little data to form clusters; falling back to standard calibration",
                      stacklevel=2)
        base = fit_standard(data, alpha, randomized=randomized, seed=seed)
        cmap = ClusterMap(np.full(data.n_classes, NULL), 0, m)
        model = CalibratedModel(Method.CLUSTERED, float(alpha), base.thresholds, cluster_map=cmap,
                                randomized=randomized, seed=seed,
                                info={"gamma": float(g), "fallback": True})
    else:
        model = fit_clustered(data, alpha, g, m, seed=seed, randomized=randomized)
        model.info["fallback"] = False
    model.info["tune"] = tune
    return model


def predict_set(model: CalibratedModel, candidate_scores) -> frozenset[int]:
    """Labels whose score is at or below their threshold."""
    s = np.asarray(candidate_scores, dtype=float).ravel()
    if s.size != model.n_classes:
        raise ValueError(f"expected {model.n_classes} candidate scores, got {s.size}")
    return frozenset(int(y) for y in np.flatnonzero(s <= model.thresholds))


def predict_sets(model: CalibratedModel, score_matrix) -> np.ndarray:
    """Boolean membership matrix (N, K) for a batch of candidate-score rows."""
    s = np.asarray(score_matrix, dtype=float)
    if s.ndim != 2 or s.shape[1] != model.n_classes:
        raise ValueError(f"expected an (N, {model.n_classes}) score matrix, got {s.shape}")
    return s <= model.thresholds[None, :]
