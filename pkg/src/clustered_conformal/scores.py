"""Conformal score functions computed from classifier probability rows.

All scores are negatively oriented: a lower score means the label agrees
better with the classifier output. Ranks are 1-based over probabilities
sorted in descending order, ties going to the lower class index.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

# accepts rows like 0.9995 from probabilities printed to a few decimals
ROW_SUM_ATOL = 1e-3


class ScoreTag(str, Enum):
    SOFTMAX = "softmax"
    APS = "aps"
    RAPS = "raps"


@dataclass(frozen=True)
class ScoreKind:
    """Which score to compute. The RAPS knobs are ignored for other tags."""

    tag: ScoreTag = ScoreTag.SOFTMAX
    raps_lambda: float = 0.01
    raps_kreg: int = 5

    def __post_init__(self):
        object.__setattr__(self, "tag", ScoreTag(self.tag))
        if self.raps_lambda < 0:
            raise ValueError(f"raps_lambda must be >= 0, got {self.raps_lambda}")
        if self.raps_kreg < 0:
            raise ValueError(f"raps_kreg must be >= 0, got {self.raps_kreg}")

    @property
    def name(self) -> str:
        return self.tag.value


class RowSumError(ValueError):
    """A probability row is too far from summing to one to be renormalized."""

    def __init__(self, row: int, total: float):
        self.row = row
        self.total = total
        super().__init__(f"row {row}: probabilities sum to {total!r}, outside tolerance {ROW_SUM_ATOL}")


class NegativeProbabilityError(ValueError):
    def __init__(self, row: int, col: int, value: float):
        self.row = row
        self.col = col
        super().__init__(f"row {row}, column {col}: negative probability {value!r}")


def normalize_rows(probs, atol: float = ROW_SUM_ATOL) -> np.ndarray:
    """Validate a probability matrix and renormalize rows to sum to one.

    Rows off by at most `atol` are rescaled; anything further off raises
    `RowSumError` naming the first offending row.
    """
    p = np.array(probs, dtype=float, ndmin=2)
    neg = np.argwhere(p < 0)
    if neg.size:
        r, c = neg[0]
        raise NegativeProbabilityError(int(r), int(c), float(p[r, c]))
    totals = p.sum(axis=1)
    bad = np.flatnonzero(~(np.abs(totals - 1.0) <= atol))
    if bad.size:
        raise RowSumError(int(bad[0]), float(totals[bad[0]]))
    return p / totals[:, None]


def _check_row(row) -> np.ndarray:
    return normalize_rows(row)[0]


def _check_label(y, n_classes: int) -> int:
    if not 0 <= y < n_classes:
        raise IndexError(f"class index {y} out of range for {n_classes} classes")
    return int(y)


def _check_u(u: float) -> float:
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u must lie in [0, 1], got {u}")
    return float(u)


def descending_ranks(row) -> np.ndarray:
    """1-based rank of every class when probabilities are sorted descending."""
    p = np.asarray(row, dtype=float)
    order = np.argsort(-p, axis=-1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(1, p.shape[-1] + 1) * np.ones_like(order), axis=-1)
    return ranks


def softmax_score(row, y: int) -> float:
    """One minus the probability of label `y`."""
    p = _check_row(row)
    return float(1.0 - p[_check_label(y, p.size)])


def aps_score(row, y: int, u: float) -> float:
    """Mass of the classes ranked strictly above `y`, plus `u` times p_y."""
    p = _check_row(row)
    y = _check_label(y, p.size)
    u = _check_u(u)
    order = np.argsort(-p, kind="stable")
    k = int(np.flatnonzero(order == y)[0])
    return float(p[order[:k]].sum() + u * p[y])


def raps_score(row, y: int, u: float, lam: float, kreg: int) -> float:
    """APS score plus the rank penalty max(0, lam * (rank - kreg))."""
    if lam < 0 or kreg < 0:
        raise ValueError("lam and kreg must be non-negative")
    base = aps_score(row, y, u)
    rank = int(descending_ranks(_check_row(row))[y])
    return base + max(0.0, lam * (rank - kreg))


def _all_labels(p: np.ndarray, kind: ScoreKind, u) -> np.ndarray:
    # p is (N, K) and already validated; u is (N,) and reused across labels
    if kind.tag is ScoreTag.SOFTMAX:
        return 1.0 - p
    order = np.argsort(-p, axis=1, kind="stable")
    sorted_p = np.take_along_axis(p, order, axis=1)
    above = np.cumsum(sorted_p, axis=1) - sorted_p
    sorted_scores = above + u[:, None] * sorted_p
    if kind.tag is ScoreTag.RAPS:
        ranks = np.arange(1, p.shape[1] + 1)
        sorted_scores = sorted_scores + np.maximum(0.0, kind.raps_lambda * (ranks - kind.raps_kreg))
    out = np.empty_like(sorted_scores)
    np.put_along_axis(out, order, sorted_scores, axis=1)
    return out


def score_all_labels(row, kind: ScoreKind, u: float = 1.0) -> np.ndarray:
    """Scores of every candidate label for one example.

    One `u` is shared by all labels of the example, so the result equals the
    single-label score at each index.
    """
    p = _check_row(row)
    u = _check_u(u)
    return _all_labels(p[None, :], kind, np.array([u]))[0]


def score_matrix(probs, kind: ScoreKind, u=None) -> np.ndarray:
    """Vectorised `score_all_labels` over an (N, K) probability matrix.

    `u` holds one uniform draw per row; it defaults to ones (the
    non-randomized APS/RAPS score) and is ignored for softmax.
    """
    p = normalize_rows(probs)
    if u is None:
        u = np.ones(p.shape[0])
    u = np.asarray(u, dtype=float)
    if u.shape != (p.shape[0],):
        raise ValueError(f"u must have shape ({p.shape[0]},), got {u.shape}")
    if np.any((u < 0) | (u > 1)):
        raise ValueError("u values must lie in [0, 1]")
    return _all_labels(p, kind, u)


def parse_score_kind(name: str, raps_lambda: float = 0.01, raps_kreg: int = 5) -> ScoreKind:
    try:
        tag = ScoreTag(name.lower())
    except ValueError:
        raise ValueError(f"unknown score {name!r}; expected one of softmax, aps, raps") from None
    return ScoreKind(tag, raps_lambda, raps_kreg)
