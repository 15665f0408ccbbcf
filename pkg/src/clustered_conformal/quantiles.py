"""Finite-sample conformal quantiles.

Thresholds are plain floats; ``math.inf`` stands for "every candidate
passes". Quantile levels and miscoverage rates are handled as exact
rationals so that ceilings such as ceil((n + 1) * 0.9) never pick up
floating-point error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

INF = math.inf
_MAX_DENOMINATOR = 10**9


def as_fraction(x) -> Fraction:
    """Exact rational for `x`; floats map to the nearest fraction with a
    denominator of at most 1e9 (so 0.1 becomes 1/10, 7/9 stays 7/9)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(float(x)).limit_denominator(_MAX_DENOMINATOR)


def check_alpha(alpha) -> Fraction:
    a = as_fraction(alpha)
    if not 0 < a < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return a


@lru_cache(maxsize=4096)
def _conformal_rank(n: int, alpha: Fraction) -> int:
    return math.ceil((n + 1) * (1 - alpha))


def conformal_rank(n: int, alpha) -> int:
    """ceil((n + 1)(1 - alpha)): the order statistic used by the conformal threshold."""
    return _conformal_rank(int(n), check_alpha(alpha))


@lru_cache(maxsize=4096)
def _level_rank(n: int, tau: Fraction) -> int:
    return max(1, math.ceil(tau * n))


def _order_statistic(values: np.ndarray, k: int) -> float:
    # k is 1-based and already within [1, n]
    return float(np.partition(values, k - 1)[k - 1])


def finite_quantile(tau, values) -> float:
    """Smallest element `a` of `values` with at least a `tau` fraction <= a.

    Levels above one give ``inf``; levels at or below zero give the minimum.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("finite_quantile needs at least one value")
    t = as_fraction(tau)
    if t > 1:
        return INF
    return _order_statistic(v, _level_rank(v.size, t))


def conformal_quantile(scores, alpha) -> float:
    """Finite-sample adjusted (1 - alpha) quantile of calibration scores.

    Returns ``inf`` for an empty set and whenever fewer than
    ceil((n + 1)(1 - alpha)) scores are available.
    """
    a = check_alpha(alpha)
    v = np.asarray(scores, dtype=float).ravel()
    n = v.size
    if n == 0:
        return INF
    k = _conformal_rank(n, a)
    if k > n:
        return INF
    return _order_statistic(v, k)


@dataclass(frozen=True)
class RandomizedThreshold:
    q_hat: float
    q_tilde: float
    p_keep: float
    bern_draw: int

    @property
    def chosen(self) -> float:
        return self.q_hat if self.bern_draw else self.q_tilde


def randomization_weights(n: int, alpha) -> tuple[Fraction, Fraction, Fraction]:
    """Overshoot b, undershoot c and keep-probability c / (b + c), exactly."""
    a = check_alpha(alpha)
    k = _conformal_rank(n, a)
    b = Fraction(k, n + 1) - (1 - a)
    c = (1 - a) - Fraction(k - 1, n + 1)
    return b, c, c / (b + c)


def randomized_conformal_quantile(scores, alpha, bern_draw: int) -> RandomizedThreshold:
    """Mixture of two adjacent order statistics giving exactly 1 - alpha coverage.

    `bern_draw` is the caller's Bernoulli(p_keep) outcome: 1 keeps the usual
    threshold, 0 takes the next lower order statistic. When that lower
    statistic would be the 0th one the threshold is ``-inf`` (empty set).
    """
    a = check_alpha(alpha)
    v = np.asarray(scores, dtype=float).ravel()
    n = v.size
    if n == 0:
        raise ValueError("randomized threshold is undefined for an empty score set")
    if bern_draw not in (0, 1):
        raise ValueError(f"bern_draw must be 0 or 1, got {bern_draw}")
    k = _conformal_rank(n, a)
    q_hat = INF if k > n else _order_statistic(v, k)
    q_tilde = -INF if k - 1 < 1 else _order_statistic(v, k - 1)
    _, _, p_keep = randomization_weights(n, a)
    return RandomizedThreshold(q_hat, q_tilde, float(p_keep), int(bern_draw))
