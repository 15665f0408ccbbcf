"""Coverage and set-size metrics, class balance, and the Beta law of
classwise coverage."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .quantiles import as_fraction, check_alpha, conformal_rank

UNDERCOVER_MARGIN = Fraction(1, 10)
RAREST_FRACTION = 0.05


def as_membership(pred_sets, n_classes: int | None = None) -> np.ndarray:
    """Boolean (N, K) membership matrix from either a matrix or a list of sets."""
    if isinstance(pred_sets, np.ndarray) and pred_sets.ndim == 2:
        return pred_sets.astype(bool)
    sets = [set(int(y) for y in s) for s in pred_sets]
    if n_classes is None:
        n_classes = 1 + max((max(s) for s in sets if s), default=-1)
    mask = np.zeros((len(sets), n_classes), dtype=bool)
    for i, s in enumerate(sets):
        mask[i, list(s)] = True
    return mask


def covered(pred_sets, labels, n_classes: int | None = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if n_classes is None and not isinstance(pred_sets, np.ndarray):
        pred_sets = [set(s) for s in pred_sets]
        top = max((max(s) for s in pred_sets if s), default=-1)
        n_classes = 1 + max(top, int(labels.max()) if labels.size else -1)
    mask = as_membership(pred_sets, n_classes)
    if mask.shape[0] != labels.size:
        raise ValueError(f"{mask.shape[0]} prediction sets but {labels.size} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= mask.shape[1]):
        raise ValueError(f"labels must lie in [0, {mask.shape[1]})")
    return mask[np.arange(labels.size), labels]


def per_class_coverage(pred_sets, labels, n_classes: int) -> np.ndarray:
    """Empirical coverage of each class; NaN for classes absent from `labels`."""
    labels = np.asarray(labels, dtype=int)
    hits = covered(pred_sets, labels, n_classes)
    counts = np.bincount(labels, minlength=n_classes)
    good = np.bincount(labels, weights=hits, minlength=n_classes)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, good / np.maximum(counts, 1), np.nan)


def _coverages(class_coverage) -> list[Fraction]:
    if isinstance(class_coverage, np.ndarray):
        class_coverage = class_coverage.ravel().tolist()
    vals = [as_fraction(x) for x in class_coverage if not (isinstance(x, float) and math.isnan(x))]
    if not vals:
        raise ValueError("no class coverages to summarise")
    return vals


# Both summaries run in exact rationals (floats via as_fraction), so hand
# examples like CovGap(1.0, 0.8) = 10 and the <= boundary hold exactly.

def cov_gap(class_coverage, alpha) -> float:
    """100 times the mean absolute deviation of class coverage from 1 - alpha.

    NaN entries (classes missing from the evaluation data) are skipped.
    """
    c = _coverages(class_coverage)
    target = 1 - check_alpha(alpha)
    return float(100 * sum(abs(x - target) for x in c) / len(c))


def frac_under_cov(class_coverage, alpha) -> float:
    """Fraction of classes with coverage <= 1 - alpha - 0.1."""
    c = _coverages(class_coverage)
    cutoff = 1 - check_alpha(alpha) - UNDERCOVER_MARGIN
    return float(Fraction(sum(x <= cutoff for x in c), len(c)))


def avg_size(pred_sets) -> float:
    mask = as_membership(pred_sets)
    if mask.shape[0] == 0:
        raise ValueError("avg_size needs at least one prediction set")
    return float(mask.sum(axis=1).mean())


def marginal_coverage(pred_sets, labels) -> float:
    hits = covered(pred_sets, labels)
    if hits.size == 0:
        raise ValueError("marginal_coverage needs at least one example")
    return float(hits.mean())


@dataclass
class MetricsReport:
    cov_gap: float
    avg_size: float
    frac_under_cov: float
    marginal_coverage: float
    per_class_coverage: np.ndarray
    class_counts: np.ndarray
    class_hits: np.ndarray
    n_eval: int
    n_missing_classes: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "covgap": self.cov_gap,
            "avgsize": self.avg_size,
            "fracundercov": self.frac_under_cov,
            "marginal": self.marginal_coverage,
            "per_class_coverage": [None if np.isnan(c) else float(c) for c in self.per_class_coverage],
            "n_eval": self.n_eval,
            "n_missing_classes": self.n_missing_classes,
        }


def evaluate(pred_sets, labels, alpha, n_classes: int, warn: bool = True) -> MetricsReport:
    """All metrics for one batch of prediction sets.

    Classes with no evaluation examples are left out of CovGap and
    FracUnderCov and counted in `n_missing_classes`.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise ValueError("cannot evaluate on an empty set")
    mask = as_membership(pred_sets, n_classes)
    hits = covered(mask, labels, n_classes)
    counts = np.bincount(labels, minlength=n_classes)
    class_hits = np.bincount(labels, weights=hits, minlength=n_classes).astype(int)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(counts > 0, class_hits / np.maximum(counts, 1), np.nan)
    missing = int(np.sum(counts == 0))
    notes = []
    if missing:
        notes.append(f"{missing} classes have no evaluation examples and are excluded from CovGap")
        if warn:
            warnings.warn(notes[-1], stacklevel=2)
    exact = [Fraction(int(h), int(n)) for h, n in zip(class_hits, counts) if n]
    return MetricsReport(
        cov_gap=cov_gap(exact, alpha),
        avg_size=float(mask.sum(axis=1).mean()),
        frac_under_cov=frac_under_cov(exact, alpha),
        marginal_coverage=float(hits.mean()),
        per_class_coverage=c,
        class_counts=counts,
        class_hits=class_hits,
        n_eval=int(labels.size),
        n_missing_classes=missing,
        warnings=notes,
    )


def class_balance(labels, n_classes: int) -> float:
    """Examples in the rarest 5% of classes over the count expected under a
    uniform label distribution. 1 means balanced, 0 means some class is empty.

    The rarest-class count is floor(0.05 * n_classes), at least one.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise ValueError("class_balance needs labels")
    counts = np.sort(np.bincount(labels, minlength=n_classes))
    r = max(1, math.floor(RAREST_FRACTION * n_classes))
    return float(counts[:r].sum() / (r * labels.size / n_classes))


# -- Beta law of classwise coverage -------------------------------------------

class UndefinedLawError(ValueError):
    """Too few samples: the threshold is +inf and coverage is identically 1."""


def _betacf(a: float, b: float, x: float, rtol: float, max_iter: int = 10_000) -> float:
    # modified Lentz evaluation of the continued fraction for I_x(a, b)
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < rtol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float, rtol: float = 1e-10) -> float:
    """Regularized incomplete beta function I_x(a, b) for a, b > 0."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # the continued fraction converges fast for x < (a + 1) / (a + b + 2)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x, rtol) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x, rtol) / b


def betainc_integer(a: int, b: int, x: float) -> float:
    """Exact I_x(a, b) for integer a, b via the binomial tail
    P(Binomial(a + b - 1, x) >= a)."""
    n = a + b - 1
    return math.fsum(math.comb(n, j) * x**j * (1 - x) ** (n - j) for j in range(a, n + 1))


@dataclass(frozen=True)
class BetaCoverageLaw:
    """Distribution of classwise coverage given a fixed calibration set of size n."""

    a: int
    b: int

    @property
    def n(self) -> int:
        return self.a + self.b - 1

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)

    @property
    def variance(self) -> float:
        s = self.a + self.b
        return self.a * self.b / (s * s * (s + 1))

    def cdf(self, t: float) -> float:
        return betainc(self.a, self.b, t)

    def tail_prob(self, t: float) -> float:
        """P(coverage < t)."""
        return self.cdf(t)


def beta_coverage_law(n: int, alpha) -> BetaCoverageLaw:
    if n < 1:
        raise ValueError("beta_coverage_law needs n >= 1")
    a = conformal_rank(n, check_alpha(alpha))
    if a > n:
        raise UndefinedLawError(f"n={n} is too small for alpha={alpha}: threshold is +inf")
    return BetaCoverageLaw(a, n + 1 - a)
