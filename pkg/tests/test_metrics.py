import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from clustered_conformal.metrics import (
    UndefinedLawError,
    avg_size,
    beta_coverage_law,
    betainc,
    betainc_integer,
    class_balance,
    cov_gap,
    covered,
    evaluate,
    frac_under_cov,
    marginal_coverage,
    per_class_coverage,
)
from oracles import count_coverage


def test_per_class_coverage_examples():
    labels = [0, 0, 1, 1, 2]
    np.testing.assert_array_equal(per_class_coverage([{0, 1, 2}] * 5, labels, 3), [1, 1, 1])
    np.testing.assert_array_equal(per_class_coverage([set()] * 5, labels, 3), [0, 0, 0])
    sets = [{0}, {0, 1}, {1}, {0}, {0, 1}]
    np.testing.assert_array_equal(per_class_coverage(sets, labels, 3), [1.0, 0.5, 0.0])
    c = per_class_coverage(sets, labels, 4)
    assert np.isnan(c[3])


def test_cov_gap_examples():
    assert cov_gap([0.9, 0.9, 0.9], 0.1) == 0.0
    assert cov_gap([1.0, 0.8], 0.1) == 10.0
    assert cov_gap([0.508, 0.992], 0.1) == 24.2
    assert cov_gap([1.0, np.nan, 0.8], 0.1) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        cov_gap([], 0.1)


def test_frac_under_cov_examples():
    assert frac_under_cov([0.79, 0.81], 0.1) == 0.5
    assert frac_under_cov([1.0, 1.0], 0.1) == 0.0
    assert frac_under_cov([0.80], 0.1) == 1.0
    with pytest.raises(ValueError):
        frac_under_cov([], 0.1)


def test_avg_size_examples():
    assert avg_size([{0}, {3}, {1}]) == 1.0
    assert avg_size([set(range(5))] * 4) == 5.0
    assert avg_size([{0}, {0, 1, 2}, {1, 2}]) == 2.0
    with pytest.raises(ValueError):
        avg_size([])


def test_covered_rejects_bad_labels():
    with pytest.raises(ValueError):
        covered(np.ones((2, 3), bool), [0, 3])
    with pytest.raises(ValueError):
        covered(np.ones((2, 3), bool), [0])


def test_evaluate_report_and_missing_classes():
    sets = [{0}, {0, 1}, {1}, {0}, {0, 1}]
    with pytest.warns(UserWarning, match="no evaluation examples"):
        r = evaluate(sets, [0, 0, 1, 1, 2], 0.1, 4)
    assert r.n_missing_classes == 1 and r.n_eval == 5
    assert r.marginal_coverage == pytest.approx(3 / 5)
    assert r.avg_size == pytest.approx(7 / 5)
    assert r.cov_gap == pytest.approx(100 * (0.1 + 0.4 + 0.9) / 3)
    assert r.to_dict()["per_class_coverage"][3] is None
    with pytest.raises(ValueError):
        evaluate([], [], 0.1, 3)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(1, 60), st.integers(0, 10**6))
def test_metrics_agree_with_counting(k, n, seed):
    rng = np.random.default_rng(seed)
    mask = rng.uniform(size=(n, k)) < 0.6
    labels = rng.integers(0, k, n)
    sets = [set(np.flatnonzero(row)) for row in mask]
    expected, hits, counts = count_coverage(sets, labels, k)
    report = evaluate(mask, labels, 0.1, k, warn=False)
    assert list(report.class_hits) == hits and list(report.class_counts) == counts
    for c, e in zip(report.per_class_coverage, expected):
        assert (np.isnan(c) and e is None) or c == e
    assert report.marginal_coverage == sum(hits) / n
    assert report.avg_size >= report.marginal_coverage
    assert avg_size(sets) == pytest.approx(report.avg_size)
    assert marginal_coverage(sets, labels) == report.marginal_coverage


def test_class_balance_examples():
    assert class_balance(np.repeat(np.arange(20), 50), 20) == 1.0
    assert class_balance(np.repeat(np.arange(19), 50), 20) == 0.0
    rng = np.random.default_rng(0)
    p = 1 / np.arange(1, 101)
    labels = rng.choice(100, size=10_000, p=p / p.sum())
    counts = sorted(np.bincount(labels, minlength=100))
    oracle = sum(counts[:5]) / (5 * 10_000 / 100)
    assert class_balance(labels, 100) == pytest.approx(oracle)
    assert oracle < 0.2
    with pytest.raises(ValueError):
        class_balance([], 5)


def test_beta_law_examples():
    law = beta_coverage_law(10, 0.1)
    assert (law.a, law.b) == (10, 1)
    assert law.tail_prob(0.8) == pytest.approx(0.8**10, rel=1e-10)
    assert law.mean >= 0.9
    law98 = beta_coverage_law(98, 0.1)
    assert law98.variance == pytest.approx(0.0009, abs=1e-4)
    with pytest.raises(UndefinedLawError):
        beta_coverage_law(8, 0.1)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 60), st.integers(1, 60), st.floats(0, 1))
def test_betainc_matches_exact_sum_and_scipy(a, b, x):
    exact = betainc_integer(a, b, x)
    assert betainc(a, b, x) == pytest.approx(exact, abs=1e-10)
    assert betainc(a, b, x) == pytest.approx(float(special.betainc(a, b, x)), abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 50), st.floats(0.05, 50), st.floats(0, 1))
def test_betainc_real_shapes(a, b, x):
    assert betainc(a, b, x) == pytest.approx(float(special.betainc(a, b, x)), abs=1e-9)


def test_betainc_rejects_bad_shapes():
    with pytest.raises(ValueError):
        betainc(0, 1, 0.5)
    assert math.isclose(betainc(2, 3, 1.0), 1.0) and betainc(2, 3, 0.0) == 0.0
