import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clustered_conformal.calibrators import (
    CalibratedModel,
    LabeledScores,
    Method,
    auto_tune,
    fit_classwise,
    fit_clustered,
    fit_clustered_auto,
    fit_standard,
    predict_set,
    predict_sets,
    split_indices,
)
from clustered_conformal.clustering import NULL
from clustered_conformal.quantiles import INF, conformal_quantile
from oracles import same_partition

NINE = np.arange(1, 10) / 10


def labeled(scores, labels, k):
    return LabeledScores(np.asarray(scores, float), np.asarray(labels), k)


def test_labeled_scores_validation():
    with pytest.raises(ValueError):
        labeled([0.1, 0.2], [0], 2)
    with pytest.raises(ValueError):
        labeled([0.1], [2], 2)
    with pytest.raises(ValueError):
        labeled([0.1], [0.5], 2)
    d = labeled([0.3, 0.1, 0.2], [1, 0, 1], 3)
    assert list(d.class_counts()) == [1, 2, 0]
    assert [list(s) for s in d.by_class()] == [[0.1], [0.3, 0.2], []]


def test_fit_standard_examples():
    m = fit_standard(labeled(NINE, np.arange(9) % 3, 3), 0.1)
    assert np.all(m.thresholds == 0.9)
    empty = fit_standard(labeled([], [], 4), 0.1)
    assert np.all(empty.thresholds == INF)
    assert predict_set(empty, [5, 5, 5, 5]) == frozenset(range(4))
    assert np.all(fit_standard(labeled(NINE, np.zeros(9, int), 2), 0.01).thresholds == INF)


def test_fit_classwise_examples():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(size=5), rng.uniform(size=9)
    m = fit_classwise(labeled(np.r_[a, b], [0] * 5 + [1] * 9, 3), 0.1)
    assert m.thresholds[0] == INF and m.thresholds[1] == b.max() and m.thresholds[2] == INF
    # every set contains class 0
    assert all(0 in predict_set(m, row) for row in rng.uniform(size=(50, 3)))

    one = labeled(rng.uniform(size=40), np.zeros(40, int), 1)
    assert fit_classwise(one, 0.1).thresholds[0] == fit_standard(one, 0.1).thresholds[0]


def test_split_indices():
    a, b = split_indices(10, 0.7, seed=1)
    assert a.size == 7 and b.size == 3
    assert sorted(np.r_[a, b]) == list(range(10))
    c, _ = split_indices(10, 0.7, seed=1)
    np.testing.assert_array_equal(a, c)
    with pytest.raises(ValueError):
        split_indices(10, 1.5, 0)


def _archetype_data(n_per, seed, k=20):
    rng = np.random.default_rng(seed)
    latent = np.arange(k) % 2
    labels = np.repeat(np.arange(k), n_per)
    ab = np.array([[2.0, 8.0], [8.0, 2.0]])[latent[labels]]
    return labeled(rng.beta(ab[:, 0], ab[:, 1]), labels, k), latent


def test_fit_clustered_recovers_oracle_and_shares_thresholds():
    data, latent = _archetype_data(100, 0)
    m = fit_clustered(data, 0.1, 0.5, 2, seed=4)
    assert same_partition(m.cluster_map.assignment, latent)
    for c in range(2):
        assert len(set(m.thresholds[m.cluster_map.members(c)])) == 1
    assert m.info["n_clustering"] + m.info["n_proper"] == len(data)


def test_fit_clustered_single_cluster_uses_proper_split():
    data, _ = _archetype_data(100, 1)
    m = fit_clustered(data, 0.1, 0.3, 1, seed=2)
    _, idx2 = split_indices(len(data), 0.3, 2)
    assert np.all(m.thresholds == conformal_quantile(data.scores[idx2], 0.1))


def test_fit_clustered_all_null():
    data, _ = _archetype_data(6, 2)
    m = fit_clustered(data, 0.1, 0.5, 2, seed=0)
    _, idx2 = split_indices(len(data), 0.5, 0)
    assert np.all(m.cluster_map.assignment == NULL)
    assert np.all(m.thresholds == conformal_quantile(data.scores[idx2], 0.1))
    with pytest.raises(ValueError):
        fit_clustered(data, 0.1, 0.5, 0)


def test_fit_clustered_null_classes_share_pooled_threshold():
    data, _ = _archetype_data(60, 3)
    extra = labeled(np.r_[data.scores, [0.5, 0.6]], np.r_[data.labels, [20, 21]], 23)
    m = fit_clustered(extra, 0.1, 0.5, 2, seed=0)
    nulls = m.cluster_map.null_classes
    assert {20, 21, 22} <= set(nulls)
    assert np.all(m.thresholds[nulls] == m.info["null_threshold"])


def _counts_data(counts):
    labels = np.repeat(np.arange(len(counts)), counts)
    return labeled(np.linspace(0, 1, labels.size), labels, len(counts))


def test_auto_tune_examples():
    t = auto_tune(_counts_data([10] * 75), 0.1)
    assert (t.gamma, t.n_clusters, t.n_tilde) == (0.5, 2, 10)
    t = auto_tune(_counts_data([9] * 607), 0.1)
    assert t.n_clusters == 4 and t.gamma == pytest.approx(607 / 682)
    t = auto_tune(_counts_data([3] + [20] * 10), 0.1)
    assert t.n_min == 3 and t.n_tilde == 9 and t.n_classes_kept == 10
    with pytest.raises(ValueError):
        auto_tune(labeled([], [], 3), 0.1)


def test_fit_clustered_auto_fallback():
    data = _counts_data([2] * 10)
    with pytest.warns(UserWarning, match="falling back"):
        m = fit_clustered_auto(data, 0.1)
    assert m.method is Method.CLUSTERED and m.info["fallback"]
    np.testing.assert_array_equal(m.thresholds, fit_standard(data, 0.1).thresholds)
    assert m.n_null_classes == 10


def test_predict_set_examples():
    m = CalibratedModel(Method.CLASSWISE, 0.1, [0.5, INF, 0.2])
    assert predict_set(m, [0.6, 0.9, 0.1]) == {1, 2}
    assert predict_set(m, [0.5, 7.0, 0.2]) == {0, 1, 2}
    with pytest.raises(ValueError):
        predict_set(m, [0.1, 0.2])
    np.testing.assert_array_equal(predict_sets(m, [[0.6, 0.9, 0.1]]), [[False, True, True]])


def test_randomized_variants():
    data = labeled(NINE, np.zeros(9, int), 2)
    r = fit_standard(data, 0.1, randomized=True, seed=3)
    assert np.all(r.thresholds == fit_standard(data, 0.1).thresholds)
    rng = np.random.default_rng(1)
    big = labeled(rng.uniform(size=300), rng.integers(0, 5, 300), 6)
    for fit in (fit_standard, fit_classwise):
        a, b = fit(big, 0.1, randomized=True, seed=8), fit(big, 0.1, randomized=True, seed=8)
        np.testing.assert_array_equal(a.thresholds, b.thresholds)
    # class 5 is empty and stays +inf
    assert fit_classwise(big, 0.1, randomized=True, seed=8).thresholds[5] == INF


def test_randomized_standard_monte_carlo_coverage():
    rng = np.random.default_rng(123)
    n, trials = 10, 10_000
    hits = 0
    for t in range(trials):
        s = rng.uniform(size=n + 1)
        m = fit_standard(labeled(s[:n], np.zeros(n, int), 1), 0.1, randomized=True, seed=t)
        hits += s[n] <= m.thresholds[0]
    assert abs(hits / trials - 0.9) <= 0.01


def test_model_json_round_trip():
    data, _ = _archetype_data(40, 5)
    m = fit_clustered(data, 0.1, 0.5, 2, seed=1)
    back = CalibratedModel.from_json(m.to_json())
    np.testing.assert_array_equal(back.thresholds, m.thresholds)
    np.testing.assert_array_equal(back.cluster_map.assignment, m.cluster_map.assignment)
    assert (back.method, back.alpha, back.seed) == (m.method, m.alpha, m.seed)
    inf = CalibratedModel(Method.STANDARD, 0.1, [INF, -INF, 0.1 + 0.2])
    back = CalibratedModel.from_json(inf.to_json())
    assert list(back.thresholds) == [INF, -INF, 0.1 + 0.2]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 200), st.integers(1, 6), st.sampled_from([0.05, 0.1, 0.2]), st.integers(0, 10**6))
def test_thresholds_structure(n, k, alpha, seed):
    rng = np.random.default_rng(seed)
    data = labeled(rng.uniform(size=n), rng.integers(0, k, n), k)
    std = fit_standard(data, alpha)
    assert len(set(std.thresholds)) == 1
    cw = fit_classwise(data, alpha)
    counts = data.class_counts()
    for y in range(k):
        if counts[y] < np.ceil((counts[y] + 1) * (1 - alpha) - 1e-9):
            assert cw.thresholds[y] == INF
    if n:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cl = fit_clustered_auto(data, alpha, seed=seed)
        groups = {}
        for y, c in enumerate(cl.cluster_map.assignment):
            groups.setdefault(c, set()).add(cl.thresholds[y])
        assert all(len(v) == 1 for v in groups.values())
