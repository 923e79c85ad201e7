import math

import numpy as np
import pytest

from chickvox.analysis import (GroupLabel, bin_call_counts, cluster_summary, cohens_d,
                               correlation_report, pearson_matrix, prune_multicollinear,
                               vif_scores)
from oracles import cohens_d_bruteforce, pearson_bruteforce


def corr_pair(r, n=2000, seed=0):
    """Two columns with sample correlation exactly ``r``."""
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, n))
    a = (a - a.mean()) / np.linalg.norm(a - a.mean())
    b = b - b.mean()
    b -= (b @ a) * a
    b /= np.linalg.norm(b)
    return np.column_stack([a, r * a + math.sqrt(1 - r * r) * b])


def test_pearson_examples():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    r, _ = pearson_matrix(np.column_stack([x, 2 * x, -x]))
    assert r[0, 1] == pytest.approx(1.0)
    assert r[0, 2] == pytest.approx(-1.0)
    r, _ = pearson_matrix(np.array([[1.0, 1.0], [2.0, 3.0], [3.0, 2.0]]))
    assert r[0, 1] == pytest.approx(0.5)


def test_pearson_matches_bruteforce():
    X = np.random.default_rng(1).normal(size=(30, 4))
    r, _ = pearson_matrix(X)
    for i in range(4):
        for j in range(4):
            if i != j:
                assert r[i, j] == pytest.approx(pearson_bruteforce(X[:, i], X[:, j]), rel=1e-12)


def test_pearson_constant_column_is_undefined():
    X = np.column_stack([np.ones(5), np.arange(5.0)])
    r, const = pearson_matrix(X)
    assert const == [0]
    assert math.isnan(r[0, 1])
    rep = correlation_report(X, ["c", "x"])
    assert rep.undefined == ["c"]


def test_vif_two_features():
    X = corr_pair(0.8)
    v = vif_scores(X, ["a", "b"])
    assert v["a"] == pytest.approx(1 / (1 - 0.64), abs=1e-9)
    assert v["b"] == pytest.approx(2.778, abs=5e-4)


def test_vif_independent_features_near_one():
    X = np.random.default_rng(2).normal(size=(20000, 3))
    assert all(abs(v - 1) < 0.01 for v in vif_scores(X).values())


def test_vif_exact_collinearity_is_infinite():
    x = np.arange(10.0)
    X = np.column_stack([x, 2 * x + 1, np.random.default_rng(0).normal(size=10)])
    assert math.isinf(vif_scores(X)["x0"])


def test_cohens_d_examples():
    assert cohens_d([1, 2, 3], [3, 4, 5]) == pytest.approx(-2.0)
    assert cohens_d([1, 2, 3], [1, 2, 3]) == 0.0


def test_cohens_d_matches_bruteforce():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a, b = rng.normal(size=int(rng.integers(2, 20))), rng.normal(1, 2, int(rng.integers(2, 20)))
        assert cohens_d(a, b) == pytest.approx(cohens_d_bruteforce(list(a), list(b)), rel=1e-10)


def test_cohens_d_degenerate():
    with pytest.raises(ValueError):
        cohens_d([1.0], [2.0, 3.0])
    with pytest.raises(ZeroDivisionError):
        cohens_d([1.0, 1.0], [1.0, 1.0])


def pruning_data():
    rng = np.random.default_rng(4)
    n = 200
    g = np.array(["ctrl", "vpa"] * (n // 2))
    shift = (g == "vpa").astype(float)
    base = rng.normal(size=n)
    A = base + 0.6 * shift
    B = base + 0.2 * shift + 0.05 * rng.normal(size=n)
    C = rng.normal(size=n)
    return np.column_stack([A, B, C]), g


def test_prune_keeps_larger_effect():
    X, g = pruning_data()
    retained, audit = prune_multicollinear(X, ["A", "B", "C"], g)
    assert retained == ["A", "C"]
    assert audit[0]["reason"] == "cohens_d" and audit[0]["kept"] == "A"


def test_prune_override():
    X, g = pruning_data()
    retained, audit = prune_multicollinear(X, ["A", "B", "C"], g, overrides={("A", "B"): "B"})
    assert retained == ["B", "C"]
    assert audit[0]["reason"] == "override"


def test_prune_leaves_no_correlated_pair():
    rng = np.random.default_rng(5)
    base = rng.normal(size=(100, 1))
    X = np.hstack([base + 0.1 * rng.normal(size=(100, 1)) for _ in range(5)] + [rng.normal(size=(100, 3))])
    cols = [f"f{i}" for i in range(8)]
    g = np.array(["a", "b"] * 50)
    retained, audit = prune_multicollinear(X, cols, g)
    idx = [cols.index(c) for c in retained]
    r, _ = pearson_matrix(X[:, idx])
    off = r[~np.eye(len(idx), dtype=bool)]
    assert np.all(np.abs(off) < 0.8)
    assert any(a["reason"] == "already_resolved" for a in audit)


def test_prune_needs_two_conditions():
    X, _ = pruning_data()
    with pytest.raises(ValueError):
        prune_multicollinear(X, ["A", "B", "C"], ["x"] * X.shape[0])


GROUPS = [GroupLabel("r1", "c1", "ctrl"), GroupLabel("r2", "c2", "ctrl"), GroupLabel("r3", "c3", "vpa")]


def test_binned_counts_one_chick():
    groups = [GroupLabel("r1", "c1", "ctrl")]
    b = bin_call_counts([("r1", 10.0, 0), ("r1", 70.0, 0), ("r1", 130.0, 0)], groups, 360.0)
    assert [row["count"] for row in b.per_chick] == [1, 1, 1, 0, 0, 0]
    assert all(row["sem"] == 0 for row in b.summary)


def test_binned_counts_zero_calls():
    b = bin_call_counts([], GROUPS, 120.0, clusters=[0])
    assert all(row["mean"] == 0 and row["sem"] == 0 for row in b.summary)


def test_binned_mean_and_sem_across_chicks():
    calls = [("r1", 5.0, 0), ("r1", 6.0, 0), ("r1", 7.0, 0), ("r2", 8.0, 0), ("r3", 65.0, 0)]
    b = bin_call_counts(calls, GROUPS, 120.0)
    ctrl = [r for r in b.summary if r["condition"] == "ctrl" and r["bin"] == 1][0]
    assert ctrl["mean"] == 2.0
    assert ctrl["sem"] == pytest.approx(np.std([3, 1], ddof=1) / math.sqrt(2))
    vpa = [r for r in b.summary if r["condition"] == "vpa"]
    assert [r["mean"] for r in vpa] == [0.0, 1.0]


def test_binned_out_of_session_calls_reported():
    b = bin_call_counts([("r1", 500.0, 0)], GROUPS, 120.0)
    assert len(b.out_of_session) == 1


def test_binned_rejects_ragged_session():
    with pytest.raises(ValueError):
        bin_call_counts([], GROUPS, 90.0)


def test_cluster_summary_values():
    X = np.array([[0.1, 1.0], [0.2, 1.0], [0.5, 2.0]])
    rows = cluster_summary(X, ["duration_s", "k"], [0, 0, 1])
    dur0 = next(r for r in rows if r["cluster"] == 0 and r["feature"] == "duration_s")
    assert dur0["mean"] == pytest.approx(0.15)
    assert dur0["sd"] == pytest.approx(0.0707, abs=1e-4)
    const = next(r for r in rows if r["cluster"] == 0 and r["feature"] == "k")
    assert const["sd"] == 0
    single = next(r for r in rows if r["cluster"] == 1 and r["feature"] == "k")
    assert single["sd"] is None
