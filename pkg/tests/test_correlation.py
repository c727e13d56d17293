"""Tests for the label-correlation adjacency pipeline."""

import json

import numpy as np
import pytest

from ltml import correlation as corr
from ltml.errors import ParameterError


def rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# build_raw
# ---------------------------------------------------------------------------


def test_raw_identical_embeddings():
    z = np.ones((4, 2))
    np.testing.assert_allclose(corr.build_raw(z), np.ones((2, 2)), atol=1e-12)


def test_raw_orthogonal_embeddings():
    z = np.eye(3)
    np.testing.assert_allclose(corr.build_raw(z), np.eye(3), atol=1e-12)


def test_raw_matches_bruteforce_pairwise_dots():
    z = rng(3).normal(size=(8, 3))
    out = corr.build_raw(z)
    cols = z / np.linalg.norm(z, axis=0, keepdims=True)
    brute = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            brute[i, j] = float(np.dot(cols[:, i], cols[:, j]))
    assert np.max(np.abs(out - brute)) < 1e-9


# ---------------------------------------------------------------------------
# rebalance
# ---------------------------------------------------------------------------


def test_rebalance_s_zero_disables_neighbors():
    a = corr.build_raw(rng(1).normal(size=(6, 4)))
    out = corr.rebalance(a, 0.0)
    np.testing.assert_allclose(out, np.eye(4), atol=1e-12)


def test_rebalance_all_ones_splits_evenly():
    out = corr.rebalance(np.ones((3, 3)), 0.3)
    expected = np.full((3, 3), 0.15)
    np.fill_diagonal(expected, 0.7)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_rebalance_orthogonal_guard_path():
    out = corr.rebalance(np.eye(3), 0.3)
    expected = 0.7 * np.eye(3)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_rebalance_rejects_bad_s():
    with pytest.raises(ParameterError):
        corr.rebalance(np.ones((2, 2)), -0.1)
    with pytest.raises(ParameterError):
        corr.rebalance(np.ones((2, 2)), 1.2)


# ---------------------------------------------------------------------------
# normalize
# ---------------------------------------------------------------------------


def test_normalize_direct_evaluation():
    a_prime = corr.rebalance(np.ones((3, 3)), 0.3)
    out = corr.normalize(a_prime, 0.3)
    exps = np.exp(np.array([0.7, 0.15, 0.15]) / 0.3)
    expected_row = exps / exps.sum()
    for i in range(3):
        row = np.concatenate(([out[i, i]], np.delete(out[i], i)))
        np.testing.assert_allclose(row, expected_row, atol=1e-12)
    np.testing.assert_allclose(out[0], [expected_row[0], expected_row[1], expected_row[2]], atol=1e-3)
    assert abs(out[0, 0] - 0.7577) < 1e-3


def test_normalize_high_temperature_limit():
    a_prime = corr.rebalance(np.abs(rng(2).normal(size=(5, 5))) + 0.1, 0.4)
    out = corr.normalize(a_prime, 1e6)
    np.testing.assert_allclose(out, 1.0 / 5.0, atol=1e-6)


def test_normalize_rejects_bad_temperature():
    with pytest.raises(ParameterError):
        corr.normalize(np.ones((2, 2)), 0.0)


def test_guarded_rows_become_exact_one_hot():
    graph = corr.build_graph(np.eye(4), s=0.3, tau_prime=0.3)
    np.testing.assert_array_equal(graph.matrix, np.eye(4))
    assert graph.degenerate_rows == [0, 1, 2, 3]


# ---------------------------------------------------------------------------
# conditional-probability variant
# ---------------------------------------------------------------------------


def test_conditional_always_cooccurring_pair():
    labels = np.array([[1, 1, 0], [1, 1, 0], [1, 1, 1]])
    p = corr.conditional_matrix(labels)
    assert p[0, 1] == 1.0 and p[1, 0] == 1.0


def test_conditional_never_cooccurring_pair():
    labels = np.array([[1, 0], [1, 0], [0, 1]])
    p = corr.conditional_matrix(labels)
    assert p[0, 1] == 0.0 and p[1, 0] == 0.0


def test_conditional_hand_counted_table():
    # 4 samples, 3 classes: counts are c0=3, c1=2, c2=1
    labels = np.array([
        [1, 1, 0],
        [1, 0, 0],
        [1, 1, 1],
        [0, 0, 0],
    ])
    p = corr.conditional_matrix(labels)
    expected = np.array([
        [1.0, 2 / 2, 1 / 1],
        [2 / 3, 1.0, 1 / 1],
        [1 / 3, 1 / 2, 1.0],
    ])
    np.testing.assert_allclose(p, expected, atol=1e-15)


def test_conditional_absent_class_gets_self_connection():
    labels = np.array([[1, 0], [1, 0]])
    graph = corr.build_conditional(labels, s=0.3, tau_prime=0.3)
    np.testing.assert_array_equal(graph.matrix[1], [0.0, 1.0])
    assert graph.source == "conditional_prob"


def test_conditional_graph_is_row_stochastic():
    g = rng(8)
    labels = (g.random(size=(40, 6)) < 0.35).astype(int)
    labels[:, 0] = 1
    graph = corr.build_conditional(labels, s=0.3, tau_prime=0.3)
    np.testing.assert_allclose(graph.matrix.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(graph.matrix >= 0)


# ---------------------------------------------------------------------------
# grid invariants and symmetry properties
# ---------------------------------------------------------------------------


def test_full_grid_rows_stochastic_and_nonnegative():
    z = rng(4).normal(size=(16, 7))
    for s in np.arange(0.0, 1.0, 0.1):
        for tau in np.arange(0.1, 0.75, 0.1):
            graph = corr.build_graph(z, s=float(s), tau_prime=float(tau))
            np.testing.assert_allclose(graph.matrix.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(graph.matrix >= 0)


def test_permutation_equivariance():
    g = rng(5)
    for trial in range(20):
        z = g.normal(size=(10, 6))
        perm = g.permutation(6)
        p = np.eye(6)[perm]
        base = corr.build_graph(z, s=0.3, tau_prime=0.3).matrix
        permuted = corr.build_graph(z[:, perm], s=0.3, tau_prime=0.3).matrix
        np.testing.assert_allclose(permuted, p @ base @ p.T, atol=1e-9)


def test_column_scale_invariance():
    g = rng(6)
    z = g.normal(size=(9, 5))
    scales = g.uniform(0.2, 7.0, size=5)
    base = corr.build_graph(z, s=0.3, tau_prime=0.3).matrix
    scaled = corr.build_graph(z * scales[None, :], s=0.3, tau_prime=0.3).matrix
    np.testing.assert_allclose(base, scaled, atol=1e-9)


def test_export_json_shape():
    graph = corr.build_graph(rng(7).normal(size=(5, 3)), s=0.3, tau_prime=0.3)
    payload = json.loads(graph.to_json())
    assert payload["s"] == 0.3
    assert payload["tau_prime"] == 0.3
    assert len(payload["matrix"]) == 3
