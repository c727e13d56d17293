"""Tests for the graph-convolution stack and residual merge."""

import numpy as np
import pytest

from conftest import assert_gradients_match
from ltml import autodiff as ad
from ltml import gcn
from ltml.autodiff import Tensor
from ltml.correlation import CorrelationGraph, build_graph
from ltml.errors import DimensionError


def graph_from(matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    return CorrelationGraph(matrix=matrix, s=0.3, tau_prime=0.3)


def identity_stack(width, n):
    stack = gcn.GcnStack(width, graph_from(np.eye(n)), seed=0)
    for w in stack.weights:
        w.data[:] = np.eye(width)
    return stack


def test_identity_propagation_on_nonnegative_features():
    feats = Tensor(np.abs(np.random.default_rng(0).normal(size=(4, 5))))
    stack = identity_stack(5, 4)
    out = gcn.gcn_forward(feats, stack)
    np.testing.assert_allclose(out.data, feats.data, atol=1e-12)


def test_zero_weights_give_zero_output():
    feats = Tensor(np.random.default_rng(1).normal(size=(4, 5)))
    stack = gcn.GcnStack(5, graph_from(np.eye(4)), seed=0)
    for w in stack.weights:
        w.data[:] = 0.0
    out = gcn.gcn_forward(feats, stack)
    np.testing.assert_array_equal(out.data, np.zeros((4, 5)))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    graph = build_graph(rng.normal(size=(6, 4)), s=0.3, tau_prime=0.3)
    stack = gcn.GcnStack(5, graph, seed=2)
    feats = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    cot = Tensor(rng.normal(size=(4, 5)))
    assert_gradients_match(
        lambda: ad.tensor_sum(ad.mul(gcn.gcn_forward(feats, stack), cot)),
        [feats] + stack.weights,
    )


def test_shape_mismatch_raises():
    stack = gcn.GcnStack(5, graph_from(np.eye(4)), seed=0)
    with pytest.raises(DimensionError):
        gcn.gcn_forward(Tensor(np.zeros((3, 5))), stack)
    with pytest.raises(DimensionError):
        gcn.gcn_forward(Tensor(np.zeros((4, 7))), stack)


def test_uniform_adjacency_oversmooths_single_layer():
    # with a uniform adjacency one propagation step collapses all classes
    # onto the same row: the witness for why s and tau_prime exist
    rng = np.random.default_rng(3)
    n, width = 6, 5
    adjacency = np.full((n, n), 1.0 / n)
    feats = rng.normal(size=(n, width))
    w = rng.normal(size=(width, width))
    single_layer = adjacency @ feats @ w
    for row in range(1, n):
        np.testing.assert_allclose(single_layer[row], single_layer[0], atol=1e-12)


def test_permutation_equivariance():
    rng = np.random.default_rng(4)
    n, width = 5, 4
    adjacency = np.abs(rng.normal(size=(n, n))) + 0.1
    adjacency /= adjacency.sum(axis=1, keepdims=True)
    feats = rng.normal(size=(n, width))
    base_stack = gcn.GcnStack(width, graph_from(adjacency), seed=5)
    out_base = gcn.gcn_forward(Tensor(feats), base_stack).data
    for _ in range(5):
        perm = rng.permutation(n)
        p = np.eye(n)[perm]
        perm_stack = gcn.GcnStack(width, graph_from(p @ adjacency @ p.T), seed=5)
        out_perm = gcn.gcn_forward(Tensor(p @ feats), perm_stack).data
        np.testing.assert_allclose(out_perm, p @ out_base, atol=1e-10)


def test_residual_fuse():
    a = np.random.default_rng(6).normal(size=(3, 4))
    zero = np.zeros((3, 4))
    np.testing.assert_array_equal(gcn.residual_fuse(Tensor(a), Tensor(zero)).data, a)
    np.testing.assert_array_equal(gcn.residual_fuse(Tensor(zero), Tensor(a)).data, a)
    hand = gcn.residual_fuse(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[10.0, 20.0], [30.0, 40.0]]))
    np.testing.assert_array_equal(hand.data, [[11.0, 22.0], [33.0, 44.0]])
    with pytest.raises(DimensionError):
        gcn.residual_fuse(Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 2))))
