"""Tests for the prediction head and rebalanced focal loss."""

import numpy as np
import pytest

from conftest import assert_gradients_match
from ltml import autodiff as ad
from ltml import losses
from ltml.autodiff import Tensor
from ltml.errors import DegenerateEmbeddingError, FrequencyError, LabelError, ParameterError
from ltml.losses import LossConfig, PredictionHead


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def make_cfg(counts, total, **kw):
    return LossConfig(class_counts=np.asarray(counts), total=total, **kw)


# ---------------------------------------------------------------------------
# predict_probs
# ---------------------------------------------------------------------------


def test_orthogonal_embedding_gives_half():
    head = PredictionHead()
    v = Tensor(np.array([[1.0, 0.0]]))
    f = Tensor(np.array([[0.0, 2.0]]))
    p = losses.predict_probs(v, f, head).data
    assert p[0, 0] == 0.5


def test_parallel_embedding_saturates():
    head = PredictionHead(init=0.07)
    v = Tensor(np.array([[3.0, 0.0]]))
    f = Tensor(np.array([[0.5, 0.0]]))
    p = losses.predict_probs(v, f, head).data
    expected = sigmoid(1.0 / 0.07)
    np.testing.assert_allclose(p[0, 0], expected, atol=1e-12)
    np.testing.assert_allclose(p[0, 0], 0.99999938, atol=1e-7)


def test_rows_are_not_normalized():
    head = PredictionHead(init=0.07)
    v = Tensor(np.array([[1.0, 1.0]]))
    f = Tensor(np.array([[1.0, 1.0], [1.0, 0.9]]))
    p = losses.predict_probs(v, f, head).data
    assert p[0, 0] > 0.5 and p[0, 1] > 0.5
    assert p.sum() > 1.0


def test_prediction_invariant_to_embedding_scale():
    rng = np.random.default_rng(0)
    head = PredictionHead()
    v = rng.normal(size=(3, 6))
    f = Tensor(rng.normal(size=(4, 6)))
    base = losses.predict_probs(Tensor(v), f, head).data
    scaled = losses.predict_probs(Tensor(v * 37.5), f, head).data
    np.testing.assert_allclose(base, scaled, atol=1e-12)


def test_zero_norm_embedding_rejected():
    head = PredictionHead()
    with pytest.raises(DegenerateEmbeddingError):
        losses.predict_probs(Tensor(np.zeros((1, 4))), Tensor(np.ones((2, 4))), head)


# ---------------------------------------------------------------------------
# rebalanced weights
# ---------------------------------------------------------------------------


def test_weight_for_most_frequent_class():
    cfg = make_cfg([100], 100, alpha=0.1, beta=0.01, theta=0.1)
    r = losses.rebalanced_weights(cfg)
    np.testing.assert_allclose(r, 0.1 + sigmoid(0.01 * (1.0 - 0.1)), atol=1e-12)
    np.testing.assert_allclose(r, 0.60225, atol=1e-4)


def test_weight_for_rare_class():
    cfg = make_cfg([1], 100, alpha=0.1, beta=0.01, theta=0.1)
    r = losses.rebalanced_weights(cfg)
    np.testing.assert_allclose(r, 0.1 + sigmoid(0.01 * (100.0 - 0.1)), atol=1e-12)
    np.testing.assert_allclose(r, 0.83089, atol=1e-4)


def test_weight_beta_zero_is_frequency_blind():
    cfg = make_cfg([1, 50, 100], 100, alpha=0.1, beta=0.0, theta=0.1)
    np.testing.assert_allclose(losses.rebalanced_weights(cfg), 0.6, atol=1e-12)


def test_weight_strictly_decreasing_in_frequency():
    n = 512
    cfg = make_cfg(np.arange(1, n + 1), n, beta=0.01)
    r = losses.rebalanced_weights(cfg)
    assert np.all(np.diff(r) < 0)


def test_weight_rejects_zero_count():
    with pytest.raises(FrequencyError):
        losses.rebalanced_weights(make_cfg([0, 3], 10))


# ---------------------------------------------------------------------------
# class bias
# ---------------------------------------------------------------------------


def test_bias_is_zero_at_half_frequency():
    cfg = make_cfg([50], 100, kappa=0.05)
    np.testing.assert_allclose(losses.class_biases(cfg), 0.0, atol=1e-15)


def test_bias_for_rare_class():
    cfg = make_cfg([10], 100, kappa=0.05)
    np.testing.assert_allclose(losses.class_biases(cfg), 0.05 * np.log(9.0), atol=1e-12)
    np.testing.assert_allclose(losses.class_biases(cfg), 0.10986, atol=1e-4)


def test_bias_clamped_when_class_is_everywhere():
    cfg = make_cfg([100], 100, kappa=0.05)
    v = losses.class_biases(cfg)
    np.testing.assert_allclose(v, 0.05 * np.log(1e-6), atol=1e-12)
    assert np.all(np.isfinite(v))


# ---------------------------------------------------------------------------
# rebalanced focal loss
# ---------------------------------------------------------------------------


def bce_reference(z, y):
    p = sigmoid(z)
    terms = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    return terms.sum(axis=1).mean()


def focal_reference(z, y, gamma):
    p = sigmoid(z)
    terms = -(y * (1 - p) ** gamma * np.log(p) + (1 - y) * p ** gamma * np.log(1 - p))
    return terms.sum(axis=1).mean()


def test_reduces_to_bce_hand_case():
    z = np.array([[0.3, -1.2], [2.0, 0.0]])
    y = np.array([[1, 0], [0, 1]])
    cfg = LossConfig.bce(class_counts=np.array([1, 1]), total=2)
    out = losses.db_focal_loss(Tensor(z), y, cfg).item()
    np.testing.assert_allclose(out, bce_reference(z, y), atol=1e-12)


def test_reduces_to_bce_random_batches():
    rng = np.random.default_rng(1)
    for _ in range(25):
        z = rng.normal(size=(5, 7)) * 3
        y = (rng.random(size=(5, 7)) < 0.4).astype(int)
        counts = np.maximum(y.sum(axis=0), 1)
        cfg = LossConfig.bce(class_counts=counts, total=5)
        out = losses.db_focal_loss(Tensor(z), y, cfg).item()
        np.testing.assert_allclose(out, bce_reference(z, y), atol=1e-9)


def test_reduces_to_focal_random_batches():
    rng = np.random.default_rng(2)
    for _ in range(25):
        z = rng.normal(size=(4, 6)) * 2
        y = (rng.random(size=(4, 6)) < 0.4).astype(int)
        counts = np.maximum(y.sum(axis=0), 1)
        cfg = LossConfig.focal(class_counts=counts, total=4, gamma=2.0)
        out = losses.db_focal_loss(Tensor(z), y, cfg).item()
        np.testing.assert_allclose(out, focal_reference(z, y, 2.0), atol=1e-9)


def test_single_positive_at_margin():
    # logit exactly at the class bias: q = 0.5, so loss = r * 0.25 * log 2
    cfg = make_cfg([10], 100, gamma=2.0, kappa=0.05, zeta=2.0)
    v = losses.class_biases(cfg)[0]
    r = losses.rebalanced_weights(cfg)[0]
    out = losses.db_focal_loss(Tensor([[v]]), np.array([[1]]), cfg).item()
    np.testing.assert_allclose(out, r * 0.25 * np.log(2.0), atol=1e-12)
    np.testing.assert_allclose(out, 0.17329 * r, atol=1e-4)


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    y = (rng.random(size=(4, 5)) < 0.5).astype(int)
    counts = np.maximum(y.sum(axis=0), 1)
    cfg = make_cfg(counts, 4, gamma=2.0, kappa=0.05, zeta=2.0)
    z = Tensor(rng.normal(size=(4, 5)) * 2, requires_grad=True)
    assert_gradients_match(lambda: losses.db_focal_loss(z, y, cfg), [z])


def test_loss_finite_over_wide_logit_range():
    cfg = make_cfg([3, 7], 10, gamma=2.0, kappa=0.05, zeta=2.0)
    for z_val in (-50.0, -10.0, 0.0, 10.0, 50.0):
        z = Tensor(np.full((2, 2), z_val))
        y = np.array([[1, 0], [0, 1]])
        out = losses.db_focal_loss(z, y, cfg).item()
        assert np.isfinite(out)


def test_loss_rejects_nonbinary_labels():
    cfg = make_cfg([1, 1], 2)
    with pytest.raises(LabelError):
        losses.db_focal_loss(Tensor(np.zeros((1, 2))), np.array([[0.5, 1.0]]), cfg)


def test_config_validation():
    with pytest.raises(ParameterError):
        LossConfig(zeta=0.0)
    with pytest.raises(ParameterError):
        LossConfig(gamma=-1.0)


def test_head_clamp():
    head = PredictionHead(init=0.07)
    head.tau.data[:] = 3.0
    head.clamp()
    assert head.tau.data[0] == losses.TAU_MAX
    head.tau.data[:] = 1e-9
    head.clamp()
    assert head.tau.data[0] == losses.TAU_MIN
