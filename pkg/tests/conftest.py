"""Shared helpers: finite-difference gradient oracle and tolerance checks."""

import numpy as np


def numeric_gradient(build_loss, tensor, h=1e-5):
    """Central finite-difference gradient of a scalar function.

    ``build_loss`` must rebuild the forward pass from scratch (returning a
    float) every call, reading the current contents of ``tensor.data``; the
    tensor is perturbed in place one element at a time.
    """
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        upper = build_loss()
        flat[i] = saved - h
        lower = build_loss()
        flat[i] = saved
        gflat[i] = (upper - lower) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric, floor=1e-6):
    """Worst elementwise relative error between two gradient arrays."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def assert_gradients_match(build_loss, tensors, h=1e-5, tol=1e-4):
    """Run backward once and compare every tensor's grad to finite differences."""
    from ltml import autodiff

    loss = build_loss()
    assert isinstance(loss, autodiff.Tensor)
    for t in tensors:
        t.zero_grad()
    loss.backward()
    scalar = lambda: build_loss().item()
    for t in tensors:
        assert t.grad is not None, "no gradient reached a requires_grad leaf"
        numeric = numeric_gradient(scalar, t, h=h)
        err = max_relative_error(t.grad, numeric)
        assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol}"
