"""Dense float64 tensors with tape-based reverse-mode differentiation.

The engine is deliberately small: numpy arrays carry the data, and every
differentiable operation records its parents plus a closure that maps the
output gradient to parent gradients. ``backward`` walks the recorded tape
once in reverse topological order, so each composite block of the model
stays independently checkable against finite differences.

Design constraints honored here:

* float64 only; desk-scale problem sizes make precision cheap.
* no broadcasting beyond what the model shapes need (trailing-axis
  broadcast for biases and scalars).
* forward results are deterministic for identical inputs; every reduction
  delegates to numpy's fixed evaluation order.
* tensors are immutable once used in a forward graph; only optimizer code
  writes ``.data`` of leaf parameters between steps.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    ContractError,
    DegenerateEmbeddingError,
    DimensionError,
    NumericsError,
    ParameterError,
)

# Raise as soon as an op produces NaN/Inf instead of letting it propagate.
# The training loop turns this off per step (it has its own NaN-loss abort)
# because the check costs a full pass over every op output.
CHECK_FINITE = True

_NORM_EPS = 1e-12


class finite_checks:
    """Context manager toggling the per-op finite check."""

    def __init__(self, enabled):
        self.enabled = enabled

    def __enter__(self):
        global CHECK_FINITE
        self.saved = CHECK_FINITE
        CHECK_FINITE = self.enabled
        return self

    def __exit__(self, *exc):
        global CHECK_FINITE
        CHECK_FINITE = self.saved
        return False


class Tensor:
    """A dense float64 array plus optional gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _non_scalar(self)

    def numpy(self):
        """Detached copy of the values."""
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- operators ------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    # -- reverse pass ----------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``grad`` of every requires_grad node.

        ``self`` must be scalar. Gradients are staged in a per-call map and
        only added into ``.grad`` buffers at the end, so repeated calls
        accumulate cleanly without double-counting earlier passes.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo = _topo_order(self)
        staged = {id(self): np.ones_like(self.data)}
        for node in topo:
            out_grad = staged.pop(id(node), None)
            if out_grad is None:
                continue
            if node.requires_grad:
                node.grad = out_grad if node.grad is None else node.grad + out_grad
            if node._backward is None:
                continue
            for parent, pgrad in node._backward(out_grad):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in staged:
                    staged[key] = staged[key] + pgrad
                else:
                    staged[key] = pgrad


def _non_scalar(t):
    raise ContractError(f"expected a scalar tensor, got shape {t.data.shape}")


def _topo_order(root):
    """Reverse topological order of the tape reachable from ``root``."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    """Wrap an op result, wiring the tape when any parent tracks gradients."""
    # a single reduction: any NaN/Inf poisons the sum
    if CHECK_FINITE and not np.isfinite(data.sum()):
        raise NumericsError("operation produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = _broadcast_op(np.add, a, b)
    return _make(data, (a, b), lambda g: (
        (a, _unbroadcast(g, a.data.shape)),
        (b, _unbroadcast(g, b.data.shape)),
    ))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = _broadcast_op(np.subtract, a, b)
    return _make(data, (a, b), lambda g: (
        (a, _unbroadcast(g, a.data.shape)),
        (b, _unbroadcast(-g, b.data.shape)),
    ))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = _broadcast_op(np.multiply, a, b)

    def backward(g):
        out = []
        if a.requires_grad:
            out.append((a, _unbroadcast(g * b.data, a.data.shape)))
        if b.requires_grad:
            out.append((b, _unbroadcast(g * a.data, b.data.shape)))
        return out

    return _make(data, (a, b), backward)


def _broadcast_op(ufunc, a, b):
    try:
        return ufunc(a.data, b.data)
    except ValueError:
        raise DimensionError(
            f"shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None


def scale(a, factor):
    """Multiply by a Python scalar constant."""
    a = _as_tensor(a)
    factor = float(factor)
    return _make(a.data * factor, (a,), lambda g: ((a, g * factor),))


# ---------------------------------------------------------------------------
# Linear algebra and structure
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product; supports 2-D weights on the right of N-D stacks."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs >=2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    if b.ndim == 2:
        data = a.data @ b.data

        def backward(g):
            out = []
            if a.requires_grad:
                out.append((a, g @ b.data.T))
            if b.requires_grad:
                k, n = b.data.shape
                out.append((b, a.data.reshape(-1, k).T @ g.reshape(-1, n)))
            return out

        return _make(data, (a, b), backward)
    if a.ndim == b.ndim and a.data.shape[:-2] == b.data.shape[:-2]:
        data = a.data @ b.data

        def backward(g):
            out = []
            if a.requires_grad:
                out.append((a, g @ np.swapaxes(b.data, -1, -2)))
            if b.requires_grad:
                out.append((b, np.swapaxes(a.data, -1, -2) @ g))
            return out

        return _make(data, (a, b), backward)
    raise DimensionError(
        f"unsupported matmul shapes: {a.data.shape} x {b.data.shape}"
    )


def transpose(a, axes=None):
    a = _as_tensor(a)
    data = np.transpose(a.data, axes)
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))
    return _make(data, (a,), lambda g: ((a, np.transpose(g, inverse)),))


def reshape(a, shape):
    a = _as_tensor(a)
    original = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: ((a, g.reshape(original)),))


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, bounds, axis=axis)
        return tuple(zip(tensors, pieces))

    return _make(data, tuple(tensors), backward)


def select_index(a, index, axis):
    """Take one slice along ``axis`` (e.g. the class token of a sequence)."""
    a = _as_tensor(a)
    data = np.take(a.data, index, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        key = (slice(None),) * axis + (index,)
        full[key] = g
        return ((a, full),)

    return _make(data, (a,), backward)


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    # one exp of -|x| covers both halves without overflow
    e = np.exp(-np.abs(x))
    base = 1.0 / (1.0 + e)
    data = np.where(x >= 0, base, e * base)
    return _make(data, (a,), lambda g: ((a, g * data * (1.0 - data)),))


def tanh(a):
    a = _as_tensor(a)
    data = np.tanh(a.data)
    return _make(data, (a,), lambda g: ((a, g * (1.0 - data * data)),))


def exp(a):
    a = _as_tensor(a)
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: ((a, g * data),))


def log(a):
    """Natural log; callers clamp their own arguments away from zero."""
    a = _as_tensor(a)
    data = np.log(a.data)
    return _make(data, (a,), lambda g: ((a, g / a.data),))


def relu(a):
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)
    return _make(data, (a,), lambda g: ((a, g * (a.data > 0)),))


def leaky_relu(a, slope=0.2):
    a = _as_tensor(a)
    data = np.where(a.data > 0, a.data, slope * a.data)
    return _make(data, (a,), lambda g: ((a, g * np.where(a.data > 0, 1.0, slope)),))


def power(a, exponent):
    """Elementwise x**p for a float constant p; p == 0 maps to ones."""
    a = _as_tensor(a)
    exponent = float(exponent)
    if exponent == 0.0:
        data = np.ones_like(a.data)
        return _make(data, (a,), lambda g: ((a, np.zeros_like(a.data)),))
    data = a.data ** exponent
    return _make(
        data, (a,),
        lambda g: ((a, g * exponent * a.data ** (exponent - 1.0)),),
    )


def clamp_min(a, floor):
    """max(x, floor); gradient is zero on the clamped region."""
    a = _as_tensor(a)
    floor = float(floor)
    data = np.maximum(a.data, floor)
    return _make(data, (a,), lambda g: ((a, g * (a.data >= floor)),))


# ---------------------------------------------------------------------------
# Reductions and normalizations
# ---------------------------------------------------------------------------


def tensor_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.data.shape).copy()),)
        expanded = g if keepdims else np.expand_dims(g, axis)
        return ((a, np.broadcast_to(expanded, a.data.shape).copy()),)

    return _make(np.asarray(data), (a,), backward)


def tensor_mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def layer_norm(a, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    a = _as_tensor(a)
    x = a.data
    mean = x.mean(axis=-1, keepdims=True)
    normed = x - mean
    var = np.mean(normed * normed, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed *= inv

    def backward(g):
        out = g - g.mean(axis=-1, keepdims=True)
        out -= normed * np.mean(g * normed, axis=-1, keepdims=True)
        out *= inv
        return ((a, out),)

    return _make(normed, (a,), backward)


def row_softmax(a, temperature=1.0):
    """Softmax over the last axis at the given temperature.

    Computed with max subtraction so large scores cannot overflow; each
    output row is nonnegative and sums to one.
    """
    if temperature <= 0:
        raise ParameterError(f"softmax temperature must be > 0, got {temperature}")
    a = _as_tensor(a)
    probs = a.data * (1.0 / temperature)
    probs -= probs.max(axis=-1, keepdims=True)
    np.exp(probs, out=probs)
    probs /= probs.sum(axis=-1, keepdims=True)

    def backward(g):
        out = g - (g * probs).sum(axis=-1, keepdims=True)
        out *= probs
        out *= 1.0 / temperature
        return ((a, out),)

    return _make(probs, (a,), backward)


def row_l2_normalize(a, what="vector"):
    """Scale each row (last axis) to unit L2 norm.

    Raises DegenerateEmbeddingError naming the first offending row when a
    norm falls below 1e-12.
    """
    a = _as_tensor(a)
    norms = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    bad = norms <= _NORM_EPS
    if np.any(bad):
        index = int(np.argwhere(bad)[0][0])
        raise DegenerateEmbeddingError(index, what=what)
    normed = a.data / norms

    def backward(g):
        inner = (g * normed).sum(axis=-1, keepdims=True)
        return ((a, (g - normed * inner) / norms),)

    return _make(normed, (a,), backward)


def cosine_similarity_matrix(z):
    """All-pairs cosine similarity of the columns of a d x C matrix.

    The result is C x C, symmetric up to float rounding, with unit
    diagonal; a zero-norm column raises naming the class index.
    """
    z = _as_tensor(z)
    if z.ndim != 2:
        raise DimensionError(f"expected a 2-D embedding matrix, got {z.data.shape}")
    columns = transpose(z)
    normed = row_l2_normalize(columns, what="class embedding")
    return matmul(normed, transpose(normed))
