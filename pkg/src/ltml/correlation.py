"""Label-correlation adjacency built from class prior embeddings.

Pipeline: pairwise cosine similarities of the class priors, a rebalancing
step that splits each row's mass between its self-connection (1 - s) and
its neighbors (s, spread proportionally to similarity), then a row-wise
softmax at temperature tau_prime. Rows whose off-diagonal mass vanishes
(orthogonal priors, or s = 0) become exact one-hot self-connections instead
of being smeared by the softmax.

A conditional-probability variant estimated from the label matrix is kept
for comparison runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, ParameterError

_DEGENERATE_EPS = 1e-9


@dataclass
class CorrelationGraph:
    """Row-stochastic class-to-class adjacency plus its build parameters."""

    matrix: np.ndarray
    s: float
    tau_prime: float
    source: str = "text_prior"
    degenerate_rows: list = field(default_factory=list)

    @property
    def num_classes(self):
        return self.matrix.shape[0]

    def as_tensor(self):
        return Tensor(self.matrix)

    def to_json(self):
        return json.dumps(
            {
                "s": self.s,
                "tau_prime": self.tau_prime,
                "matrix": self.matrix.tolist(),
            },
            sort_keys=True,
        )


def build_raw(z):
    """Pairwise cosine similarity of prior columns (d x C -> C x C)."""
    z = z if isinstance(z, Tensor) else Tensor(z)
    return ad.cosine_similarity_matrix(z).data


def _off_diagonal_mask(n):
    return ~np.eye(n, dtype=bool)


def degenerate_row_indices(a):
    """Rows whose off-diagonal absolute mass is numerically zero."""
    a = np.asarray(a, dtype=np.float64)
    off = np.where(_off_diagonal_mask(a.shape[0]), np.abs(a), 0.0)
    return [int(i) for i in np.flatnonzero(off.sum(axis=1) < _DEGENERATE_EPS)]


def rebalance(a, s):
    """Trade self-connection mass against neighbor mass row by row.

    Diagonal entries become 1 - s; each off-diagonal entry is scaled so a
    row's neighbors share total mass s in proportion to their similarity.
    Rows with no off-diagonal mass keep zero neighbors (pure
    self-connection) rather than dividing by ~0.
    """
    if not 0.0 <= s <= 1.0:
        raise ParameterError(f"s must lie in [0, 1], got {s}")
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"adjacency must be square, got {a.shape}")
    n = a.shape[0]
    off_mask = _off_diagonal_mask(n)
    off = np.where(off_mask, a, 0.0)
    mass = off.sum(axis=1, keepdims=True)
    degenerate = np.abs(off).sum(axis=1, keepdims=True) < _DEGENERATE_EPS
    # s = 0 zeroes every neighbor regardless of mass
    safe_mass = np.where(degenerate, 1.0, mass)
    out = np.where(degenerate, 0.0, (s / safe_mass) * off)
    np.fill_diagonal(out, 1.0 - s)
    return out


def normalize(a_prime, tau_prime, degenerate_rows=None):
    """Row-softmax the rebalanced matrix into the final adjacency.

    Rows listed in ``degenerate_rows`` (detected from the rebalanced matrix
    when not given) skip the softmax and become exact one-hot
    self-connections.
    """
    if tau_prime <= 0:
        raise ParameterError(f"tau_prime must be > 0, got {tau_prime}")
    a_prime = np.asarray(a_prime, dtype=np.float64)
    if degenerate_rows is None:
        degenerate_rows = degenerate_row_indices(a_prime)
    soft = ad.row_softmax(Tensor(a_prime), temperature=tau_prime).data
    for i in degenerate_rows:
        soft[i] = 0.0
        soft[i, i] = 1.0
    return soft


def build_graph(z, s, tau_prime):
    """Full text-prior pipeline: cosine -> rebalance -> normalize."""
    raw = build_raw(z)
    rebalanced = rebalance(raw, s)
    degenerate = degenerate_row_indices(rebalanced)
    matrix = normalize(rebalanced, tau_prime, degenerate)
    return CorrelationGraph(
        matrix=matrix,
        s=s,
        tau_prime=tau_prime,
        source="text_prior",
        degenerate_rows=degenerate,
    )


def conditional_matrix(labels):
    """P[i, j] = probability that label i is present given label j is.

    Classes that never occur yield zero rows/columns apart from a unit
    diagonal, which downstream rebalancing turns into pure
    self-connections.
    """
    labels = _validated_labels(labels)
    counts = labels.sum(axis=0)
    joint = labels.T @ labels  # joint[i, j] = count(i and j)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = joint / counts[None, :]
    p[~np.isfinite(p)] = 0.0
    np.fill_diagonal(p, 1.0)
    return p


def build_conditional(labels, s, tau_prime, threshold=0.4):
    """Co-occurrence-derived adjacency (comparison variant).

    The conditional-probability matrix is binarized at ``threshold`` and
    then pushed through the same rebalance + normalize steps as the
    text-prior graph.
    """
    p = conditional_matrix(labels)
    binary = (p >= threshold).astype(np.float64)
    np.fill_diagonal(binary, 1.0)
    rebalanced = rebalance(binary, s)
    degenerate = degenerate_row_indices(rebalanced)
    matrix = normalize(rebalanced, tau_prime, degenerate)
    return CorrelationGraph(
        matrix=matrix,
        s=s,
        tau_prime=tau_prime,
        source="conditional_prob",
        degenerate_rows=degenerate,
    )


def _validated_labels(labels):
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DimensionError(f"label matrix must be 2-D, got {labels.shape}")
    return labels.astype(np.float64)
