"""Three-layer graph convolution over class embeddings.

Each layer propagates features through the correlation adjacency and a
learnable square weight, with a leaky activation between layers and none on
the last so the output is unconstrained in sign for the residual merge:

    H0 = F
    H1 = LeakyReLU(A H0 W0)
    H2 = LeakyReLU(A H1 W1)
    H3 = A H2 W2
"""

from __future__ import annotations

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError
from .seeding import glorot_uniform, stream

NUM_LAYERS = 3


class GcnStack:
    """Learnable weights and the (fixed) adjacency they propagate over."""

    def __init__(self, width, graph, seed=0, negative_slope=0.2):
        rng = stream(seed, "gcn")
        self.weights = [
            Tensor(glorot_uniform(rng, width, width), requires_grad=True)
            for _ in range(NUM_LAYERS)
        ]
        self.graph = graph
        self.negative_slope = negative_slope
        self._adjacency = Tensor(graph.matrix)

    @property
    def width(self):
        return self.weights[0].shape[0]

    def parameters(self):
        return {f"gcn.w{i}": w for i, w in enumerate(self.weights)}


def gcn_forward(features, stack):
    """Propagate class features [C, d] through the three GCN layers."""
    adjacency = stack._adjacency
    if adjacency.shape[0] != features.shape[0]:
        raise DimensionError(
            f"adjacency is {adjacency.shape} but features are {features.shape}"
        )
    if features.shape[1] != stack.width:
        raise DimensionError(
            f"features width {features.shape[1]} != GCN width {stack.width}"
        )
    h = features
    for layer, w in enumerate(stack.weights):
        h = ad.matmul(ad.matmul(adjacency, h), w)
        if layer < NUM_LAYERS - 1:
            h = ad.leaky_relu(h, stack.negative_slope)
    return h


def residual_fuse(features, refined):
    """Merge the GCN output back into the original class features."""
    if features.shape != refined.shape:
        raise DimensionError(
            f"residual shapes disagree: {features.shape} vs {refined.shape}"
        )
    return ad.add(features, refined)
