"""Tiny vision transformer with parallel bottleneck adapters.

The encoder follows the standard pre-norm ViT recipe at desk scale:
patchify, linear patch projection plus position embeddings, a class token,
a stack of attention blocks, and a final projection of the class-token
state into the shared image/text embedding width.

Each block's MLP sublayer carries an optional parallel bottleneck branch

    h = s * ReLU(LN(h') W_down) W_up + MLP(LN(h')) + h'

whose scale and projections are the only block parameters that stay
trainable under parameter-efficient fine-tuning. The backbone weights come
from a fixed seed and play the role of a pretrained model: freezing them
versus training them is the distinction under test, not their provenance.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, ParameterError
from .seeding import glorot_uniform, stream


def patchify(image, patch_size):
    """Split [H, W, 3] (or [B, H, W, 3]) into rows of flattened patches.

    Patch t of the output is the t-th patch in row-major patch order,
    flattened row-major. Works on Tensors (differentiable) and plain
    arrays alike.
    """
    is_tensor = isinstance(image, Tensor)
    shape = image.shape
    if len(shape) == 3:
        h, w, ch = shape
        batched = False
    elif len(shape) == 4:
        _, h, w, ch = shape
        batched = True
    else:
        raise DimensionError(f"expected [H, W, 3] or [B, H, W, 3], got {shape}")
    if h % patch_size or w % patch_size:
        raise DimensionError(
            f"image {h}x{w} not divisible by patch size {patch_size}"
        )
    gh, gw = h // patch_size, w // patch_size
    flat = patch_size * patch_size * ch
    if not is_tensor:
        image = np.asarray(image)
        if batched:
            b = shape[0]
            out = image.reshape(b, gh, patch_size, gw, patch_size, ch)
            out = out.transpose(0, 1, 3, 2, 4, 5)
            return out.reshape(b, gh * gw, flat)
        out = image.reshape(gh, patch_size, gw, patch_size, ch)
        return out.transpose(0, 2, 1, 3, 4).reshape(gh * gw, flat)
    if batched:
        b = shape[0]
        out = ad.reshape(image, (b, gh, patch_size, gw, patch_size, ch))
        out = ad.transpose(out, (0, 1, 3, 2, 4, 5))
        return ad.reshape(out, (b, gh * gw, flat))
    out = ad.reshape(image, (gh, patch_size, gw, patch_size, ch))
    out = ad.transpose(out, (0, 2, 1, 3, 4))
    return ad.reshape(out, (gh * gw, flat))


class AdapterBranch:
    """Bottleneck branch running parallel to a block's MLP."""

    def __init__(self, width, bottleneck, rng, scale_init=0.1):
        if bottleneck < 1 or bottleneck > width:
            raise ParameterError(
                f"adapter bottleneck must be in [1, {width}], got {bottleneck}"
            )
        self.w_down = Tensor(glorot_uniform(rng, width, bottleneck), requires_grad=True)
        # zero up-projection: the branch starts as an exact no-op
        self.w_up = Tensor(np.zeros((bottleneck, width)), requires_grad=True)
        self.scale = Tensor(np.array([scale_init]), requires_grad=True)

    def parameters(self, prefix):
        return {
            f"{prefix}.adapter.w_down": self.w_down,
            f"{prefix}.adapter.w_up": self.w_up,
            f"{prefix}.adapter.scale": self.scale,
        }


class EncoderBlock:
    """Pre-norm attention + MLP block, optionally adapter-augmented."""

    def __init__(self, width, heads, rng, adapter_dim=None):
        if width % heads:
            raise ParameterError(f"width {width} not divisible by heads {heads}")
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        hidden = 4 * width
        self.ln1_gain = Tensor(np.ones(width), requires_grad=True)
        self.ln1_bias = Tensor(np.zeros(width), requires_grad=True)
        self.wq = Tensor(glorot_uniform(rng, width, width), requires_grad=True)
        self.wk = Tensor(glorot_uniform(rng, width, width), requires_grad=True)
        self.wv = Tensor(glorot_uniform(rng, width, width), requires_grad=True)
        self.wo = Tensor(glorot_uniform(rng, width, width), requires_grad=True)
        self.ln2_gain = Tensor(np.ones(width), requires_grad=True)
        self.ln2_bias = Tensor(np.zeros(width), requires_grad=True)
        self.mlp_w1 = Tensor(glorot_uniform(rng, width, hidden), requires_grad=True)
        self.mlp_b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.mlp_w2 = Tensor(glorot_uniform(rng, hidden, width), requires_grad=True)
        self.mlp_b2 = Tensor(np.zeros(width), requires_grad=True)
        self.adapter = AdapterBranch(width, adapter_dim, rng) if adapter_dim else None

    def parameters(self, prefix):
        named = {
            f"{prefix}.ln1_gain": self.ln1_gain,
            f"{prefix}.ln1_bias": self.ln1_bias,
            f"{prefix}.wq": self.wq,
            f"{prefix}.wk": self.wk,
            f"{prefix}.wv": self.wv,
            f"{prefix}.wo": self.wo,
            f"{prefix}.ln2_gain": self.ln2_gain,
            f"{prefix}.ln2_bias": self.ln2_bias,
            f"{prefix}.mlp_w1": self.mlp_w1,
            f"{prefix}.mlp_b1": self.mlp_b1,
            f"{prefix}.mlp_w2": self.mlp_w2,
            f"{prefix}.mlp_b2": self.mlp_b2,
        }
        if self.adapter is not None:
            named.update(self.adapter.parameters(prefix))
        return named


def _affine_norm(x, gain, bias):
    return ad.add(ad.mul(ad.layer_norm(x), gain), bias)


def attention(block, x, return_weights=False):
    """Multi-head self-attention over [B, T, width]."""
    b, t, _ = x.shape
    h, dh = block.heads, block.head_dim

    def split_heads(proj):
        return ad.transpose(ad.reshape(proj, (b, t, h, dh)), (0, 2, 1, 3))

    # scale the (small) queries rather than the (large) score matrix
    q = ad.scale(split_heads(ad.matmul(x, block.wq)), 1.0 / np.sqrt(dh))
    k = split_heads(ad.matmul(x, block.wk))
    v = split_heads(ad.matmul(x, block.wv))
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2)))
    weights = ad.row_softmax(scores)
    mixed = ad.matmul(weights, v)
    merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (b, t, block.width))
    out = ad.matmul(merged, block.wo)
    if return_weights:
        return out, weights.data
    return out


def adapt_mlp(block, h_prime):
    """MLP sublayer with the parallel bottleneck branch and residual."""
    normed = _affine_norm(h_prime, block.ln2_gain, block.ln2_bias)
    mlp = ad.matmul(ad.relu(ad.add(ad.matmul(normed, block.mlp_w1), block.mlp_b1)),
                    block.mlp_w2)
    mlp = ad.add(mlp, block.mlp_b2)
    out = ad.add(mlp, h_prime)
    adapter = block.adapter
    if adapter is not None:
        branch = ad.matmul(ad.relu(ad.matmul(normed, adapter.w_down)), adapter.w_up)
        out = ad.add(out, ad.mul(branch, adapter.scale))
    return out


def block_forward(block, x):
    h_prime = ad.add(x, attention(block, _affine_norm(x, block.ln1_gain, block.ln1_bias)))
    return adapt_mlp(block, h_prime)


class TinyViT:
    """Desk-scale image encoder mapping images to shared-width embeddings."""

    def __init__(self, image_size=32, patch_size=4, depth=2, width=64, heads=4,
                 embed_dim=64, adapter_dim=16, adapters_enabled=True, seed=0):
        if image_size % patch_size:
            raise ParameterError(
                f"image size {image_size} not divisible by patch size {patch_size}"
            )
        self.image_size = image_size
        self.patch_size = patch_size
        self.depth = depth
        self.width = width
        self.heads = heads
        self.embed_dim = embed_dim
        self.adapters_enabled = bool(adapters_enabled) and adapter_dim is not None
        self.adapter_dim = adapter_dim if self.adapters_enabled else None
        tokens_per_side = image_size // patch_size
        self.num_tokens = tokens_per_side * tokens_per_side + 1
        patch_flat = patch_size * patch_size * 3
        rng = stream(seed, "vit")
        self.patch_proj = Tensor(glorot_uniform(rng, patch_flat, width), requires_grad=True)
        self.patch_bias = Tensor(np.zeros(width), requires_grad=True)
        self.cls_token = Tensor(rng.normal(0.0, 0.02, size=(1, width)), requires_grad=True)
        self.pos_embed = Tensor(rng.normal(0.0, 0.02, size=(self.num_tokens, width)),
                                requires_grad=True)
        self.blocks = [
            EncoderBlock(width, heads, rng, adapter_dim=self.adapter_dim)
            for _ in range(depth)
        ]
        self.head_proj = Tensor(glorot_uniform(rng, width, embed_dim), requires_grad=True)

    def parameters(self):
        named = {
            "vit.patch_proj": self.patch_proj,
            "vit.patch_bias": self.patch_bias,
            "vit.cls_token": self.cls_token,
            "vit.pos_embed": self.pos_embed,
        }
        for i, block in enumerate(self.blocks):
            named.update(block.parameters(f"vit.blocks.{i}"))
        named["vit.head_proj"] = self.head_proj
        return named


def encode_batch(vit, images):
    """Embed a batch of images: [B, H, W, 3] -> [B, embed_dim]."""
    if not isinstance(images, Tensor):
        images = Tensor(np.asarray(images, dtype=np.float64))
    if images.ndim != 4:
        raise DimensionError(f"expected [B, H, W, 3], got {images.shape}")
    b, h, w, _ = images.shape
    if h != vit.image_size or w != vit.image_size:
        raise DimensionError(
            f"image is {h}x{w} but the encoder expects "
            f"{vit.image_size}x{vit.image_size}"
        )
    patches = patchify(images, vit.patch_size)
    tokens = ad.add(ad.matmul(patches, vit.patch_proj), vit.patch_bias)
    cls = ad.add(Tensor(np.zeros((b, 1, vit.width))), vit.cls_token)
    x = ad.concat([cls, tokens], axis=1)
    x = ad.add(x, vit.pos_embed)
    for block in vit.blocks:
        x = block_forward(block, x)
    cls_state = ad.select_index(x, 0, axis=1)
    return ad.matmul(cls_state, vit.head_proj)


def encode_image(vit, image):
    """Embed a single [H, W, 3] image into a 1-D embedding."""
    if isinstance(image, Tensor):
        if image.ndim != 3:
            raise DimensionError(f"expected [H, W, 3], got {image.shape}")
        batched = ad.reshape(image, (1,) + image.shape)
    else:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3:
            raise DimensionError(f"expected [H, W, 3], got {image.shape}")
        batched = Tensor(image[None])
    out = encode_batch(vit, batched)
    return ad.reshape(out, (vit.embed_dim,))


def apply_peft(vit, mode):
    """Trainability flags for every encoder parameter.

    ``full`` marks everything trainable. ``peft`` freezes the backbone and
    leaves only the adapter branches plus the head projection trainable.
    """
    if mode not in ("full", "peft"):
        raise ParameterError(f"unknown fine-tuning mode: {mode!r}")
    names = vit.parameters().keys()
    if mode == "full":
        return {name: True for name in names}
    if not vit.adapters_enabled:
        raise ConfigError("peft mode requires adapter branches to be enabled")
    return {
        name: (".adapter." in name or name == "vit.head_proj")
        for name in names
    }


def peft_trainable_count(vit):
    """Closed-form trainable-parameter count under peft mode."""
    d_hat = vit.adapter_dim or 0
    per_block = vit.width * d_hat + d_hat * vit.width + 1
    return vit.depth * per_block + vit.width * vit.embed_dim
