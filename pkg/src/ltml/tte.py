"""Five-crop test-time ensembling.

A test image is resized to (base + e) per side and cut into five base-sized
crops (center plus the four corners), whose per-crop probabilities are
averaged. The enlargement e must be even (the center offset e/2 has to be
integral) and must not be a multiple of the encoder patch size, since
patch-aligned crops would hit identical patch grids and defeat the ensemble.

Probabilities are averaged by default; logit averaging is available behind
a config switch for comparison runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, ParameterError

NUM_CROPS = 5


@dataclass
class TteConfig:
    enlarge: int = 6            # e: resize headroom in pixels
    base_size: int = 32         # model input side
    average: str = "probs"      # "probs" or "logits"

    def validate(self, patch_size):
        if self.enlarge < 1:
            raise ConfigError(f"enlargement e must be >= 1, got {self.enlarge}")
        if self.enlarge % 2:
            raise ConfigError(
                f"enlargement e must be even for an integral center offset, "
                f"got {self.enlarge}"
            )
        if self.enlarge % patch_size == 0:
            raise ConfigError(
                f"e={self.enlarge} is invalid: e must not be a multiple of the "
                f"ViT patch size ({patch_size}), otherwise crops share patch "
                f"grids and lose diversity"
            )
        if self.average not in ("probs", "logits"):
            raise ConfigError(f"unknown tte average mode: {self.average!r}")
        return self


def resize_bilinear(image, side):
    """Corner-aligned bilinear resize of [H, W, C] to side x side."""
    if side < 1:
        raise ParameterError(f"resize side must be >= 1, got {side}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise DimensionError(f"expected [H, W, C], got {image.shape}")
    h, w, _ = image.shape
    if h == side and w == side:
        return image.copy()
    out = _interp_axis(image, side, axis=0)
    out = _interp_axis(out, side, axis=1)
    return out


def _interp_axis(arr, side, axis):
    n = arr.shape[axis]
    if side == 1:
        coords = np.array([0.0])
    else:
        coords = np.arange(side) * (n - 1) / (side - 1)
    lo = np.floor(coords).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = coords - lo
    shape = [1, 1, 1]
    shape[axis] = side
    frac = frac.reshape(shape)
    return np.take(arr, lo, axis=axis) * (1 - frac) + np.take(arr, hi, axis=axis) * frac


def crop_origins(e):
    """(row, col) origins: center, top-left, top-right, bottom-left, bottom-right."""
    half = e // 2
    return [(half, half), (0, 0), (0, e), (e, 0), (e, e)]


def five_crops(image, base_size, e):
    """Cut the five base_size crops out of a (base_size + e)-sided image."""
    image = np.asarray(image)
    expected = base_size + e
    if image.shape[0] != expected or image.shape[1] != expected:
        raise DimensionError(
            f"five_crops needs a {expected}x{expected} image, got "
            f"{image.shape[0]}x{image.shape[1]}"
        )
    return [
        image[r:r + base_size, c:c + base_size].copy()
        for r, c in crop_origins(e)
    ]


def ensemble_predict(model, image, cfg):
    """Mean per-class probability over the five crops of one image.

    ``model`` must expose ``patch_size``, ``probabilities(images)`` and
    ``logits(images)`` over [B, H, W, 3] batches. Crops are evaluated in
    one batch; the mean runs in fixed crop order.
    """
    cfg.validate(model.patch_size)
    enlarged = resize_bilinear(image, cfg.base_size + cfg.enlarge)
    crops = np.stack(five_crops(enlarged, cfg.base_size, cfg.enlarge))
    if cfg.average == "probs":
        per_crop = model.probabilities(crops)
        return per_crop.mean(axis=0)
    per_crop = model.logits(crops)
    mean_logits = per_crop.mean(axis=0)
    return 1.0 / (1.0 + np.exp(-mean_logits))
