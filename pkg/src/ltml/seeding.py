"""Deterministic RNG streams.

Every random draw in the package flows through ``stream(seed, *tags)`` so
that independent components (model init, samplers, noise) get decoupled
generators while remaining bit-reproducible for a given top-level seed.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed, *tags):
    """A numpy Generator keyed by an integer seed plus string/int tags."""
    keys = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            keys.append(zlib.crc32(tag.encode("utf-8")))
        else:
            keys.append(int(tag) & 0xFFFFFFFF)
    return np.random.default_rng(keys)


def glorot_uniform(rng, fan_in, fan_out, shape=None):
    """Glorot/Xavier uniform init for a weight of the given fan pair."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)
