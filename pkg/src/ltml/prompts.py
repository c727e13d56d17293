"""Learnable class prompts and the frozen text-encoder stand-ins.

Each class gets a bank of learnable context tokens followed by a frozen
class token. Two encoder backends turn those tokens into class embeddings:

* ``toy``: a frozen, seeded two-layer nonlinear map. Gradients flow back
  into the context tokens but never into the map itself.
* ``file``: precomputed per-class embeddings loaded from JSON, offset by a
  frozen projection of the mean context so the prompts stay trainable.

Both preserve the property that matters for training: the encoder is
frozen, the prompts are not.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    DataFormatError,
    DegenerateEmbeddingError,
    ParameterError,
)
from .seeding import glorot_uniform, stream

# Canonical context length used for the frozen prior embeddings ("a photo
# of a" is four tokens in the template stand-in).
PRIOR_CONTEXT_LENGTH = 4

_CONTEXT_STD = 0.02


class PromptBank:
    """Per-class learnable context tokens plus frozen class tokens."""

    def __init__(self, context, class_tokens, mode):
        self.context = context            # Tensor [C, M, d_tok], learnable
        self.class_tokens = class_tokens  # Tensor [C, d_tok], frozen
        self.mode = mode

    @property
    def num_classes(self):
        return self.context.shape[0]

    @property
    def length(self):
        return self.context.shape[1]

    @property
    def token_width(self):
        return self.context.shape[2]


def class_token_matrix(num_classes, d_tok, seed):
    """Frozen class tokens, each drawn from a hash of its class index."""
    rows = [
        stream(seed, "class-token", c).normal(size=d_tok)
        for c in range(num_classes)
    ]
    return np.stack(rows, axis=0)


def template_context(length, d_tok, seed):
    """The shared seeded token sequence standing in for a text template."""
    return stream(seed, "template-context").normal(0.0, _CONTEXT_STD, size=(length, d_tok))


def init_prompts(num_classes, length, d_tok, mode="template", seed=0):
    """Build a PromptBank.

    ``template`` gives every class the same seeded starting context (the
    stand-in for initializing from a meaningful shared phrase); ``random``
    draws an independent context per class.
    """
    if num_classes < 1 or d_tok < 1:
        raise ParameterError("num_classes and d_tok must be >= 1")
    if length < 1:
        raise ParameterError(f"prompt length must be >= 1, got {length}")
    if mode == "template":
        shared = template_context(length, d_tok, seed)
        context = np.broadcast_to(shared, (num_classes, length, d_tok)).copy()
    elif mode == "random":
        context = stream(seed, "random-context").normal(
            0.0, _CONTEXT_STD, size=(num_classes, length, d_tok)
        )
    else:
        raise ParameterError(f"unknown prompt init mode: {mode!r}")
    tokens = class_token_matrix(num_classes, d_tok, seed)
    return PromptBank(
        context=Tensor(context, requires_grad=True),
        class_tokens=Tensor(tokens),
        mode=mode,
    )


class TextEncoder:
    """Frozen map from prompt tokens to class embeddings.

    kind="toy": f_c = tanh((mean context_c + class_token_c) W1) W2 with
    seeded frozen W1, W2.
    kind="file": f_c = table_c + (mean context_c) P with a seeded frozen
    projection P and a fixed embeddings table.
    """

    def __init__(self, kind, d_tok, d, seed=0, table=None, class_names=None):
        if kind not in ("toy", "file"):
            raise ParameterError(f"unknown text encoder kind: {kind!r}")
        self.kind = kind
        self.d_tok = d_tok
        self.d = d
        self.seed = seed
        self.class_names = class_names
        rng = stream(seed, "text-encoder")
        if kind == "toy":
            hidden = d
            self.w1 = Tensor(glorot_uniform(rng, d_tok, hidden))
            self.w2 = Tensor(glorot_uniform(rng, hidden, d))
            self.table = None
        else:
            if table is None:
                raise ParameterError("file text encoder needs an embeddings table")
            table = np.asarray(table, dtype=np.float64)
            if table.ndim != 2 or table.shape[1] != d:
                raise ParameterError(
                    f"embeddings table must be C x {d}, got {table.shape}"
                )
            norms = np.linalg.norm(table, axis=1)
            if np.any(norms <= 1e-12):
                raise DegenerateEmbeddingError(int(np.argmin(norms)), what="table row")
            self.table = Tensor(table)
            self.projection = Tensor(glorot_uniform(rng, d_tok, d))

    def frozen_values(self):
        """Arrays that must never change during training (audit hook)."""
        if self.kind == "toy":
            return {"text.w1": self.w1.data, "text.w2": self.w2.data}
        return {"text.table": self.table.data, "text.projection": self.projection.data}


def encode_classes(bank, encoder):
    """Class embeddings [C, d] with gradients flowing into the context only."""
    if bank.token_width != encoder.d_tok:
        raise ParameterError(
            f"token width mismatch: bank {bank.token_width}, encoder {encoder.d_tok}"
        )
    mean_ctx = ad.tensor_mean(bank.context, axis=1)  # [C, d_tok]
    if encoder.kind == "toy":
        mixed = ad.add(mean_ctx, bank.class_tokens)
        return ad.matmul(ad.tanh(ad.matmul(mixed, encoder.w1)), encoder.w2)
    offset = ad.matmul(mean_ctx, encoder.projection)
    return ad.add(encoder.table, offset)


def prior_embeddings(encoder, num_classes):
    """Frozen per-class prior embeddings as a d x C matrix.

    Uses the fixed template context (never the learnable prompts), with
    columns L2-normalized; computed once per run and cached by the caller.
    """
    if encoder.kind == "toy":
        shared = template_context(PRIOR_CONTEXT_LENGTH, encoder.d_tok, encoder.seed)
        mean_ctx = shared.mean(axis=0)
        tokens = class_token_matrix(num_classes, encoder.d_tok, encoder.seed)
        raw = np.tanh((tokens + mean_ctx) @ encoder.w1.data) @ encoder.w2.data
    else:
        if encoder.table.shape[0] != num_classes:
            raise ParameterError(
                f"embeddings table has {encoder.table.shape[0]} rows, expected {num_classes}"
            )
        raw = encoder.table.data.copy()
    norms = np.linalg.norm(raw, axis=1)
    if np.any(norms <= 1e-12):
        raise DegenerateEmbeddingError(int(np.argmin(norms)), what="class prior")
    return Tensor((raw / norms[:, None]).T)


def load_embeddings_file(path):
    """Read the class-embeddings JSON and validate it.

    Expected shape: {"classes": [...], "dim": int, "embeddings": [[...], ...]}
    with one row per class, each of length dim, all values finite.
    """
    if not os.path.exists(path):
        raise DataFormatError(f"embeddings file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise DataFormatError(f"cannot parse embeddings file {path}: {err}") from err
    for key in ("classes", "dim", "embeddings"):
        if key not in payload:
            raise DataFormatError(f"embeddings file missing key {key!r}")
    classes = payload["classes"]
    dim = payload["dim"]
    rows = payload["embeddings"]
    if not isinstance(dim, int) or dim < 1:
        raise DataFormatError(f"embeddings dim must be a positive int, got {dim!r}")
    if len(rows) != len(classes):
        raise DataFormatError(
            f"embeddings count {len(rows)} != class count {len(classes)}"
        )
    for i, row in enumerate(rows):
        if len(row) != dim:
            raise DataFormatError(
                f"embeddings row {i} has length {len(row)}, expected {dim}"
            )
        for v in row:
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise DataFormatError(f"non-finite value in embeddings row {i}")
    table = np.asarray(rows, dtype=np.float64)
    return classes, table
