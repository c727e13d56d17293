"""End-to-end training and evaluation loops.

Each training step samples a batch, recomputes the fused class features
(prompts -> text encoder -> GCN -> residual), embeds the batch images,
forms temperature-scaled cosine logits, applies the rebalanced focal loss,
and runs one Adam update over the trainable parameters: GCN weights at
their own learning rate, everything else at the backbone rate.

Scenes larger than the encoder input are reduced to encoder-sized windows:
a seeded random window per image per step during training, the center
window at plain evaluation time. Five-crop ensembling therefore scores
views from the same window population the model trained on.

Class frequencies for the loss come from the full training set once, up
front. The per-batch variant (recomputing counts from each batch) is kept
behind a flag for fidelity experiments; dataset-level counts are what the
loss definitions are written in terms of and are the default.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    def threadpool_limits(limits=None):
        return contextlib.nullcontext()

from .autodiff import finite_checks
from .data import ClassAwareSampler, UniformSampler
from .errors import CompatibilityError, DimensionError, NumericsError, ParameterError
from .seeding import stream
from .losses import LossConfig, db_focal_loss
from .metrics import stratified_map
from .model import build_model
from .optim import Adam
from .tte import NUM_CROPS, five_crops, resize_bilinear


@dataclass
class TrainState:
    model: object
    loss_history: list = field(default_factory=list)  # (step, epoch, loss)
    step: int = 0
    frozen_hash: str = ""
    loss_cfg: LossConfig | None = None


def make_loss_config(cfg_loss, class_counts, total):
    return LossConfig(
        alpha=cfg_loss["alpha"],
        beta=cfg_loss["beta"],
        theta=cfg_loss["theta"],
        gamma=cfg_loss["gamma"],
        kappa=cfg_loss["kappa"],
        zeta=cfg_loss["zeta"],
        class_counts=class_counts,
        total=total,
    )


def _make_sampler(kind, labels, seed):
    if kind == "class_aware":
        return ClassAwareSampler(labels, seed=seed)
    if kind == "uniform":
        return UniformSampler(labels.shape[0], seed=seed)
    raise ParameterError(f"unknown sampler kind: {kind!r}")


def _window_headroom(ds, model):
    margin = ds.image_size - model.input_size
    if margin < 0:
        raise DimensionError(
            f"dataset images are {ds.image_size}px but the encoder needs "
            f"{model.input_size}px"
        )
    return margin


def random_windows(images, window, rng):
    """One seeded random window per image (train-time view sampling)."""
    n, side = images.shape[0], images.shape[1]
    margin = side - window
    if margin == 0:
        return images
    rows = rng.integers(0, margin + 1, size=n)
    cols = rng.integers(0, margin + 1, size=n)
    out = np.empty((n, window, window, images.shape[3]), dtype=images.dtype)
    for i in range(n):
        out[i] = images[i, rows[i]:rows[i] + window, cols[i]:cols[i] + window]
    return out


def center_windows(images, window):
    """The deterministic center window (plain evaluation view)."""
    side = images.shape[1]
    margin = side - window
    if margin == 0:
        return images
    off = margin // 2
    return images[:, off:off + window, off:off + window]


def train(train_ds, cfg, model=None):
    """Run the configured number of epochs; returns the final TrainState."""
    tcfg = cfg["train"]
    if tcfg["epochs"] < 0 or tcfg["batch_size"] < 1:
        raise ParameterError("epochs must be >= 0 and batch_size >= 1")
    if tcfg["lr_backbone"] <= 0 or tcfg["lr_gcn"] <= 0:
        raise ParameterError("learning rates must be positive")
    if model is None:
        model = build_model(cfg, train_ds.num_classes, train_labels=train_ds.labels)

    counts = np.maximum(train_ds.class_counts, 1)
    loss_cfg = make_loss_config(cfg["loss"], counts, train_ds.num_samples)

    mode = tcfg["mode"]
    mask = model.trainable_mask(mode)
    params = model.parameters()
    for name, tensor in params.items():
        # frozen parameters drop out of the tape entirely
        tensor.requires_grad = bool(mask[name])
    groups = [
        (name, tensor, tcfg["lr_gcn"] if name.startswith("gcn.") else tcfg["lr_backbone"])
        for name, tensor in params.items()
        if mask[name]
    ]
    optimizer = Adam(groups)
    frozen_before = model.frozen_hash(mode)

    sampler = _make_sampler(tcfg["sampler"], train_ds.labels, cfg["seed"])
    _window_headroom(train_ds, model)
    window_rng = stream(cfg["seed"], "train-windows")
    steps_per_epoch = math.ceil(train_ds.num_samples / tcfg["batch_size"])
    state = TrainState(model=model, loss_cfg=loss_cfg)

    images64 = train_ds.images.astype(np.float64)
    # the step's many small GEMMs run fastest on one BLAS thread, and a
    # pinned pool keeps results identical across differently-sized hosts
    with threadpool_limits(1):
        for epoch in range(tcfg["epochs"]):
            for _ in range(steps_per_epoch):
                indices = sampler.batch(tcfg["batch_size"])
                batch_images = random_windows(images64[indices],
                                              model.input_size, window_rng)
                batch_labels = train_ds.labels[indices]
                if cfg["loss"]["batch_level_counts"]:
                    batch_counts = np.maximum(batch_labels.sum(axis=0), 1)
                    step_cfg = make_loss_config(cfg["loss"], batch_counts,
                                                len(indices))
                else:
                    step_cfg = loss_cfg
                try:
                    with finite_checks(False):
                        logits = model.training_logits(batch_images)
                        loss = db_focal_loss(logits, batch_labels, step_cfg)
                except NumericsError as err:
                    raise NumericsError(
                        f"non-finite values at step {state.step} (epoch {epoch}, "
                        f"seed {cfg['seed']}, batch indices {list(indices[:8])}...): "
                        f"{err}"
                    ) from err
                loss_val = loss.item()
                if not math.isfinite(loss_val):
                    raise NumericsError(
                        f"non-finite loss at step {state.step} (epoch {epoch}, "
                        f"seed {cfg['seed']}, batch indices {list(indices[:8])}...)"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                model.head.clamp()
                state.loss_history.append((state.step, epoch, loss_val))
                state.step += 1

    frozen_after = model.frozen_hash(mode)
    if frozen_after != frozen_before:
        raise NumericsError("frozen parameters changed during training")
    state.frozen_hash = frozen_after
    return state


def evaluate(model, test_ds, strat, tte_cfg=None, batch_size=64):
    """Stratified AP report over a test set; returns (report, probabilities).

    With a TTE config, each image is scored as the five-crop ensemble mean;
    otherwise images are scored in plain batches.
    """
    if test_ds.num_classes != model.num_classes:
        raise CompatibilityError(
            f"checkpoint has {model.num_classes} classes, dataset has "
            f"{test_ds.num_classes}"
        )
    images = test_ds.images.astype(np.float64)
    n = test_ds.num_samples
    with threadpool_limits(1):
        if tte_cfg is not None:
            # the ensemble resizes, so any scene size works
            tte_cfg.validate(model.patch_size)
            probs = _tte_probabilities(model, images, tte_cfg)
        else:
            _window_headroom(test_ds, model)
            images = center_windows(images, model.input_size)
            parts = []
            for start in range(0, n, batch_size):
                parts.append(model.probabilities(images[start:start + batch_size]))
            probs = np.concatenate(parts, axis=0)
    report = stratified_map(probs, test_ds.labels, strat)
    return report, probs


def _tte_probabilities(model, images, cfg, images_per_batch=12):
    """Five-crop ensemble means, with crops batched across images."""
    side = cfg.base_size + cfg.enlarge
    out = []
    for start in range(0, images.shape[0], images_per_batch):
        chunk = images[start:start + images_per_batch]
        crops = []
        for image in chunk:
            enlarged = resize_bilinear(image, side)
            crops.extend(five_crops(enlarged, cfg.base_size, cfg.enlarge))
        per_crop = (model.probabilities if cfg.average == "probs"
                    else model.logits)(np.stack(crops))
        means = per_crop.reshape(len(chunk), NUM_CROPS, -1).mean(axis=1)
        if cfg.average == "logits":
            means = 1.0 / (1.0 + np.exp(-means))
        out.append(means)
    return np.concatenate(out, axis=0)
