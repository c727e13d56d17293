"""Sigmoid prediction head and the rebalanced focal training loss.

Predictions are independent per class: sigmoid of the cosine similarity
between the image embedding and each fused class feature, divided by a
learned temperature. There is deliberately no cross-class normalization;
multiple classes may all score high on one image.

The training loss extends focal loss with three imbalance-aware pieces:

* a per-class rebalancing weight r_c = alpha + sigmoid(beta (N/n_c - theta))
  that grows as a class gets rarer,
* a frequency margin v_c = kappa * log(N/n_c - 1) subtracted from the
  logits, and
* a negative-side scaling zeta that tempers the flood of negative terms a
  multi-label batch produces.

Setting gamma=0, zeta=1, kappa=0 and a flat r recovers plain binary
cross-entropy; keeping gamma recovers standard focal loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    DimensionError,
    FrequencyError,
    LabelError,
    ParameterError,
)

LOG_FLOOR = 1e-12
TAU_MIN = 5e-3
TAU_MAX = 1.0


@dataclass
class LossConfig:
    """Hyperparameters plus the class-frequency table the loss depends on.

    Desk-scale defaults: training starts from a seeded (not pretrained)
    backbone, where aggressive focal down-weighting starves early learning,
    so gamma and zeta sit below their fine-tuning-era values and alpha
    keeps the overall weight near one.
    """

    alpha: float = 0.5
    beta: float = 0.01
    theta: float = 0.1
    gamma: float = 0.5
    kappa: float = 0.05
    zeta: float = 1.5
    class_counts: np.ndarray = field(default_factory=lambda: np.array([1]))
    total: int = 1

    def __post_init__(self):
        if self.zeta <= 0:
            raise ParameterError(f"zeta must be > 0, got {self.zeta}")
        if self.gamma < 0:
            raise ParameterError(f"gamma must be >= 0, got {self.gamma}")
        self.class_counts = np.asarray(self.class_counts, dtype=np.float64)

    @classmethod
    def bce(cls, class_counts, total):
        """Plain binary cross-entropy expressed in this parameterization."""
        return cls(alpha=0.5, beta=0.0, theta=0.0, gamma=0.0, kappa=0.0,
                   zeta=1.0, class_counts=class_counts, total=total)

    @classmethod
    def focal(cls, class_counts, total, gamma=2.0):
        """Standard focal loss (no rebalancing, no margin, no negative scaling)."""
        return cls(alpha=0.5, beta=0.0, theta=0.0, gamma=gamma, kappa=0.0,
                   zeta=1.0, class_counts=class_counts, total=total)


class PredictionHead:
    """Learned positive temperature under the sigmoid, kept in a clamp range."""

    def __init__(self, init=0.07):
        self.tau = Tensor(np.array([init]), requires_grad=True)

    def clamp(self):
        np.clip(self.tau.data, TAU_MIN, TAU_MAX, out=self.tau.data)

    def parameters(self):
        return {"head.tau": self.tau}


def cosine_logits(image_embeds, class_features, head):
    """Temperature-scaled cosine similarity logits [B, C] (pre-sigmoid)."""
    if image_embeds.shape[-1] != class_features.shape[-1]:
        raise DimensionError(
            f"embedding widths disagree: {image_embeds.shape} vs {class_features.shape}"
        )
    v = ad.row_l2_normalize(image_embeds, what="image embedding")
    f = ad.row_l2_normalize(class_features, what="class feature")
    cos = ad.matmul(v, ad.transpose(f))
    return ad.mul(cos, ad.power(head.tau, -1.0))


def predict_probs(image_embeds, class_features, head):
    """Per-class probabilities in (0, 1); rows are not normalized."""
    return ad.sigmoid(cosine_logits(image_embeds, class_features, head))


def rebalanced_weights(cfg):
    """Per-class weight r_c; strictly decreasing in class frequency."""
    counts = np.asarray(cfg.class_counts, dtype=np.float64)
    if np.any(counts < 1):
        raise FrequencyError(
            f"every class needs at least one instance, got counts {counts}"
        )
    ratio = cfg.total / counts
    return cfg.alpha + _sigmoid(cfg.beta * (ratio - cfg.theta))


def class_biases(cfg):
    """Frequency margin v_c = kappa * log(N/n_c - 1), clamped at the head end."""
    counts = np.asarray(cfg.class_counts, dtype=np.float64)
    if np.any(counts < 1):
        raise FrequencyError(
            f"every class needs at least one instance, got counts {counts}"
        )
    inner = np.clip(cfg.total / counts - 1.0, 1e-6, None)
    return cfg.kappa * np.log(inner)


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def db_focal_loss(logits, labels, cfg):
    """Rebalanced focal loss over a batch of pre-sigmoid logits.

    Positive terms use q = sigmoid(z - v_c) and weight r_c (1-q)^gamma;
    negative terms use q = sigmoid(zeta (z - v_c)) and weight (r_c / zeta)
    q^gamma. Per-sample losses sum over classes; the batch reduces by mean.
    """
    labels = np.asarray(labels)
    if labels.shape != logits.shape:
        raise DimensionError(
            f"labels {labels.shape} do not match logits {logits.shape}"
        )
    if not np.all((labels == 0) | (labels == 1)):
        raise LabelError("labels must be binary (0/1)")
    labels = labels.astype(np.float64)
    r = Tensor(rebalanced_weights(cfg))       # [C]
    v = Tensor(class_biases(cfg))             # [C]
    pos_mask = Tensor(labels)
    neg_mask = Tensor(1.0 - labels)

    shifted = ad.sub(logits, v)
    q_pos = ad.sigmoid(shifted)
    q_neg = ad.sigmoid(ad.scale(shifted, cfg.zeta))

    pos_term = ad.mul(
        ad.mul(r, ad.power(ad.sub(1.0, q_pos), cfg.gamma)),
        ad.log(ad.clamp_min(q_pos, LOG_FLOOR)),
    )
    neg_term = ad.mul(
        ad.mul(ad.scale(r, 1.0 / cfg.zeta), ad.power(q_neg, cfg.gamma)),
        ad.log(ad.clamp_min(ad.sub(1.0, q_neg), LOG_FLOOR)),
    )
    per_element = ad.add(ad.mul(pos_mask, pos_term), ad.mul(neg_mask, neg_term))
    per_sample = ad.tensor_sum(per_element, axis=1)
    return ad.scale(ad.tensor_mean(per_sample), -1.0)
