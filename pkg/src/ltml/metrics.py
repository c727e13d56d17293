"""Per-class average precision and stratified mean AP.

AP averages precision at each positive's rank, sorting by descending score
with ties broken by ascending sample index so results are deterministic.
Classes without a positive in the evaluation set have undefined AP; they
are excluded from every mean and listed in the report rather than scored
as zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

GROUP_ORDER = ("head", "medium", "tail")


class UndefinedAPError(ValueError):
    """Raised when a class has no positive labels to rank."""


def average_precision(scores, labels):
    """AP of one class over the evaluation set.

    precision@k is accumulated at every rank k holding a positive and
    averaged over the number of positives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DimensionError(
            f"scores {scores.shape} and labels {labels.shape} must be equal 1-D"
        )
    positives = int(labels.sum())
    if positives == 0:
        raise UndefinedAPError("no positive labels; AP undefined")
    order = np.lexsort((np.arange(scores.size), -scores))
    ranked = labels[order]
    hits = np.cumsum(ranked)
    ranks = np.arange(1, scores.size + 1)
    precision_at_hits = hits[ranked == 1] / ranks[ranked == 1]
    return float(precision_at_hits.sum() / positives)


@dataclass
class EvalReport:
    """Stratified AP summary; group values are None when a group is empty."""

    per_class_ap: list
    total_map: float
    head_map: float | None
    medium_map: float | None
    tail_map: float | None
    group_sizes: dict = field(default_factory=dict)
    skipped_classes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "per_class_ap": self.per_class_ap,
            "total_map": self.total_map,
            "head_map": self.head_map,
            "medium_map": self.medium_map,
            "tail_map": self.tail_map,
            "group_sizes": self.group_sizes,
            "skipped_classes": self.skipped_classes,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_table(self):
        """Aligned Total / Head / Medium / Tail text table."""
        headers = ["Total", "Head", "Medium", "Tail"]
        values = [self.total_map, self.head_map, self.medium_map, self.tail_map]
        cells = ["absent" if v is None else f"{v:.4f}" for v in values]
        sizes = [
            str(sum(self.group_sizes.values())),
            str(self.group_sizes.get("head", 0)),
            str(self.group_sizes.get("medium", 0)),
            str(self.group_sizes.get("tail", 0)),
        ]
        width = 8
        lines = [
            "        " + "".join(h.rjust(width) for h in headers),
            "mAP     " + "".join(c.rjust(width) for c in cells),
            "classes " + "".join(s.rjust(width) for s in sizes),
        ]
        if self.skipped_classes:
            lines.append(f"skipped (no positives): {self.skipped_classes}")
        return "\n".join(lines)


def stratified_map(probs, labels, strat):
    """Per-class AP plus total and per-group means.

    ``strat`` carries the head/medium/tail assignment (built from training
    frequencies). The total is the mean over all classes with defined AP,
    not the mean of the three group means.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape or probs.ndim != 2:
        raise DimensionError(
            f"probs {probs.shape} and labels {labels.shape} must be equal 2-D"
        )
    num_classes = probs.shape[1]
    if len(strat.assignment) != num_classes:
        raise DimensionError(
            f"stratification covers {len(strat.assignment)} classes, "
            f"data has {num_classes}"
        )
    per_class = []
    skipped = []
    for c in range(num_classes):
        try:
            per_class.append(average_precision(probs[:, c], labels[:, c]))
        except UndefinedAPError:
            per_class.append(None)
            skipped.append(c)
    defined = [ap for ap in per_class if ap is not None]
    total = float(np.mean(defined)) if defined else float("nan")
    group_values = {}
    group_sizes = {}
    for name in GROUP_ORDER:
        members = [
            per_class[c]
            for c in range(num_classes)
            if strat.assignment[c] == name and per_class[c] is not None
        ]
        group_sizes[name] = sum(
            1 for c in range(num_classes) if strat.assignment[c] == name
        )
        group_values[name] = float(np.mean(members)) if members else None
    return EvalReport(
        per_class_ap=per_class,
        total_map=total,
        head_map=group_values["head"],
        medium_map=group_values["medium"],
        tail_map=group_values["tail"],
        group_sizes=group_sizes,
        skipped_classes=skipped,
    )
