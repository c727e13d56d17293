"""Synthetic long-tailed multi-label imagery.

Class frequencies follow an exponential profile controlled by a single
imbalance ratio (frequency of the most common class over the rarest).
Label sets are drawn by picking a seed class proportionally to that
profile, then adding other classes from a planted co-occurrence matrix, so
rare classes systematically co-occur with frequent ones and a correlation
graph has real structure to exploit.

Images are sums of per-class prototype patterns stamped at class-specific
locations plus Gaussian noise of standard deviation 1/snr. Prototypes,
stamp locations, and the co-occurrence matrix depend only on the class
count (fixed internal salts), never on the dataset seed, so train and test
splits generated with different seeds share the same visual and
correlation structure.

Scenes default to a few pixels larger than the encoder input: training
draws random encoder-sized windows from them, the plain evaluation path
takes the center window, and five-crop ensembling sees exactly that window
population.

On-disk format: magic "LTML", format version u32 LE, then N, H, W, C as
u32 LE, then labels as N*C bytes in {0, 1}, then images as N*H*W*3 float32
LE, plus a sidecar JSON manifest next to the file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, FrequencyError, ParameterError
from .seeding import stream

MAGIC = b"LTML"
FORMAT_VERSION = 1

PROTO_SIZE = 6
PROTO_GRID_STRIDE = 6
PROTO_COARSE = 3

# salts for structure that must be identical across train/test splits
_STRUCT_SEED = 271828
_PROTO_SEED = 314159

DEFAULT_HEAD_MIN = 100
DEFAULT_TAIL_MAX = 20


@dataclass
class Dataset:
    images: np.ndarray          # [N, H, W, 3] float32
    labels: np.ndarray          # [N, C] uint8
    class_counts: np.ndarray    # [C] int64, column sums of labels
    split: str = "train"
    seed: int = 0
    imbalance_ratio: float = 1.0

    @property
    def num_samples(self):
        return self.labels.shape[0]

    @property
    def num_classes(self):
        return self.labels.shape[1]

    @property
    def image_size(self):
        return self.images.shape[1]


def frequency_targets(num_classes, imbalance_ratio, n1=None, total=None):
    """Per-class target frequencies n_c = round(n1 * exp(-lambda c)).

    lambda = ln(imbalance_ratio) / (C - 1). Exactly one of ``n1`` (explicit
    head-class count) or ``total`` (approximate sum) must be given.
    """
    if imbalance_ratio < 1:
        raise ParameterError(f"imbalance_ratio must be >= 1, got {imbalance_ratio}")
    lam = np.log(imbalance_ratio) / (num_classes - 1)
    weights = np.exp(-lam * np.arange(num_classes))
    if n1 is None:
        if total is None:
            raise ParameterError("need n1 or total")
        n1 = total / weights.sum()
    targets = np.rint(n1 * weights).astype(np.int64)
    return np.maximum(targets, 1)


def class_locations(num_classes, image_size):
    """Top-left stamp corner per class, cycling over a fixed grid."""
    per_side = max(1, (image_size - PROTO_SIZE) // PROTO_GRID_STRIDE + 1)
    slots = [
        (r * PROTO_GRID_STRIDE, c * PROTO_GRID_STRIDE)
        for r in range(per_side)
        for c in range(per_side)
    ]
    return [slots[c % len(slots)] for c in range(num_classes)]


def class_prototypes(num_classes):
    """Smooth unit-RMS prototype patterns, one per class.

    Each is a coarse seeded random grid bilinearly upsampled, so the
    pattern survives mild rescaling and sub-patch shifts at test time.
    """
    protos = np.empty((num_classes, PROTO_SIZE, PROTO_SIZE, 3))
    grid = np.linspace(0.0, PROTO_COARSE - 1.0, PROTO_SIZE)
    lo = np.floor(grid).astype(int)
    hi = np.minimum(lo + 1, PROTO_COARSE - 1)
    frac = grid - lo
    for c in range(num_classes):
        coarse = stream(_PROTO_SEED, "prototype", c).normal(
            size=(PROTO_COARSE, PROTO_COARSE, 3))
        rows = (coarse[lo] * (1 - frac)[:, None, None]
                + coarse[hi] * frac[:, None, None])
        fine = (rows[:, lo] * (1 - frac)[None, :, None]
                + rows[:, hi] * frac[None, :, None])
        protos[c] = fine / np.sqrt(np.mean(fine ** 2))
    return protos


def cooccurrence_matrix(num_classes, imbalance_ratio):
    """Planted P(add class j | seed class i), independent of dataset seed.

    Baseline add-probabilities scale with the target frequency of the
    added class (so rare classes stay rare), and every class except the
    most frequent gets one strongly linked partner among the more frequent
    classes, which is the head-tail co-occurrence structure a correlation graph
    should pick up.
    """
    lam = np.log(imbalance_ratio) / (num_classes - 1) if num_classes > 1 else 0.0
    weights = np.exp(-lam * np.arange(num_classes))
    q = 0.3 * np.tile(weights / weights[0], (num_classes, 1))
    rng = stream(_STRUCT_SEED, "partners", num_classes)
    for c in range(1, num_classes):
        partner = int(rng.integers(0, c))
        q[c, partner] = 0.6
    np.fill_diagonal(q, 0.0)
    return np.minimum(q, 0.9)


DEFAULT_IMAGE_SIZE = 38  # model input (32) plus the default crop headroom (6)


def generate(num_classes, num_samples, imbalance_ratio, snr, seed,
             image_size=DEFAULT_IMAGE_SIZE, split="train"):
    """Draw a full synthetic dataset; bitwise reproducible from the seed."""
    if num_classes < 3:
        raise ParameterError(f"need at least 3 classes, got {num_classes}")
    if num_samples < num_classes:
        raise ParameterError(
            f"need at least one sample per class: N={num_samples} < C={num_classes}"
        )
    if imbalance_ratio < 1:
        raise ParameterError(f"imbalance_ratio must be >= 1, got {imbalance_ratio}")
    if snr <= 0:
        raise ParameterError(f"snr must be > 0, got {snr}")
    if image_size < PROTO_SIZE:
        raise ParameterError(
            f"image_size must be >= {PROTO_SIZE} to hold a prototype stamp"
        )

    targets = frequency_targets(num_classes, imbalance_ratio, total=num_samples)
    seed_probs = targets / targets.sum()
    cooc = cooccurrence_matrix(num_classes, imbalance_ratio)

    label_rng = stream(seed, "labels")
    labels = np.zeros((num_samples, num_classes), dtype=np.uint8)
    seed_classes = label_rng.choice(num_classes, size=num_samples, p=seed_probs)
    coins = label_rng.random(size=(num_samples, num_classes))
    for k in range(num_samples):
        sc = seed_classes[k]
        labels[k] = coins[k] < cooc[sc]
        labels[k, sc] = 1
    # guarantee every class appears at least once
    for c in np.flatnonzero(labels.sum(axis=0) == 0):
        labels[int(c) % num_samples, c] = 1

    protos = class_prototypes(num_classes)
    locations = class_locations(num_classes, image_size)
    noise_rng = stream(seed, "noise")
    images = noise_rng.normal(0.0, 1.0 / snr,
                              size=(num_samples, image_size, image_size, 3))
    for k in range(num_samples):
        for c in np.flatnonzero(labels[k]):
            r, col = locations[c]
            images[k, r:r + PROTO_SIZE, col:col + PROTO_SIZE] += protos[c]

    return Dataset(
        images=images.astype(np.float32),
        labels=labels,
        class_counts=labels.sum(axis=0).astype(np.int64),
        split=split,
        seed=seed,
        imbalance_ratio=float(imbalance_ratio),
    )


# ---------------------------------------------------------------------------
# stratification
# ---------------------------------------------------------------------------


@dataclass
class Stratification:
    head_min: int = DEFAULT_HEAD_MIN
    tail_max: int = DEFAULT_TAIL_MAX
    assignment: list = field(default_factory=list)

    def groups(self):
        """Class indices per group; groups partition all classes."""
        out = {"head": [], "medium": [], "tail": []}
        for c, name in enumerate(self.assignment):
            out[name].append(c)
        return out


def stratify(class_counts, head_min=DEFAULT_HEAD_MIN, tail_max=DEFAULT_TAIL_MAX):
    """Assign head (> head_min), tail (< tail_max), or medium to each class.

    Boundary counts (exactly head_min or tail_max) are medium.
    """
    if head_min <= 0 or tail_max <= 0:
        raise ParameterError("stratification thresholds must be positive")
    if tail_max > head_min:
        raise ParameterError(
            f"tail_max {tail_max} must not exceed head_min {head_min}"
        )
    assignment = []
    for n in np.asarray(class_counts):
        if n > head_min:
            assignment.append("head")
        elif n < tail_max:
            assignment.append("tail")
        else:
            assignment.append("medium")
    return Stratification(head_min=head_min, tail_max=tail_max, assignment=assignment)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


class ClassAwareSampler:
    """Pick a class uniformly, then one of its positive instances uniformly."""

    def __init__(self, labels, seed=0):
        labels = np.asarray(labels)
        self.instance_lists = []
        for c in range(labels.shape[1]):
            instances = np.flatnonzero(labels[:, c])
            if instances.size == 0:
                raise FrequencyError(f"class {c} has no positive instances")
            self.instance_lists.append(instances)
        self.num_classes = labels.shape[1]
        self.rng = stream(seed, "class-aware-sampler")

    def batch(self, batch_size):
        if batch_size < 1:
            raise ParameterError(f"batch size must be >= 1, got {batch_size}")
        picks = self.rng.integers(0, self.num_classes, size=batch_size)
        out = []
        for c in picks:
            instances = self.instance_lists[c]
            out.append(int(instances[self.rng.integers(0, instances.size)]))
        return out


class UniformSampler:
    """Shuffled-epoch uniform sampling over all training samples."""

    def __init__(self, num_samples, seed=0):
        self.num_samples = num_samples
        self.rng = stream(seed, "uniform-sampler")
        self._order = []
        self._cursor = 0

    def batch(self, batch_size):
        if batch_size < 1:
            raise ParameterError(f"batch size must be >= 1, got {batch_size}")
        out = []
        while len(out) < batch_size:
            if self._cursor >= len(self._order):
                self._order = self.rng.permutation(self.num_samples)
                self._cursor = 0
            out.append(int(self._order[self._cursor]))
            self._cursor += 1
        return out


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def save_dataset(ds, path):
    """Write the binary dataset file plus its JSON manifest sidecar."""
    n, c = ds.labels.shape
    h = w = ds.image_size
    header = MAGIC + struct.pack("<IIIII", FORMAT_VERSION, n, h, w, c)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(ds.labels.astype(np.uint8).tobytes())
        fh.write(ds.images.astype("<f4").tobytes())
    manifest = {
        "seed": int(ds.seed),
        "imbalance_ratio": float(ds.imbalance_ratio),
        "class_counts": [int(x) for x in ds.class_counts],
    }
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True)
        fh.write("\n")


def manifest_path(path):
    return str(path) + ".json"


def load_dataset(path, split="train"):
    """Read and validate a dataset file written by save_dataset."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        raise DataFormatError(f"cannot read dataset {path}: {err}") from err
    if len(blob) < 24 or blob[:4] != MAGIC:
        raise DataFormatError(f"{path} is not a dataset file (bad magic)")
    version, n, h, w, c = struct.unpack("<IIIII", blob[4:24])
    if version != FORMAT_VERSION:
        raise DataFormatError(f"unsupported dataset format version {version}")
    labels_end = 24 + n * c
    images_end = labels_end + n * h * w * 3 * 4
    if len(blob) != images_end:
        raise DataFormatError(
            f"{path} truncated: expected {images_end} bytes, got {len(blob)}"
        )
    labels = np.frombuffer(blob[24:labels_end], dtype=np.uint8).reshape(n, c)
    if not np.all((labels == 0) | (labels == 1)):
        raise DataFormatError(f"{path} has non-binary labels")
    images = np.frombuffer(blob[labels_end:], dtype="<f4").reshape(n, h, w, 3)
    if not np.all(np.isfinite(images)):
        raise DataFormatError(f"{path} has non-finite image values")
    seed = 0
    ratio = 1.0
    try:
        with open(manifest_path(path), "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        seed = int(manifest.get("seed", 0))
        ratio = float(manifest.get("imbalance_ratio", 1.0))
    except OSError:
        pass  # manifest is advisory; the binary file is self-describing
    return Dataset(
        images=images.copy(),
        labels=labels.copy(),
        class_counts=labels.sum(axis=0).astype(np.int64),
        split=split,
        seed=seed,
        imbalance_ratio=ratio,
    )
