"""Checkpoint file format and model restore.

One file: magic "LTCK", format version u32 LE, manifest length u64 LE, the
JSON manifest (config, step, seed, class counts, correlation graph, frozen
hash, and a name -> (offset, shape) parameter index), then the raw blob of
named float32 LE parameter arrays.

The correlation adjacency rides in the manifest at full float64 precision
(JSON doubles round-trip exactly); frozen seeded structures (class tokens,
text-encoder internals, backbone init) are regenerated from the config
seed at load time, so only optimizer-visible parameters live in the blob.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .correlation import CorrelationGraph
from .errors import CompatibilityError, DataFormatError
from .model import build_model

MAGIC = b"LTCK"
FORMAT_VERSION = 1


def save_checkpoint(path, model, cfg, step, class_counts, frozen_hash=None):
    """Serialize the model parameters plus everything needed to rebuild it."""
    params = model.parameters()
    index = {}
    chunks = []
    offset = 0
    for name in params:
        arr = np.ascontiguousarray(params[name].data, dtype="<f4")
        index[name] = {"offset": offset, "shape": list(arr.shape)}
        chunk = arr.tobytes()
        chunks.append(chunk)
        offset += len(chunk)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": cfg,
        "step": int(step),
        "seed": int(cfg["seed"]),
        "class_counts": [int(x) for x in class_counts],
        "frozen_hash": frozen_hash,
        "graph": {
            "s": model.graph.s,
            "tau_prime": model.graph.tau_prime,
            "source": model.graph.source,
            "degenerate_rows": model.graph.degenerate_rows,
            "matrix": model.graph.matrix.tolist(),
        },
        "params_index": index,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(manifest_bytes)))
        fh.write(manifest_bytes)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path):
    """Read and validate a checkpoint; returns (manifest, name -> array)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        raise DataFormatError(f"cannot read checkpoint {path}: {err}") from err
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise DataFormatError(f"{path} is not a checkpoint file (bad magic)")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != FORMAT_VERSION:
        raise DataFormatError(f"unsupported checkpoint format version {version}")
    manifest_len = struct.unpack("<Q", blob[8:16])[0]
    manifest_end = 16 + manifest_len
    if len(blob) < manifest_end:
        raise DataFormatError(f"{path} truncated inside the manifest")
    try:
        manifest = json.loads(blob[16:manifest_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise DataFormatError(f"{path}: bad manifest: {err}") from err
    payload = blob[manifest_end:]
    params = {}
    for name, entry in manifest["params_index"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * 4
        if end > len(payload):
            raise DataFormatError(f"{path} truncated inside parameter {name!r}")
        params[name] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape)
    return manifest, params


def model_from_checkpoint(manifest, params):
    """Rebuild the model a checkpoint describes and load its parameters."""
    cfg = manifest["config"]
    num_classes = len(manifest["class_counts"])
    ginfo = manifest["graph"]
    graph = CorrelationGraph(
        matrix=np.asarray(ginfo["matrix"], dtype=np.float64),
        s=ginfo["s"],
        tau_prime=ginfo["tau_prime"],
        source=ginfo["source"],
        degenerate_rows=list(ginfo["degenerate_rows"]),
    )
    model = build_model(cfg, num_classes, graph_override=graph)
    named = model.parameters()
    missing = set(named) - set(params)
    unexpected = set(params) - set(named)
    if missing or unexpected:
        raise CompatibilityError(
            f"checkpoint parameters do not match the model: "
            f"missing {sorted(missing)}, unexpected {sorted(unexpected)}"
        )
    for name, tensor in named.items():
        arr = params[name]
        if tuple(arr.shape) != tensor.data.shape:
            raise CompatibilityError(
                f"parameter {name!r} has shape {arr.shape}, expected {tensor.data.shape}"
            )
        tensor.data = arr.astype(np.float64)
    return model
