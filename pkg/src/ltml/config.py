"""Run configuration: one JSON file, flag overrides, strict validation.

Every key has a default below; unknown keys are rejected and all
validation failures are reported together before any compute starts. Each
CLI run writes its resolved config next to its outputs so experiments stay
reproducible from the artifacts alone.
"""

from __future__ import annotations

import copy
import json

from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "data": {
        "classes": 20,          # number of label classes
        "samples": 600,         # dataset size
        "imbalance_ratio": 50.0,  # head frequency over tail frequency
        "snr": 5.0,             # prototype amplitude over noise std
        "image_size": 38,       # scene side; training crops encoder-sized windows
    },
    "prompts": {
        "length": 4,            # context tokens per class
        "d_tok": 32,            # token embedding width
        "init": "template",    # template | random
        "encoder": "toy",      # toy | file
        "embeddings_file": None,
    },
    "correlation": {
        "source": "text_prior",  # text_prior | conditional_prob
        "s": 0.3,                # neighbor mass share
        "tau_prime": 0.3,        # adjacency softmax temperature
        "cond_threshold": 0.4,   # binarization cut for the conditional variant
    },
    "gcn": {
        "enabled": True,
        "negative_slope": 0.2,
    },
    "encoder": {
        "image_size": 32,
        "patch_size": 4,
        "depth": 2,
        "width": 64,
        "heads": 4,
        "embed_dim": 64,        # shared image/text embedding width
        "adapter_dim": 16,      # bottleneck width of the adapter branch
        "adapters_enabled": True,
    },
    "head": {
        "tau_init": 0.07,       # starting similarity temperature
    },
    "loss": {
        "alpha": 0.5,
        "beta": 0.01,
        "theta": 0.1,
        "gamma": 0.5,
        "kappa": 0.05,
        "zeta": 1.5,
        "batch_level_counts": False,
    },
    "train": {
        "epochs": 20,
        "batch_size": 32,
        "lr_backbone": 5e-4,
        "lr_gcn": 1e-3,
        "mode": "full",         # full | peft
        "sampler": "class_aware",  # uniform | class_aware
    },
    "tte": {
        "enabled": False,
        "enlarge": 6,           # e: resize headroom; even, not a patch multiple
        "average": "probs",    # probs | logits
    },
    "stratify": {
        "head_min": 100,
        "tail_max": 20,
    },
}


def default_config():
    return copy.deepcopy(DEFAULTS)


def _merge(base, extra, path, errors):
    for key, value in extra.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            errors.append(f"unknown config key: {where}")
            continue
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                errors.append(f"{where} must be an object")
                continue
            _merge(base[key], value, where, errors)
        else:
            base[key] = value


def _check_type(cfg, path, kinds, errors):
    node = cfg
    for part in path.split("."):
        node = node[part]
    if kinds is bool:
        ok = isinstance(node, bool)
    elif kinds is float:
        ok = isinstance(node, (int, float)) and not isinstance(node, bool)
    elif kinds is int:
        ok = isinstance(node, int) and not isinstance(node, bool)
    else:
        ok = isinstance(node, kinds) or node is None
    if not ok:
        errors.append(f"{path} has the wrong type: {node!r}")
    return ok


_SCHEMA_TYPES = [
    ("seed", int), ("data.classes", int), ("data.samples", int),
    ("data.imbalance_ratio", float), ("data.snr", float), ("data.image_size", int),
    ("prompts.length", int), ("prompts.d_tok", int), ("prompts.init", str),
    ("prompts.encoder", str), ("prompts.embeddings_file", str),
    ("correlation.source", str), ("correlation.s", float),
    ("correlation.tau_prime", float), ("correlation.cond_threshold", float),
    ("gcn.enabled", bool), ("gcn.negative_slope", float),
    ("encoder.image_size", int), ("encoder.patch_size", int), ("encoder.depth", int),
    ("encoder.width", int), ("encoder.heads", int), ("encoder.embed_dim", int),
    ("encoder.adapter_dim", int), ("encoder.adapters_enabled", bool),
    ("head.tau_init", float),
    ("loss.alpha", float), ("loss.beta", float), ("loss.theta", float),
    ("loss.gamma", float), ("loss.kappa", float), ("loss.zeta", float),
    ("loss.batch_level_counts", bool),
    ("train.epochs", int), ("train.batch_size", int),
    ("train.lr_backbone", float), ("train.lr_gcn", float),
    ("train.mode", str), ("train.sampler", str),
    ("tte.enabled", bool), ("tte.enlarge", int), ("tte.average", str),
    ("stratify.head_min", int), ("stratify.tail_max", int),
]


def validate_config(cfg):
    """Collect every validation failure; raise one ConfigError listing all."""
    errors = []
    for path, kinds in _SCHEMA_TYPES:
        _check_type(cfg, path, kinds, errors)
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))

    def bad(msg):
        errors.append(msg)

    if cfg["data"]["classes"] < 3:
        bad("data.classes must be >= 3")
    if cfg["data"]["samples"] < cfg["data"]["classes"]:
        bad("data.samples must be >= data.classes")
    if cfg["data"]["imbalance_ratio"] < 1:
        bad("data.imbalance_ratio must be >= 1")
    if cfg["data"]["snr"] <= 0:
        bad("data.snr must be > 0")
    if cfg["prompts"]["length"] < 1:
        bad("prompts.length must be >= 1")
    if cfg["prompts"]["d_tok"] < 1:
        bad("prompts.d_tok must be >= 1")
    if cfg["prompts"]["init"] not in ("template", "random"):
        bad("prompts.init must be template or random")
    if cfg["prompts"]["encoder"] not in ("toy", "file"):
        bad("prompts.encoder must be toy or file")
    if cfg["prompts"]["encoder"] == "file" and not cfg["prompts"]["embeddings_file"]:
        bad("prompts.encoder=file requires prompts.embeddings_file")
    if cfg["correlation"]["source"] not in ("text_prior", "conditional_prob"):
        bad("correlation.source must be text_prior or conditional_prob")
    if not 0.0 <= cfg["correlation"]["s"] <= 1.0:
        bad("correlation.s must lie in [0, 1]")
    if cfg["correlation"]["tau_prime"] <= 0:
        bad("correlation.tau_prime must be > 0")
    if not 0.0 <= cfg["correlation"]["cond_threshold"] <= 1.0:
        bad("correlation.cond_threshold must lie in [0, 1]")
    enc = cfg["encoder"]
    if enc["image_size"] % enc["patch_size"]:
        bad("encoder.image_size must be divisible by encoder.patch_size")
    if enc["depth"] < 1:
        bad("encoder.depth must be >= 1")
    if enc["width"] % enc["heads"]:
        bad("encoder.width must be divisible by encoder.heads")
    if not 1 <= enc["adapter_dim"] <= enc["width"]:
        bad("encoder.adapter_dim must lie in [1, encoder.width]")
    if not 0 < cfg["head"]["tau_init"] <= 1.0:
        bad("head.tau_init must lie in (0, 1]")
    if cfg["loss"]["zeta"] <= 0:
        bad("loss.zeta must be > 0")
    if cfg["loss"]["gamma"] < 0:
        bad("loss.gamma must be >= 0")
    tr = cfg["train"]
    if tr["epochs"] < 0:
        bad("train.epochs must be >= 0")
    if tr["batch_size"] < 1:
        bad("train.batch_size must be >= 1")
    if tr["lr_backbone"] <= 0 or tr["lr_gcn"] <= 0:
        bad("train learning rates must be > 0")
    if tr["mode"] not in ("full", "peft"):
        bad("train.mode must be full or peft")
    if tr["mode"] == "peft" and not enc["adapters_enabled"]:
        bad("train.mode=peft requires encoder.adapters_enabled")
    if tr["sampler"] not in ("uniform", "class_aware"):
        bad("train.sampler must be uniform or class_aware")
    tte = cfg["tte"]
    if tte["average"] not in ("probs", "logits"):
        bad("tte.average must be probs or logits")
    if tte["enabled"]:
        if tte["enlarge"] < 1:
            bad("tte.enlarge must be >= 1")
        elif tte["enlarge"] % 2:
            bad("tte.enlarge must be even")
        elif tte["enlarge"] % enc["patch_size"] == 0:
            bad(
                f"tte.enlarge={tte['enlarge']} is invalid: e must not be a "
                f"multiple of the ViT patch size ({enc['patch_size']})"
            )
    st = cfg["stratify"]
    if st["head_min"] <= 0 or st["tail_max"] <= 0:
        bad("stratify thresholds must be positive")
    elif st["tail_max"] > st["head_min"]:
        bad("stratify.tail_max must not exceed stratify.head_min")
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return cfg


def resolve_config(path=None, overrides=None):
    """Defaults <- config file <- overrides, then validate."""
    cfg = default_config()
    errors = []
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        _merge(cfg, loaded, "", errors)
    if overrides:
        _merge(cfg, overrides, "", errors)
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return validate_config(cfg)


def write_resolved(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, sort_keys=True, indent=2)
        fh.write("\n")
