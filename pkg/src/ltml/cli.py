"""Command-line surface: dataset generation, training, evaluation, exports.

Exit codes: 0 success, 2 usage/validation problem, 3 runtime or data
problem. Every subcommand is deterministic given its seed and config, and
writes its resolved config next to its outputs.
"""

from __future__ import annotations

import argparse
import itertools
import sys

from . import checkpoint as ckpt
from . import data as datamod
from .config import resolve_config, write_resolved
from .correlation import build_graph
from .errors import (
    CompatibilityError,
    ConfigError,
    LtmlError,
    ParameterError,
    ValidationError,
)
from .model import build_model
from .prompts import TextEncoder, load_embeddings_file, prior_embeddings
from .trainer import evaluate, train
from .tte import TteConfig


def _float_repr(x):
    return repr(float(x))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args):
    data_over = {
        key: value
        for key, value in (
            ("classes", args.classes),
            ("samples", args.samples),
            ("imbalance_ratio", args.imbalance),
            ("snr", args.snr),
        )
        if value is not None
    }
    overrides = {"data": data_over} if data_over else {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = resolve_config(args.config, overrides=overrides)
    dcfg = cfg["data"]
    ds = datamod.generate(dcfg["classes"], dcfg["samples"], dcfg["imbalance_ratio"],
                          dcfg["snr"], seed=cfg["seed"],
                          image_size=dcfg["image_size"])
    datamod.save_dataset(ds, args.out)
    write_resolved(cfg, str(args.out) + ".config.json")
    strat = datamod.stratify(ds.class_counts, cfg["stratify"]["head_min"],
                             cfg["stratify"]["tail_max"])
    groups = strat.groups()
    print(f"wrote {args.out}: {ds.num_samples} samples, {ds.num_classes} classes")
    print("class_counts:", [int(x) for x in ds.class_counts])
    print(
        f"stratification: {len(groups['head'])} head / "
        f"{len(groups['medium'])} medium / {len(groups['tail'])} tail"
    )
    return 0


def _config_overrides_for_train(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    train_over = {}
    if args.mode:
        train_over["mode"] = args.mode
    if args.sampler:
        train_over["sampler"] = args.sampler
    if args.epochs is not None:
        train_over["epochs"] = args.epochs
    if train_over:
        overrides["train"] = train_over
    return overrides


def cmd_train(args):
    cfg = resolve_config(args.config, overrides=_config_overrides_for_train(args))
    train_ds = datamod.load_dataset(args.data, split="train")
    state = train(train_ds, cfg)
    frozen = state.model.frozen_hash(cfg["train"]["mode"])
    ckpt.save_checkpoint(args.out, state.model, cfg, state.step,
                         train_ds.class_counts, frozen_hash=frozen)
    loss_path = str(args.out) + ".loss.csv"
    with open(loss_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("step,epoch,loss\r\n")
        for step, epoch, loss in state.loss_history:
            fh.write(f"{step},{epoch},{_float_repr(loss)}\r\n")
    write_resolved(cfg, str(args.out) + ".config.json")
    final = state.loss_history[-1][2] if state.loss_history else float("nan")
    print(f"trained {state.step} steps; final loss {final}")
    print(f"checkpoint: {args.out}")
    print(f"loss history: {loss_path}")
    return 0


def _tte_config_from(cfg, args):
    enabled = cfg["tte"]["enabled"]
    if args.tte:
        enabled = args.tte == "on"
    if not enabled:
        return None
    enlarge = args.tte_e if args.tte_e is not None else cfg["tte"]["enlarge"]
    tte_cfg = TteConfig(enlarge=enlarge, base_size=cfg["encoder"]["image_size"],
                        average=cfg["tte"]["average"])
    return tte_cfg.validate(cfg["encoder"]["patch_size"])


def cmd_eval(args):
    manifest, params = ckpt.load_checkpoint(args.checkpoint)
    cfg = manifest["config"]
    model = ckpt.model_from_checkpoint(manifest, params)
    test_ds = datamod.load_dataset(args.data, split="test")
    if test_ds.num_classes != model.num_classes:
        raise CompatibilityError(
            f"checkpoint was trained with {model.num_classes} classes but "
            f"{args.data} has {test_ds.num_classes}"
        )
    strat = datamod.stratify(manifest["class_counts"],
                             cfg["stratify"]["head_min"],
                             cfg["stratify"]["tail_max"])
    tte_cfg = _tte_config_from(cfg, args)
    report, probs = evaluate(model, test_ds, strat, tte_cfg=tte_cfg)
    if args.dump_probs:
        header = "sample," + ",".join(f"class_{c}" for c in range(probs.shape[1]))
        with open(args.dump_probs, "w", encoding="utf-8", newline="") as fh:
            fh.write(header + "\r\n")
            for i, row in enumerate(probs):
                fh.write(str(i) + "," + ",".join(_float_repr(p) for p in row) + "\r\n")
    if args.report == "json":
        print(report.to_json())
    else:
        print(report.to_table())
    return 0


def cmd_export_corr(args):
    cfg = resolve_config(args.config)
    num_classes = cfg["data"]["classes"]
    if cfg["correlation"]["source"] == "conditional_prob":
        if not args.data:
            raise ConfigError(
                "correlation.source=conditional_prob needs --data for label counts"
            )
        ds = datamod.load_dataset(args.data)
        model = build_model(cfg, ds.num_classes, train_labels=ds.labels)
        graph = model.graph
    else:
        table = None
        if cfg["prompts"]["encoder"] == "file":
            _, table = load_embeddings_file(cfg["prompts"]["embeddings_file"])
            num_classes = table.shape[0]
        enc = TextEncoder(cfg["prompts"]["encoder"], d_tok=cfg["prompts"]["d_tok"],
                          d=cfg["encoder"]["embed_dim"], seed=cfg["seed"], table=table)
        priors = prior_embeddings(enc, num_classes)
        graph = build_graph(priors.data, s=cfg["correlation"]["s"],
                            tau_prime=cfg["correlation"]["tau_prime"])
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(graph.to_json())
        fh.write("\n")
    print(f"wrote adjacency for {graph.num_classes} classes to {args.out}")
    return 0


_ABLATE_KNOBS = {
    "s": ("correlation", "s", float),
    "tau": ("correlation", "tau_prime", float),
    "dhat": ("encoder", "adapter_dim", int),
}


def _parse_grid(specs):
    grid = []
    for spec in specs:
        if "=" not in spec:
            raise ParameterError(f"bad grid spec {spec!r}; expected knob=v1,v2,...")
        knob, _, values = spec.partition("=")
        knob = knob.strip()
        if knob not in _ABLATE_KNOBS:
            raise ParameterError(
                f"unknown grid knob {knob!r}; choose from {sorted(_ABLATE_KNOBS)}"
            )
        _, _, cast = _ABLATE_KNOBS[knob]
        try:
            parsed = [cast(v) for v in values.split(",") if v != ""]
        except ValueError as err:
            raise ParameterError(f"bad grid values in {spec!r}: {err}") from err
        if not parsed:
            raise ParameterError(f"grid spec {spec!r} has no values")
        grid.append((knob, parsed))
    if not grid:
        raise ParameterError("empty grid: pass at least one --grid knob=v1,v2,...")
    return grid


def cmd_ablate(args):
    grid = _parse_grid(args.grid)
    base_cfg = resolve_config(args.config, overrides=_config_overrides_for_train(args))
    train_ds = datamod.load_dataset(args.data, split="train")
    test_ds = datamod.load_dataset(args.test_data, split="test")
    strat = datamod.stratify(train_ds.class_counts,
                             base_cfg["stratify"]["head_min"],
                             base_cfg["stratify"]["tail_max"])
    knob_names = [name for name, _ in grid]
    rows = []
    for combo in itertools.product(*[values for _, values in grid]):
        overrides = {}
        for name, value in zip(knob_names, combo):
            section, key, _ = _ABLATE_KNOBS[name]
            overrides.setdefault(section, {})[key] = value
        cfg = resolve_config(args.config, overrides={
            **_config_overrides_for_train(args), **overrides})
        state = train(train_ds, cfg)
        tte_cfg = _tte_config_from(cfg, args)
        report, _ = evaluate(state.model, test_ds, strat, tte_cfg=tte_cfg)
        rows.append((combo, report))
        printable = ", ".join(f"{n}={v}" for n, v in zip(knob_names, combo))
        print(f"{printable}: total mAP {report.total_map:.4f}")
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(knob_names) + ",total_map,head_map,medium_map,tail_map\r\n")
        for combo, report in rows:
            cells = [str(v) for v in combo]
            for value in (report.total_map, report.head_map,
                          report.medium_map, report.tail_map):
                cells.append("" if value is None else _float_repr(value))
            fh.write(",".join(cells) + "\r\n")
    write_resolved(base_cfg, str(args.out) + ".config.json")
    print(f"wrote {len(rows)} grid rows to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ltml",
        description="Long-tailed multi-label recognition at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--imbalance", type=float, default=None)
    p.add_argument("--snr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["full", "peft"], default=None)
    p.add_argument("--sampler", choices=["uniform", "class_aware"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--tte", choices=["on", "off"], default=None)
    p.add_argument("--tte-e", type=int, default=None, dest="tte_e")
    p.add_argument("--report", choices=["json", "table"], default="table")
    p.add_argument("--dump-probs", default=None, dest="dump_probs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-corr", help="write the correlation adjacency as JSON")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None)
    p.set_defaults(func=cmd_export_corr)

    p = sub.add_parser("ablate", help="run a train+eval grid over chosen knobs")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", required=True, dest="test_data")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", action="append", default=[],
                   help="knob=v1,v2,... (s, tau, dhat); repeatable")
    p.add_argument("--mode", choices=["full", "peft"], default=None)
    p.add_argument("--sampler", choices=["uniform", "class_aware"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--tte", choices=["on", "off"], default=None)
    p.add_argument("--tte-e", type=int, default=None, dest="tte_e")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        print(f"run 'ltml {args.command} --help' for usage", file=sys.stderr)
        return 2
    except LtmlError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
