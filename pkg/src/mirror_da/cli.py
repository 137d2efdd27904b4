"""Command line entry point: ``mirror-da {gen,train,sweep,eval,dump-embeddings}``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import fields

import numpy as np

from .config import DataConfig, RunConfig, build_configs, parse_config_text
from .errors import InvalidArgumentError, NumericalFailure
from .evaluation import TargetMonitor, evaluate
from .network import forward, load_checkpoint, save_checkpoint
from .sweep import ABLATION_NAMES, AXES, summarize, sweep
from .synthgen import (DomainDataset, default_pattern_spec, gen_biased_patterns, gen_dilemma_1d,
                       read_csv, standardize_by_source, write_csv)
from .training import EpochMetrics, train

logger = logging.getLogger("mirror_da")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def make_datasets(data: DataConfig, fallback_seed: int):
    seed = fallback_seed if data.data_seed is None else data.data_seed
    if data.dataset == "dilemma":
        pair = gen_dilemma_1d(n_source=data.n_source, n_target=data.n_target, seed=seed,
                              bias=data.bias)
    elif data.dataset == "patterns":
        pair = gen_biased_patterns(default_pattern_spec(data.pattern_shift), data.n_source,
                                   data.n_target, seed)
    else:
        raise InvalidArgumentError(f"unknown dataset {data.dataset!r}")
    return standardize_by_source(*pair) if data.standardize else pair


def load_data_dir(path):
    """Read ``source.csv`` plus ``target_eval.csv`` (or the label-free ``target.csv``)."""
    source = read_csv(os.path.join(path, "source.csv"))["source"]
    eval_path = os.path.join(path, "target_eval.csv")
    if os.path.exists(eval_path):
        target = read_csv(eval_path, source.n_classes)["target"]
        target.hidden = True
    else:
        target = read_csv(os.path.join(path, "target.csv"), source.n_classes)["target"]
    return source, target


def _run_keys():
    return [f.name for f in fields(RunConfig)] + [f.name for f in fields(DataConfig)
                                                  if f.name != "extra"]


def _add_config_args(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    for key in ("k", "gamma", "epochs", "batch_size", "eta0", "distance", "weighting",
                "mirror_layers", "mirror_pool", "dataset", "n_source", "n_target", "bias"):
        p.add_argument("--" + key.replace("_", "-"), dest=key, default=None)
    p.add_argument("--data", help="directory written by `gen` (otherwise data are generated)")


def _collect_config(args) -> dict:
    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw.update(parse_config_text(fh.read()))
    for key in _run_keys():
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = str(val)
    for item in args.set:
        if "=" not in item:
            raise InvalidArgumentError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        raw["seed"] = str(args.seed)
    return raw


def _datasets_for(args, run: RunConfig, data: DataConfig):
    if args.data:
        return load_data_dir(args.data)
    return make_datasets(data, run.seed)


def write_metrics(path, rows: list[EpochMetrics]):
    names = [f.name for f in fields(EpochMetrics)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in rows:
            w.writerow([repr(getattr(row, n)) for n in names])


def cmd_gen(args):
    data = DataConfig(dataset=args.dataset, n_source=args.n_source, n_target=args.n_target,
                      bias=args.bias, data_seed=args.seed, pattern_shift=args.shift,
                      standardize=not args.raw)
    source, target = make_datasets(data, args.seed)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "source.csv"), source)
    write_csv(os.path.join(args.out, "target.csv"), target)
    revealed = DomainDataset(target.features, target.reveal_labels(), "target", target.n_classes,
                             patterns=target.patterns)
    write_csv(os.path.join(args.out, "target_eval.csv"), revealed)
    print(f"wrote {len(source)} source / {len(target)} target samples to {args.out}")
    return EXIT_OK


def cmd_train(args):
    run, data = build_configs(_collect_config(args))
    source, target = _datasets_for(args, run, data)
    os.makedirs(args.out, exist_ok=True)
    start = time.perf_counter()
    try:
        params, metrics = train(run, source, target.unlabeled(), monitor=TargetMonitor(target))
    except NumericalFailure as exc:
        with open(os.path.join(args.out, "failure.json"), "w") as fh:
            json.dump(dict(error=str(exc), record=exc.record), fh, indent=2, default=float)
        raise
    wall = time.perf_counter() - start
    write_metrics(os.path.join(args.out, "metrics.csv"), metrics)
    save_checkpoint(params, os.path.join(args.out, "params.ckpt"))
    result = evaluate(params, target)
    summary = dict(final_accuracy=result.accuracy, evaluation=result.summary(),
                   config=run.as_dict(), data=data.__dict__ if not args.data else args.data,
                   wall_time_s=wall, epochs=len(metrics))
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, default=str)
    print(f"target accuracy {result.accuracy:.4f} after {len(metrics)} epochs ({wall:.1f}s)")
    return EXIT_OK


def cmd_sweep(args):
    run, data = build_configs(_collect_config(args))
    seeds = [run.seed + i for i in range(args.n_seeds)]
    values = None
    if args.values:
        typ = {"k": int, "gamma": float, "layers": str}[args.axis]
        values = [typ(v) for v in args.values.split(",")]

    def data_for(seed):
        if args.data:
            return load_data_dir(args.data)
        return make_datasets(data, seed)

    rows = sweep(run, args.axis, seeds, data_for, values, n_jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        extra = ["mirror_f", "mirror_g", "anchor_gap_f", "inter_class_f"]
        w.writerow(["axis", "value", "seed", "accuracy", "status", "error"] + extra)
        for r in rows:
            w.writerow([r.axis, r.value, r.seed, repr(r.accuracy), r.status, r.error]
                       + [repr(r.final.get(k, float("nan"))) for k in extra])
    for cell in summarize(rows):
        name = ABLATION_NAMES.get(cell["value"], cell["value"]) if args.axis == "layers" else cell["value"]
        print(f"{args.axis}={name}: {cell['mean']:.4f} +- {cell['std']:.4f} (n={cell['n']})")
    return EXIT_OK


def _eval_dataset(args):
    if args.data:
        return load_data_dir(args.data)[1]
    return read_csv(args.csv)["target"]


def cmd_eval(args):
    params = load_checkpoint(args.checkpoint)
    result = evaluate(params, _eval_dataset(args))
    print(json.dumps(result.summary(), indent=2))
    return EXIT_OK


def cmd_dump(args):
    params = load_checkpoint(args.checkpoint)
    source, target = load_data_dir(args.data)
    with open(args.out, "w", newline="") as fh:
        w = None
        for ds, labels in ((source, source.labels), (target, np.full(len(target), -1))):
            tr = forward(params, ds.features)
            if w is None:
                w = csv.writer(fh)
                w.writerow([f"f_{i}" for i in range(tr.f.shape[1])]
                           + [f"g_{i}" for i in range(tr.g.shape[1])] + ["label", "domain"])
            for f, g, lab in zip(tr.f, tr.g, labels):
                w.writerow([repr(float(v)) for v in f] + [repr(float(v)) for v in g]
                           + [int(lab), ds.domain_tag])
    print(f"wrote embeddings to {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="mirror-da", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write synthetic source/target CSV files")
    p.add_argument("--dataset", choices=["dilemma", "patterns"], default="dilemma")
    p.add_argument("--n-source", type=int, default=2000)
    p.add_argument("--n-target", type=int, default=2000)
    p.add_argument("--bias", type=float, default=1.0)
    p.add_argument("--shift", type=float, default=3.0, help="target shift for patterns")
    p.add_argument("--raw", action="store_true", help="skip source-statistics standardisation")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="one training run")
    _add_config_args(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="grid over k, gamma or the layer ablation")
    _add_config_args(p)
    p.add_argument("--seed", type=int, required=True, help="first seed")
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--axis", choices=sorted(AXES), required=True)
    p.add_argument("--values", help="comma separated axis values (default: standard grid)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on labeled target data")
    p.add_argument("--checkpoint", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--data")
    g.add_argument("--csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-embeddings", help="write f and g features for plotting")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidArgumentError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
