"""Command-line entry point: ``hyperod {synth,meta-train,select,eval,check}``.

Exit codes: 0 success, 1 run failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

import numpy as np

from .config import RunConfig, make_rng
from .data import DatasetError, load_dataset, save_dataset, synth_testbed

log = logging.getLogger("hyperod")

CONFIG_FILE = "run_config.txt"


class UsageError(Exception):
    pass


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        overrides[item.split("=", 1)[0].strip()] = item.split("=", 1)[1].strip()
    if overrides:
        text = cfg.to_text() + "".join(f"{k}={v}\n" for k, v in overrides.items())
        try:
            cfg = RunConfig.from_text(text)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _prepare_out(path, cfg: RunConfig):
    os.makedirs(path, exist_ok=True)
    cfg.save(os.path.join(path, CONFIG_FILE))


def _dataset_paths(items) -> list[str]:
    paths = []
    for item in items:
        if os.path.isdir(item):
            paths.extend(sorted(glob.glob(os.path.join(item, "*.csv"))))
        else:
            paths.append(item)
    if not paths:
        raise UsageError("no dataset files given")
    return paths


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def cmd_synth(args, cfg):
    tasks = synth_testbed(args.n_tasks, args.n_samples, (args.dim_min, args.dim_max), args.contamination,
                          seed=cfg.seed, prefix=args.prefix)
    _prepare_out(args.out, cfg)
    for t in tasks:
        save_dataset(os.path.join(args.out, f"{t.name}.csv"), t)
    print(f"wrote {len(tasks)} tasks to {args.out}")


def cmd_meta_train(args, cfg):
    from .meta import meta_train

    tasks = [load_dataset(p) for p in _dataset_paths(args.data)]
    result = meta_train(tasks, cfg)
    result.store.save(args.out)
    cfg.save(os.path.join(args.out, CONFIG_FILE))
    print(f"meta-trained on {len(result.tables)} tasks; global best {result.store.best_hp.as_dict()}")


def _require_store(args):
    from .meta import MetaStore

    if not args.store:
        raise UsageError("a MetaStore directory is required (--store)")
    return MetaStore.load(args.store)


def cmd_select(args, cfg):
    from .autoencoder import train_from_scratch
    from .search import hyper_select

    store = _require_store(args)
    task = load_dataset(args.data)
    hp, report = hyper_select(task.X, store, cfg, make_rng(cfg.seed, "select", task.name))
    _prepare_out(args.out, cfg)
    _write(os.path.join(args.out, "report.json"), report.to_text())
    _write(os.path.join(args.out, "timings.json"), report.timings_text())
    _write(os.path.join(args.out, "selected.json"), json.dumps(hp.as_dict(), sort_keys=True) + "\n")
    model = train_from_scratch(task.X, hp, make_rng(cfg.seed, "final", task.name), epochs=cfg.scratch_epochs)
    np.savetxt(os.path.join(args.out, "scores.csv"), model.scores(task.X), fmt="%.17g", header="score",
               comments="")
    print(json.dumps(hp.as_dict(), sort_keys=True))


def cmd_eval(args, cfg):
    from .pipeline import evaluate

    store = _require_store(args)
    tasks = [load_dataset(p) for p in _dataset_paths(args.data)]
    if not all(t.has_both_classes() for t in tasks):
        raise UsageError("eval needs labeled datasets with both classes")
    bench = evaluate(tasks, store, cfg, scratch=not args.no_scratch)
    _prepare_out(args.out, cfg)
    _write(os.path.join(args.out, "report.json"), bench.to_text())
    _write(os.path.join(args.out, "ranks.tsv"), bench.table())
    _write(os.path.join(args.out, "timings.json"), json.dumps(bench.timings, indent=2, sort_keys=True) + "\n")
    print(bench.table(), end="")
    print(json.dumps(bench.summary(), indent=2, sort_keys=True))


def cmd_check(args, cfg):
    from .checks import run_checks

    results = run_checks(quick=args.quick)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyperod", description="Hypernetwork-based unsupervised outlier model selection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="RunConfig key=value file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")

    p = sub.add_parser("synth", help="write a synthetic labeled testbed as CSV files")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-tasks", type=int, default=16)
    p.add_argument("--n-samples", type=int, default=300)
    p.add_argument("--dim-min", type=int, default=8)
    p.add_argument("--dim-max", type=int, default=20)
    p.add_argument("--contamination", type=float, default=0.1)
    p.add_argument("--prefix", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("meta-train", help="build a MetaStore from labeled datasets")
    common(p)
    p.add_argument("--data", nargs="+", required=True, help="CSV files or directories")
    p.add_argument("--out", required=True, help="MetaStore directory")
    p.set_defaults(func=cmd_meta_train)

    p = sub.add_parser("select", help="choose a detector configuration for an unlabeled dataset")
    common(p)
    p.add_argument("--store", help="MetaStore directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("eval", help="compare HYPER with the baselines on labeled datasets")
    common(p)
    p.add_argument("--store", help="MetaStore directory")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-scratch", action="store_true", help="skip from-scratch training of the chosen configs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", help="run the oracle and invariant checks")
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad usage
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        code = args.func(args, cfg)
        return 0 if code is None else code
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except (DatasetError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
