"""``tsk`` command line: synthesize data, train and evaluate heads, inspect filters.

Exit codes: 0 success, 1 I/O failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import load_dataset, preset_spec, synthesize, write_dataset, TASK_PRESETS
from .evaluation import evaluate_model, write_report
from .filters import build_cauchy_filters, build_gaussian_filters
from .heads import CONTINUOUS_KINDS, ConfigError, HeadConfig, Model, abbreviate, parameter_shapes
from .training import TaskMismatchError, TrainConfig, train, write_history

EXIT_OK, EXIT_IO, EXIT_USAGE = 0, 1, 2
MODE_OF_TASK = {"multilabel": "segmented", "pitch_type": "segmented", "speed": "segmented", "detection": "continuous"}


class UsageError(Exception):
    pass


def _fail(code: int, msg: str) -> int:
    print(f"tsk: error: {msg}", file=sys.stderr)
    return code


# -- synth ----------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        return _fail(EXIT_USAGE, f"{out} is not empty (use --force to overwrite)")
    spec = preset_spec(args.task, args.seed)
    seqs, anns, classes = synthesize(args.task, spec, args.clips)
    write_dataset(out, args.task, seqs, anns, classes)
    frames = sum(s.T for s in seqs)
    print(f"wrote {len(seqs)} {args.task} items ({frames} frames, D={spec.D}, {len(classes)} classes) to {out}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------


def _head_config(args, task: str, D: int, C: int) -> HeadConfig:
    extra = {}
    for flag in ("L", "M", "N", "hidden"):
        value = getattr(args, flag.lower())
        if value is not None:
            extra[flag] = value
    if args.levels:
        extra["pyramid_levels"] = args.levels
    if args.super_m is not None:
        extra["super_M"] = args.super_m
    return HeadConfig(MODE_OF_TASK[task], args.head, D, C, task=task, **extra)


def cmd_train(args) -> int:
    data = load_dataset(args.data, split="train")
    task = args.task or data.task
    if task != data.task:
        raise UsageError(f"--task {task} does not match the dataset task {data.task}")
    if not len(data):
        raise UsageError("the dataset has no training items")
    C = 1 if task == "speed" else len(data.classes)
    config = _head_config(args, task, data[0].features.shape[1], C)
    tc = TrainConfig(
        learning_rate=args.lr, decay_factor=args.decay_factor, decay_every=args.decay_every,
        epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
    )
    model = Model.init(config, args.seed)
    model, history = train(model, data, tc, eval_every=args.eval_every)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.tskm")
    write_history(history, out / "history.csv")
    print(f"trained {args.head} on {len(data)} {task} items for {tc.epochs} epochs; "
          f"final loss {history[-1].train_loss:.5f}; wrote {out / 'model.tskm'}")
    return EXIT_OK


# -- eval -----------------------------------------------------------------------


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("TSK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"TSK_THREADS must be an integer, got {env!r}") from None
    return 1


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data, split=None if args.split == "all" else args.split)
    if model.config.task != data.task:
        raise UsageError(f"checkpoint was trained for {model.config.task}, dataset is {data.task}")
    if not len(data):
        raise UsageError(f"split {args.split!r} is empty")
    report = evaluate_model(model, data, threads=_threads(args))
    report["head"] = model.config.kind
    report["split"] = args.split
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_report(report, out)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


# -- params ---------------------------------------------------------------------


def cmd_params(args) -> int:
    for kind in args.head:
        mode = "continuous" if kind in ("per_frame", "super_events", "sub_super") else "segmented"
        config = HeadConfig(mode, kind, args.d, args.c)
        shapes = parameter_shapes(config)
        total = sum(int(np.prod(s)) for s in shapes.values())
        print(f"{kind:<14} {total:>12,}  ({abbreviate(total)})")
        if args.breakdown or kind == "bilstm":
            groups: dict[str, int] = {}
            for name, shape in shapes.items():
                groups[name.split(".")[0]] = groups.get(name.split(".")[0], 0) + int(np.prod(shape))
            for group, n in groups.items():
                print(f"  {group:<12} {n:>12,}")
    return EXIT_OK


# -- inspect-filters ------------------------------------------------------------


def cmd_inspect_filters(args) -> int:
    model = load_checkpoint(args.checkpoint)
    cfg = model.config
    has_sub = "sub.center" in model.parameters
    has_super = "super.center" in model.parameters
    if not (has_sub or has_super):
        raise UsageError(f"{cfg.kind} head has no temporal filters")
    rows = []
    if has_sub:
        T = cfg.L if cfg.mode == "continuous" else args.frames
        F = build_gaussian_filters(model.sub_bank(), T).data
        for m in range(F.shape[0]):
            for i in range(F.shape[1]):
                rows.append(("sub", m, i, F[m, i]))
    if has_super:
        F = build_cauchy_filters(model.super_bank(), args.frames).data
        for m in range(F.shape[1]):
            rows.append(("super", m, 0, F[:, m]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        if args.long:
            w.writerow(["bank", "filter_index", "gaussian_index", "t", "weight"])
            for bank, m, i, weights in rows:
                w.writerows([bank, m, i, t, repr(float(x))] for t, x in enumerate(weights))
        else:
            width = max(len(r[3]) for r in rows)
            w.writerow(["bank", "filter_index", "gaussian_index", *(f"t{t}" for t in range(width))])
            for bank, m, i, weights in rows:
                w.writerow([bank, m, i, *(repr(float(x)) for x in weights)])
    print(f"wrote {len(rows)} filters to {out}")
    return EXIT_OK


# -- bench ----------------------------------------------------------------------


def cmd_bench(args) -> int:
    from . import experiments

    seeds = range(args.seeds)
    if args.which == "segmented":
        result = experiments.summarize(experiments.segmented_ordering(seeds, args.epochs, log=print))
    elif args.which == "continuous":
        result = experiments.summarize(experiments.continuous_ordering(seeds, args.epochs, log=print))
    else:
        result = experiments.speed_sanity(epochs=args.epochs)
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsk", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"tsk {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--task", required=True, choices=sorted(TASK_PRESETS))
    s.add_argument("--clips", type=_positive, default=200, help="number of clips or videos")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true", help="write into a non-empty directory")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a head on a dataset's train split")
    t.add_argument("--data", required=True, help="manifest file or dataset directory")
    t.add_argument("--head", required=True, choices=CONTINUOUS_KINDS)
    t.add_argument("--task", choices=sorted(MODE_OF_TASK), help="defaults to the dataset task")
    t.add_argument("--epochs", type=_positive, default=50)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--decay-factor", type=float, default=0.1)
    t.add_argument("--decay-every", type=_positive, default=10)
    t.add_argument("--batch-size", type=_positive, default=8)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--eval-every", type=int, default=0, help="record the train metric every k epochs (0: never)")
    t.add_argument("--out", required=True)
    t.add_argument("--L", dest="l", type=_positive, help="window / kernel length")
    t.add_argument("--M", dest="m", type=_positive, help="number of sub-event filter groups")
    t.add_argument("--N", dest="n", type=int, help="Gaussians per group")
    t.add_argument("--super-M", dest="super_m", type=_positive, help="number of super-event filters")
    t.add_argument("--hidden", type=_positive, help="LSTM hidden size")
    t.add_argument("--levels", type=_positive, nargs="+", help="pyramid levels")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=("train", "test", "all"))
    e.add_argument("--out", help="write the report as JSON")
    e.add_argument("--threads", type=_positive, help="worker threads (default: $TSK_THREADS or 1)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("params", help="count head parameters")
    c.add_argument("--d", type=_positive, default=2048)
    c.add_argument("--c", type=_positive, default=8)
    c.add_argument("--head", nargs="+", default=["max_pool", "pyramid", "bilstm"], choices=CONTINUOUS_KINDS)
    c.add_argument("--breakdown", action="store_true", help="show counts per parameter group")
    c.set_defaults(func=cmd_params)

    f = sub.add_parser("inspect-filters", help="export learned temporal filters as CSV")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--frames", type=_positive, default=64, help="clip length to materialize filters at")
    f.add_argument("--long", action="store_true", help="one (filter, t, weight) row per value")
    f.set_defaults(func=cmd_inspect_filters)

    b = sub.add_parser("bench", help="run a synthetic head comparison")
    b.add_argument("which", choices=("segmented", "continuous", "speed"))
    b.add_argument("--seeds", type=_positive, default=5)
    b.add_argument("--epochs", type=_positive, default=50)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, TaskMismatchError) as e:
        return _fail(EXIT_USAGE, str(e))
    except (OSError, CheckpointError, ValueError) as e:
        return _fail(EXIT_IO, str(e))


if __name__ == "__main__":
    sys.exit(main())
