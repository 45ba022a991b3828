"""relprune command line: train / prune / sweep / report.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import model_io
from .experiments import TrainConfig, prepare, run_all, seed_curves, spec_for
from .lrp import SEED_PREDICTED, SEED_TRUE, LrpConfig, RelevanceError
from .metrics import MetricError, auc_lowest_class, grid
from .pruning import compact
from .strategies import DPX, PX, SD_DPX, STRATEGIES, SdDpxConfig
from .toylab import SyntheticSpec, TrainingError, default_template, generate, train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("relprune")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    """``"0..4"`` or ``"10,20,30"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty list: {text!r}")
    return out


def _str_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _add_spec_flags(p):
    d = SyntheticSpec()
    p.add_argument("--classes", type=int, default=d.num_classes)
    p.add_argument("--image-size", type=int, default=d.image_size)
    p.add_argument("--noise", type=float, default=d.noise_std)
    p.add_argument("--train-per-class", type=int, default=d.train_per_class)
    p.add_argument("--refs-per-class", type=int, default=d.ref_per_class)
    p.add_argument("--eval-per-class", type=int, default=d.eval_per_class)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)


def _add_prune_flags(p):
    d = SdDpxConfig()
    p.add_argument("--n", type=float, default=d.n, help="pruning step (fraction of all filters)")
    p.add_argument("--pmax", type=float, default=d.p_max)
    p.add_argument("--tmax", type=int, default=d.t_max)
    p.add_argument("--no-rate-change", action="store_true")
    p.add_argument("--no-order-change", action="store_true")
    p.add_argument("--epsilon", type=float, default=LrpConfig().epsilon)
    p.add_argument("--seed-mode", choices=(SEED_TRUE, SEED_PREDICTED), default=SEED_TRUE)
    p.add_argument("--abs-relevance", action="store_true", help="rank by summed |R| instead of signed R")


def _spec_from(args, seed: int) -> SyntheticSpec:
    need = args.train_per_class + args.refs_per_class + args.eval_per_class
    return SyntheticSpec(
        image_size=args.image_size,
        num_classes=args.classes,
        samples_per_class=need,
        noise_std=args.noise,
        seed=seed,
        train_per_class=args.train_per_class,
        ref_per_class=args.refs_per_class,
        eval_per_class=args.eval_per_class,
    )


def _prune_cfg(args, seed: int) -> SdDpxConfig:
    if not 0 < args.n <= 1 or not 0 < args.pmax <= 1 or args.n > args.pmax:
        raise UsageError(f"need 0 < --n <= --pmax <= 1 (got {args.n}, {args.pmax})")
    if args.tmax < 0:
        raise UsageError("--tmax must be non-negative")
    if not args.epsilon > 0:
        raise UsageError("--epsilon must be > 0")
    return SdDpxConfig(
        n=args.n,
        p_max=args.pmax,
        t_max=args.tmax,
        enable_rate_change=not args.no_rate_change,
        enable_order_change=not args.no_order_change and args.tmax > 0,
        lrp=LrpConfig(args.epsilon, args.seed_mode, args.abs_relevance),
        seed=seed,
    )


# ------------------------------------------------------------------- commands


def cmd_train(args) -> int:
    spec = _spec_from(args, args.seed)
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    splits = generate(spec)
    template = default_template(spec.num_classes, spec.channels, spec.image_size, seed=args.seed)
    model, acc = train(template, splits.train, args.epochs, args.lr, args.seed)
    out = Path(args.out)
    model_io.save_model(model, out / "model")
    for name in ("train", "refs", "eval"):
        model_io.save_dataset(getattr(splits, name), out / name)
    print(f"train accuracy {acc:.4f}; wrote model and splits to {out}")
    return EXIT_OK


def cmd_prune(args) -> int:
    cfg = _prune_cfg(args, args.seed)
    model = model_io.load_model(args.model)
    refs = model_io.load_dataset(args.refs)
    eval_set = model_io.load_dataset(args.eval) if args.eval else None
    result = STRATEGIES[args.strategy](model, refs, cfg, eval_set)
    out = Path(args.out)
    stem = args.strategy.replace("-", "_")
    model_io.write_trajectory_csv(out / f"{stem}_trajectory.csv", result.records, model.num_classes)
    model_io.save_model(compact(result.final), out / f"{stem}_pruned")
    last = result.records[-1]
    print(
        f"{args.strategy}: {len(result.records)} accepted states, final rate {last.rate:.4f}, "
        f"accuracy {last.overall_accuracy:.4f}, {result.evaluations} gate evaluations"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _prune_cfg(args, 0)
    for s in args.strategies:
        if s not in STRATEGIES:
            raise UsageError(f"unknown strategy {s!r}")
    base = _spec_from(args, 0)
    train_cfg = TrainConfig(args.epochs, args.lr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = defaultdict(list)  # (value, strategy) -> [RunResult]
    for value in args.values:
        for seed in args.seeds:
            try:
                spec = spec_for(args.vary, value, seed, base)
                spec.validate()
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
            prep = prepare(spec, train_cfg)
            results = run_all(prep, args.strategies, cfg)
            path = out / f"{args.vary}_{value}_seed{seed}.csv"
            records = [r for name in args.strategies for r in results[name].records]
            model_io.write_trajectory_csv(path, records, spec.num_classes)
            for name, res in results.items():
                runs[(value, name)].append(res)
            log.info("wrote %s", path)
    _write_aggregate(out / "aggregate.csv", args.vary, runs, grid(args.n, args.pmax))
    print(f"sweep over {args.vary}={args.values}, seeds {args.seeds}: {len(args.values) * len(args.seeds)} runs in {out}")
    return EXIT_OK


def _write_aggregate(path: Path, vary: str, runs, points) -> None:
    stats = ("overall_acc", "harmonic_mean", "min_class_acc", "wall_time_s")
    header = ["vary", "value", "strategy", "rate", "n_seeds"] + [
        f"{s}_{a}" for s in stats for a in ("mean", "min", "max")
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for (value, name), results in runs.items():
            curves = seed_curves(results, points)
            for k, rate in enumerate(curves["rate"]):
                row = [vary, value, name, repr(float(rate)), len(results)]
                row += [repr(float(curves[f"{s}_{a}"][k])) for s in stats for a in ("mean", "min", "max")]
                w.writerow(row)


def cmd_report(args) -> int:
    columns = None
    groups = defaultdict(list)  # (strategy, seed) -> rows
    for path in args.inputs:
        cols = model_io.class_columns(path)
        if columns is None:
            columns = cols
        elif cols != columns:
            raise UsageError(f"{path}: class columns {list(cols)} differ from {list(columns)}")
        for row in model_io.read_trajectory_csv(path):
            groups[(row["strategy"], row["seed"])].append(row)
    if not groups:
        raise UsageError("no trajectory rows in the given inputs")

    auc = {key: auc_lowest_class([r["per_class"] for r in rows]) for key, rows in sorted(groups.items())}
    by_strategy = defaultdict(dict)
    for (strategy, seed), value in auc.items():
        by_strategy[strategy][seed] = value

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "seed", "auc_lowest_class"])
        for strategy, per_seed in by_strategy.items():
            for seed, value in per_seed.items():
                w.writerow([strategy, seed, repr(value)])
        for strategy, per_seed in by_strategy.items():
            vals = np.array(list(per_seed.values()))
            w.writerow([strategy, "mean", repr(float(vals.mean()))])
            w.writerow([strategy, "min", repr(float(vals.min()))])
            w.writerow([strategy, "max", repr(float(vals.max()))])

    if args.curves:
        _write_curves(Path(args.curves), groups)
    for strategy, per_seed in by_strategy.items():
        print(f"{strategy}: mean AUC(lowest class) {np.mean(list(per_seed.values())):.4f} over {len(per_seed)} run(s)")
    return EXIT_OK


def _write_curves(path: Path, groups) -> None:
    """Seed-averaged curves per strategy over the union of recorded rates."""
    per = defaultdict(lambda: defaultdict(list))
    for (strategy, _), rows in groups.items():
        for r in rows:
            per[strategy][r["rate"]].append(r)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "rate", "n_runs", "overall_acc_mean", "harmonic_mean_mean", "min_class_acc_mean", "wall_time_s_mean"])
        for strategy, by_rate in per.items():
            for rate in sorted(by_rate):
                rows = by_rate[rate]
                w.writerow(
                    [
                        strategy,
                        repr(rate),
                        len(rows),
                        repr(float(np.mean([r["overall_acc"] for r in rows]))),
                        repr(float(np.mean([r["harmonic_mean"] for r in rows]))),
                        repr(float(np.mean([min(r["per_class"].values()) for r in rows]))),
                        repr(float(np.mean([r["wall_time_s"] for r in rows]))),
                    ]
                )


# ----------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relprune", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="generate synthetic data, train the toy CNN, save model + splits")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="run")
    _add_spec_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("prune", help="run one pruning strategy; write trajectory CSV and compacted model")
    p.add_argument("--strategy", choices=sorted(STRATEGIES), required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--eval")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="run")
    _add_prune_flags(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("sweep", help="rerun strategies varying reference-image count or class count")
    p.add_argument("--vary", choices=("refs", "classes"), required=True)
    p.add_argument("--values", type=_int_list, required=True)
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
    p.add_argument("--strategies", type=_str_list, default=[PX, DPX, SD_DPX])
    p.add_argument("--out", default="sweep")
    _add_spec_flags(p)
    _add_prune_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="AUC with lowest class and seed-averaged curves per strategy")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", default="report.csv")
    p.add_argument("--curves", help="also write seed-averaged curves here")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"relprune {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (model_io.ModelIOError, OSError) as exc:
        print(f"relprune {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RelevanceError, TrainingError, MetricError, FloatingPointError) as exc:
        print(f"relprune {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"relprune {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
