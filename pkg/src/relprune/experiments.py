"""Seeded experiment matrix: train a toy model per seed, run strategies,
aggregate curves across seeds."""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .metrics import auc_lowest_class, grid, resample_to_grid
from .nn import ModelGraph
from .strategies import STRATEGIES, RunResult, SdDpxConfig
from .toylab import Splits, SyntheticSpec, default_template, generate, train

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    lr: float = 0.1
    batch_size: int = 16


@dataclass
class Prepared:
    spec: SyntheticSpec
    splits: Splits
    model: ModelGraph
    train_accuracy: float


def prepare(spec: SyntheticSpec, train_cfg: TrainConfig = TrainConfig()) -> Prepared:
    """Generate data and train the default toy model for ``spec.seed``."""
    return _prepare_cached(spec, train_cfg)


@lru_cache(maxsize=32)
def _prepare_cached(spec: SyntheticSpec, train_cfg: TrainConfig) -> Prepared:
    # the training data does not depend on ref_per_class, so train once per
    # spec-without-refs and only re-slice the reference split
    base = replace(spec, ref_per_class=1, samples_per_class=spec.eval_per_class + spec.train_per_class + 1)
    if spec != base:
        trained = _prepare_cached(base, train_cfg)
        return Prepared(spec, generate(spec), trained.model, trained.train_accuracy)
    splits = generate(spec)
    template = default_template(spec.num_classes, spec.channels, spec.image_size, seed=spec.seed)
    model, acc = train(template, splits.train, train_cfg.epochs, train_cfg.lr, spec.seed, train_cfg.batch_size)
    return Prepared(spec, splits, model, acc)


def run_all(prep: Prepared, strategies, cfg: SdDpxConfig) -> dict[str, RunResult]:
    cfg = replace(cfg, seed=prep.spec.seed)
    return {name: STRATEGIES[name](prep.model, prep.splits.refs, cfg, prep.splits.eval) for name in strategies}


def spec_for(vary: str, value: int, seed: int, base: SyntheticSpec = SyntheticSpec()) -> SyntheticSpec:
    if vary == "refs":
        spec = replace(base, ref_per_class=int(value), seed=seed)
    elif vary == "classes":
        spec = replace(base, num_classes=int(value), seed=seed)
    else:
        raise ValueError(f"--vary must be 'refs' or 'classes', got {vary!r}")
    need = spec.train_per_class + spec.ref_per_class + spec.eval_per_class
    return replace(spec, samples_per_class=max(spec.samples_per_class, need))


def seed_curves(results: list[RunResult], points=None) -> dict[str, np.ndarray]:
    """Per-grid-point mean/min/max across seeds of accuracy, harmonic mean,
    lowest-class accuracy and wall time."""
    points = grid() if points is None else list(points)
    cols = {"overall_acc": [], "harmonic_mean": [], "min_class_acc": [], "wall_time_s": []}
    for res in results:
        recs = resample_to_grid(res.records, points)
        cols["overall_acc"].append([r.overall_accuracy for r in recs])
        cols["harmonic_mean"].append([r.harmonic_mean for r in recs])
        cols["min_class_acc"].append([r.per_class.lowest() for r in recs])
        cols["wall_time_s"].append([r.wall_time_seconds for r in recs])
    out = {"rate": np.asarray(points)}
    for k, v in cols.items():
        a = np.asarray(v)
        out[f"{k}_mean"] = a.mean(axis=0)
        out[f"{k}_min"] = a.min(axis=0)
        out[f"{k}_max"] = a.max(axis=0)
    return out


def auc_by_seed(results: dict[int, RunResult]) -> dict[int, float]:
    return {seed: auc_lowest_class(r.records) for seed, r in results.items()}
