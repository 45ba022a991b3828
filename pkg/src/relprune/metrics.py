"""Per-class accuracy, the harmonic-mean gate score and the lowest-class AUC."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .nn import ModelGraph, logits


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ClassAccuracy:
    counts: Mapping[int, tuple[int, int]]  # class id -> (correct, total)

    def __post_init__(self):
        for c, (correct, total) in self.counts.items():
            if total < 1 or not 0 <= correct <= total:
                raise MetricError(f"class {c}: invalid counts ({correct}, {total})")

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted(self.counts))

    @property
    def accuracy(self) -> dict[int, float]:
        return {c: self.counts[c][0] / self.counts[c][1] for c in self.classes}

    def overall(self) -> float:
        correct = sum(c for c, _ in self.counts.values())
        total = sum(t for _, t in self.counts.values())
        return correct / total

    def lowest(self) -> float:
        return min(self.accuracy.values())

    @classmethod
    def from_accuracies(cls, acc: Mapping[int, float], total: int = 1_000_000) -> "ClassAccuracy":
        return cls({c: (round(a * total), total) for c, a in acc.items()})


def tally(predictions, labels) -> ClassAccuracy:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise MetricError("empty labelled set")
    counts = {}
    for c in np.unique(labels):
        sel = labels == c
        counts[int(c)] = (int((predictions[sel] == c).sum()), int(sel.sum()))
    return ClassAccuracy(counts)


def per_class_accuracy(model: ModelGraph, images, labels) -> ClassAccuracy:
    """Argmax-of-logits accuracy per class (argmax ties -> lowest class id)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= model.num_classes):
        raise MetricError(f"labels must lie in [0, {model.num_classes})")
    return tally(np.argmax(logits(model, images), axis=-1), labels)


def harmonic_mean(acc) -> float:
    """``|C| / sum(1/A_c)``; defined as 0 as soon as any class sits at 0."""
    if isinstance(acc, ClassAccuracy):
        values = list(acc.accuracy.values())
    elif isinstance(acc, Mapping):
        values = list(acc.values())
    else:
        values = list(acc)
    if not values:
        raise MetricError("harmonic mean of an empty class set")
    if any(v == 0 for v in values):
        return 0.0
    return len(values) / sum(1.0 / v for v in values)


@dataclass
class CurveRecord:
    rate: float
    per_class: ClassAccuracy
    harmonic_mean: float
    overall_accuracy: float
    wall_time_seconds: float
    strategy: str = ""
    seed: int = 0
    extras: dict = field(default_factory=dict)

    @classmethod
    def measure(cls, rate, acc: ClassAccuracy, wall_time: float, strategy: str = "", seed: int = 0, **extras):
        return cls(float(rate), acc, harmonic_mean(acc), acc.overall(), wall_time, strategy, seed, dict(extras))


def _class_minima(trajectory) -> list[float]:
    classes = None
    minima = []
    for rec in trajectory:
        acc = rec.per_class.accuracy if isinstance(rec, CurveRecord) else dict(rec)
        if classes is None:
            classes = set(acc)
        elif set(acc) != classes:
            raise MetricError(f"class sets differ along the trajectory: {sorted(classes)} vs {sorted(acc)}")
        minima.append(min(acc.values()))
    if not minima:
        raise MetricError("empty trajectory")
    return minima


def auc_lowest_class(trajectory: Sequence) -> float:
    """Mean over recorded rates of the worst class accuracy.

    ``trajectory`` holds CurveRecords or plain ``{class: accuracy}`` mappings.
    """
    minima = _class_minima(trajectory)
    return sum(minima) / len(minima)


def grid(step: float = 0.05, pmax: float = 0.95, start: float | None = None) -> list[float]:
    start = step if start is None else start
    n = int(round((pmax - start) / step))
    return [round(start + k * step, 10) for k in range(n + 1)]


def resample_to_grid(trajectory: Sequence[CurveRecord], points: Sequence[float]) -> list[CurveRecord]:
    """Pick, for every grid rate, the recorded state at the nearest rate
    (ties go to the earlier record)."""
    if not trajectory:
        raise MetricError("empty trajectory")
    rates = np.array([r.rate for r in trajectory])
    return [trajectory[int(np.argmin(np.abs(rates - p)))] for p in points]


def auc_lowest_class_on_grid(trajectory: Sequence[CurveRecord], points: Sequence[float] | None = None) -> float:
    return auc_lowest_class(resample_to_grid(trajectory, grid() if points is None else points))
