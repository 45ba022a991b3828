"""Relevance-ranked filter masking, the skip boost, and physical compaction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

import numpy as np

from .lrp import SENTINEL, RelevanceMap
from .nn import BatchNorm2D, Conv2D, Dense, Flatten, GlobalAvgPool, MaxPool2D, ModelGraph, ReLU


class PruningError(ValueError):
    pass


def as_fraction(rate) -> Fraction:
    """Exact rational for a pruning rate.

    Floats go through their shortest repr, so ``0.05`` means exactly 1/20
    and repeated additions of a step never drift below a grid point.
    """
    if isinstance(rate, Fraction):
        return rate
    if isinstance(rate, Rational):
        return Fraction(rate)
    return Fraction(repr(float(rate)))


def count_to_prune(rate_increment, f_num: int) -> int:
    """``INT(rate * f_num)`` with truncation toward zero."""
    r = as_fraction(rate_increment)
    if not 0 <= r <= 1:
        raise PruningError(f"rate must lie in [0, 1], got {float(r)}")
    return math.floor(r * f_num)


@dataclass(frozen=True)
class PruneMaskDelta:
    newly_pruned: frozenset
    resulting_rate: float


def ranking(relevance: RelevanceMap) -> np.ndarray:
    """Global filter ids in ascending score order, ties by id."""
    scores = relevance.scores
    if np.isnan(scores).any():
        raise PruningError("relevance contains NaN")
    ids = np.arange(len(scores))
    return np.lexsort((ids, scores))


def filter_pruner(model: ModelGraph, relevance: RelevanceMap, target_rate) -> tuple[ModelGraph, PruneMaskDelta]:
    """Mask the lowest-relevance alive filters until ``INT(target_rate * F_num)``
    filters are pruned in total.  The last alive filter of a layer is never
    taken; the next-lowest candidate is used instead.  Returns a new model.
    """
    f_num = model.f_num
    if len(relevance) != f_num:
        raise PruningError(f"relevance has {len(relevance)} entries, model has {f_num} filters")
    target = count_to_prune(target_rate, f_num)
    current = model.pruned_count()
    if target < current:
        raise PruningError(f"target count {target} is below the {current} filters already pruned")
    need = target - current
    if need == 0:
        return model, PruneMaskDelta(frozenset(), current / f_num)

    alive = model.alive().copy()
    layer_of = model.layer_of()
    per_layer = np.bincount(layer_of[alive], minlength=len(model.conv_layers))
    chosen = []
    for gid in ranking(relevance):
        if len(chosen) == need:
            break
        if not alive[gid]:
            continue
        layer = layer_of[gid]
        if per_layer[layer] <= 1:
            continue
        alive[gid] = False
        per_layer[layer] -= 1
        chosen.append(int(gid))
    if len(chosen) < need:
        raise PruningError(
            f"cannot prune {target} of {f_num} filters: only {current + len(chosen)} removable "
            f"while keeping one alive filter in each of {len(model.conv_layers)} conv layers"
        )
    return model.with_alive(alive), PruneMaskDelta(frozenset(chosen), target / f_num)


def boost_low_relevance(relevance: RelevanceMap, t: int) -> RelevanceMap:
    """Copy of ``relevance`` with the ``t`` lowest alive scores set to SENTINEL."""
    n_alive = int(relevance.alive.sum())
    if t < 0 or t >= n_alive:
        raise PruningError(f"skip count {t} must satisfy 0 <= T < {n_alive} alive filters")
    scores = relevance.scores.copy()
    if t:
        order = [g for g in ranking(relevance) if relevance.alive[g]]
        scores[order[:t]] = SENTINEL
    return RelevanceMap(scores, relevance.alive.copy())


def max_prunable(model: ModelGraph) -> int:
    return model.f_num - len(model.conv_layers)


def _slice_consumer(layers: list, start: int, keep: np.ndarray, shapes) -> None:
    """Drop the input slice matching ``keep`` from the first layer that
    consumes the channels produced just before ``start``."""
    j = start
    while j < len(layers) and isinstance(layers[j], (BatchNorm2D, ReLU, MaxPool2D)):
        j += 1
    if j == len(layers):
        return
    layer = layers[j]
    if isinstance(layer, Conv2D):
        layers[j] = Conv2D(layer.weight[:, keep], layer.bias.copy(), layer.stride, layer.padding)
        return
    if isinstance(layer, GlobalAvgPool):
        cols = keep
    elif isinstance(layer, Flatten):
        c, h, w = shapes[j - 1]
        cols = np.repeat(keep, h * w)
    else:
        raise PruningError(f"cannot compact through {type(layer).__name__} at layer {j}")
    j += 1
    while j < len(layers) and isinstance(layers[j], Flatten):
        j += 1
    dense = layers[j]
    if not isinstance(dense, Dense):
        raise PruningError(f"expected Dense after pooling at layer {j}")
    layers[j] = Dense(dense.weight[:, cols], dense.bias.copy())


def compact(model: ModelGraph) -> ModelGraph:
    """Physically remove masked filters and the matching downstream input slices."""
    layers = list(model.layers)
    for ordinal, li in enumerate(model.conv_layers):
        keep = model.masks[ordinal]
        if keep.all():
            continue
        conv = layers[li]
        layers[li] = Conv2D(conv.weight[keep], conv.bias[keep], conv.stride, conv.padding)
        nxt = li + 1
        if nxt < len(layers) and isinstance(layers[nxt], BatchNorm2D):
            bn = layers[nxt]
            layers[nxt] = BatchNorm2D(bn.gamma[keep], bn.beta[keep], bn.mean[keep], bn.var[keep], bn.eps)
        _slice_consumer(layers, li + 1, keep, model.shapes)
    return ModelGraph(tuple(layers), model.input_shape)
