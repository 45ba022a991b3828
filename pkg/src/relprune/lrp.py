"""Epsilon-rule relevance propagation and per-filter relevance scores."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels as K
from .nn import (
    BatchNorm2D,
    Conv2D,
    Dense,
    Flatten,
    GlobalAvgPool,
    MaxPool2D,
    ModelGraph,
    ReLU,
    fold_model,
    forward,
)

SENTINEL = np.inf

SEED_TRUE = "true-class-logit"
SEED_PREDICTED = "predicted-class-logit"


class RelevanceError(ValueError):
    pass


@dataclass(frozen=True)
class LrpConfig:
    epsilon: float = 1e-6
    seed_mode: str = SEED_TRUE
    absolute: bool = False  # aggregate |R| per filter instead of the signed sum

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.seed_mode not in (SEED_TRUE, SEED_PREDICTED):
            raise ValueError(f"unknown seed_mode {self.seed_mode!r}")


@dataclass(frozen=True, eq=False)
class RelevanceMap:
    """Per-filter scores indexed by global filter id, plus the alive-vector
    they were computed under (dead filters are never ranked)."""

    scores: np.ndarray
    alive: np.ndarray

    def __post_init__(self):
        if self.scores.shape != self.alive.shape:
            raise ValueError("scores and alive must have equal length")

    def __len__(self):
        return len(self.scores)

    @classmethod
    def from_scores(cls, scores, alive=None) -> "RelevanceMap":
        scores = np.asarray(scores, dtype=np.float64)
        if alive is None:
            alive = np.ones(scores.shape, dtype=bool)
        return cls(scores, np.asarray(alive, dtype=bool))


def _stabilize(z: np.ndarray, eps: float) -> np.ndarray:
    # sign(0) taken as +1 so the denominator can never vanish
    return z + eps * np.where(z >= 0, 1.0, -1.0)


def propagate(model: ModelGraph, x: np.ndarray, seed: np.ndarray, epsilon: float):
    """Run the epsilon rule backwards through a BN-free model.

    ``x`` is a batch, ``seed`` the output-layer relevance (batch, classes).
    Returns ``(input_relevance, conv_relevance)`` where ``conv_relevance``
    lists, per conv ordinal, the relevance at that conv's output
    (batch, channels, H, W).
    """
    acts = forward(model, x)
    r = seed
    conv_rel: list[np.ndarray] = [None] * len(model.conv_layers)
    ordinal = {li: k for k, li in enumerate(model.conv_layers)}
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        a_in = x if i == 0 else acts[i - 1]
        z = acts[i]
        if isinstance(layer, Dense):
            s = r / _stabilize(z, epsilon)
            r = a_in * (s @ layer.weight)
        elif isinstance(layer, Conv2D):
            conv_rel[ordinal[i]] = r
            s = r / _stabilize(z, epsilon)
            c = K.conv2d_backward_input(s, layer.weight, a_in.shape[2], a_in.shape[3], layer.stride, layer.padding)
            r = a_in * c
        elif isinstance(layer, ReLU):
            pass
        elif isinstance(layer, MaxPool2D):
            _, arg = K.maxpool_forward(a_in, layer.size, layer.stride)
            r = K.maxpool_backward(r, arg, a_in.shape[2], a_in.shape[3], layer.size, layer.stride)
        elif isinstance(layer, GlobalAvgPool):
            h, w = a_in.shape[2:]
            r = np.broadcast_to(r[:, :, None, None] / (h * w), a_in.shape).copy()
        elif isinstance(layer, Flatten):
            r = r.reshape(a_in.shape)
        elif isinstance(layer, BatchNorm2D):
            raise RelevanceError("fold BatchNorm2D layers before propagating relevance")
        else:
            raise TypeError(f"no relevance rule for {type(layer).__name__}")
    return r, conv_rel, acts[-1]


def _seed(out: np.ndarray, labels: np.ndarray, mode: str) -> np.ndarray:
    cls = labels if mode == SEED_TRUE else np.argmax(out, axis=1)
    seed = np.zeros_like(out)
    rows = np.arange(out.shape[0])
    seed[rows, cls] = out[rows, cls]
    return seed


def relevance_batch(model: ModelGraph, images, labels, cfg: LrpConfig = LrpConfig()) -> np.ndarray:
    """Per-image filter scores, shape (n_images, f_num)."""
    x = np.asarray(images, dtype=np.float64)
    if x.shape == model.input_shape:
        x = x[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if x.shape[0] != labels.shape[0]:
        raise RelevanceError(f"{x.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= model.num_classes):
        raise RelevanceError(f"labels must lie in [0, {model.num_classes})")
    folded = fold_model(model)
    out = forward(folded, x)[-1]
    if not np.all(np.isfinite(out)):
        raise RelevanceError("forward pass produced non-finite values")
    _, conv_rel, _ = propagate(folded, x, _seed(out, labels, cfg.seed_mode), cfg.epsilon)
    per_layer = [np.abs(r).sum(axis=(2, 3)) if cfg.absolute else r.sum(axis=(2, 3)) for r in conv_rel]
    scores = np.concatenate(per_layer, axis=1) if per_layer else np.zeros((x.shape[0], 0))
    if not np.all(np.isfinite(scores)):
        raise RelevanceError("relevance scores are non-finite")
    return scores


def relevance_single(model: ModelGraph, image, label: int, cfg: LrpConfig = LrpConfig()) -> RelevanceMap:
    scores = relevance_batch(model, np.asarray(image)[None], [label], cfg)[0]
    return RelevanceMap(scores, model.alive())


def reduce_maps(per_image: np.ndarray | Sequence[np.ndarray]) -> np.ndarray:
    """Sum per-image score rows strictly in index order."""
    rows = np.asarray(per_image, dtype=np.float64)
    total = np.zeros(rows.shape[1])
    for row in rows:
        total = total + row
    return total


def relevance_aggregate(model: ModelGraph, images, labels, cfg: LrpConfig = LrpConfig()) -> RelevanceMap:
    """Sum of per-image relevance maps over a labelled reference set."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 0 or images.shape[0] == 0:
        raise RelevanceError("reference set is empty")
    per_image = relevance_batch(model, images, labels, cfg)
    return RelevanceMap(reduce_maps(per_image), model.alive())
