"""Synthetic oriented-bar images and a small deterministic SGD trainer.

Class ``k`` of ``C`` is a bright bar through the (jittered) image centre at
angle ``k * pi / C``.  Each class's samples are split eval / train /
reference in that order.  Sample ``i`` of a class
depends only on (seed, class, i), so changing the number of reference images
never changes the training or evaluation data.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .nn import Conv2D, Dense, GlobalAvgPool, MaxPool2D, ModelGraph, ReLU, backward, copy_layer, forward


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LabeledSet:
    images: np.ndarray  # (n, C, H, W)
    labels: np.ndarray  # (n,) int64

    def __post_init__(self):
        object.__setattr__(self, "images", np.asarray(self.images, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.labels))

    def per_class_prefix(self, k: int) -> "LabeledSet":
        """First ``k`` samples of every class, original order kept."""
        keep = np.zeros(len(self), dtype=bool)
        for c in self.classes:
            idx = np.flatnonzero(self.labels == c)
            if len(idx) < k:
                raise ValueError(f"class {c} has only {len(idx)} samples, {k} requested")
            keep[idx[:k]] = True
        return LabeledSet(self.images[keep], self.labels[keep])

    def sample_hashes(self) -> set[str]:
        return {hashlib.sha1(img.tobytes()).hexdigest() for img in self.images}


@dataclass(frozen=True)
class Splits:
    train: LabeledSet
    refs: LabeledSet
    eval: LabeledSet


@dataclass(frozen=True)
class SyntheticSpec:
    image_size: int = 12
    channels: int = 1
    num_classes: int = 2
    samples_per_class: int = 320
    noise_std: float = 0.35
    seed: int = 0
    train_per_class: int = 150
    ref_per_class: int = 30
    eval_per_class: int = 100
    jitter: int = 2
    bar_width: float = 1.0

    def validate(self) -> None:
        if not 2 <= self.num_classes <= 5:
            raise ValueError(f"num_classes must be in 2..5, got {self.num_classes}")
        if self.image_size < 4 or self.channels < 1:
            raise ValueError("image_size must be >= 4 and channels >= 1")
        if self.noise_std < 0 or self.jitter < 0:
            raise ValueError("noise_std and jitter must be non-negative")
        if min(self.train_per_class, self.ref_per_class, self.eval_per_class) < 1:
            raise ValueError("every split needs at least one sample per class")
        need = self.train_per_class + self.ref_per_class + self.eval_per_class
        if self.samples_per_class < need:
            raise ValueError(
                f"samples_per_class={self.samples_per_class} cannot fill splits needing {need} per class"
            )


def render_bar(size: int, angle: float, dy: float = 0.0, dx: float = 0.0, width: float = 1.0) -> np.ndarray:
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    # perpendicular distance to the line through (c+dy, c+dx) with direction (sin, cos)
    d = (yy - c - dy) * np.cos(angle) - (xx - c - dx) * np.sin(angle)
    return np.clip(1.0 - np.abs(d) / width, 0.0, 1.0)


def templates(spec: SyntheticSpec) -> np.ndarray:
    """Noise-free, unshifted image per class: (classes, channels, H, W)."""
    out = np.empty((spec.num_classes, spec.channels, spec.image_size, spec.image_size))
    for k in range(spec.num_classes):
        out[k] = render_bar(spec.image_size, k * np.pi / spec.num_classes, width=spec.bar_width)
    return out


def generate(spec: SyntheticSpec) -> Splits:
    spec.validate()
    n = spec.samples_per_class
    images = np.empty((spec.num_classes, n, spec.channels, spec.image_size, spec.image_size))
    for k in range(spec.num_classes):
        # one stream per class, drawn sample by sample: sample i never depends on n
        rng = np.random.default_rng([spec.seed, k])
        angle = k * np.pi / spec.num_classes
        for i in range(n):
            dy, dx = rng.integers(-spec.jitter, spec.jitter + 1, size=2)
            noise = rng.normal(0.0, 1.0, size=images.shape[2:])
            images[k, i] = render_bar(spec.image_size, angle, dy, dx, spec.bar_width) + spec.noise_std * noise

    def take(lo: int, hi: int) -> LabeledSet:
        # interleave classes: sample j of every class, then sample j+1, ...
        x = images[:, lo:hi].transpose(1, 0, 2, 3, 4).reshape(-1, *images.shape[2:])
        y = np.tile(np.arange(spec.num_classes), hi - lo)
        return LabeledSet(x, y)

    e = spec.eval_per_class
    t = e + spec.train_per_class
    r = t + spec.ref_per_class
    return Splits(train=take(e, t), refs=take(t, r), eval=take(0, e))


# -------------------------------------------------------------------- models


def default_template(
    num_classes: int = 2,
    channels: int = 1,
    image_size: int = 12,
    filters: tuple[int, int] = (12, 20),
    seed: int = 0,
) -> ModelGraph:
    """Two 3x3 conv blocks (32 filters by default), GAP and a linear head, He-initialised."""
    rng = np.random.default_rng(seed)

    def he(shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    f1, f2 = filters
    layers = [
        Conv2D(he((f1, channels, 3, 3), channels * 9), np.zeros(f1), padding=1),
        ReLU(),
        MaxPool2D(2),
        Conv2D(he((f2, f1, 3, 3), f1 * 9), np.zeros(f2), padding=1),
        ReLU(),
        GlobalAvgPool(),
        Dense(he((num_classes, f2), f2), np.zeros(num_classes)),
    ]
    return ModelGraph(tuple(layers), (channels, image_size, image_size))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    n = labels.shape[0]
    loss = -np.log(p[np.arange(n), labels] + 1e-300).mean()
    grad = p
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def accuracy(model: ModelGraph, data: LabeledSet) -> float:
    return float((np.argmax(forward(model, data.images)[-1], axis=1) == data.labels).mean())


def train(
    template: ModelGraph,
    data: LabeledSet,
    epochs: int = 40,
    lr: float = 0.1,
    seed: int = 0,
    batch_size: int = 16,
    momentum: float = 0.0,
) -> tuple[ModelGraph, float]:
    """Minibatch SGD on softmax cross-entropy (plain SGD unless ``momentum`` > 0).

    Returns the trained model and its final accuracy on ``data``.
    """
    rng = np.random.default_rng(seed)
    layers = [copy_layer(l) for l in template.layers]
    model = ModelGraph(tuple(layers), template.input_shape, template.masks)
    velocity = {i: {k: np.zeros_like(v) for k, v in l.params().items()} for i, l in enumerate(layers)}
    n = len(data)
    if lr == 0:
        return model, accuracy(model, data)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x = data.images[idx]
            acts = forward(model, x)
            loss, g = softmax_cross_entropy(acts[-1], data.labels[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged to {loss} in epoch {epoch}; lower the learning rate")
            grads = backward(model, x, g, acts)
            for i, layer_grads in grads.items():
                params = layers[i].params()
                for name, grad in layer_grads.items():
                    v = velocity[i][name]
                    v *= momentum
                    v -= lr * grad
                    params[name] += v
    for layer in layers:
        for name, p in layer.params().items():
            if not np.all(np.isfinite(p)):
                raise TrainingError(f"parameter {name} became non-finite")
    return model, accuracy(model, data)
