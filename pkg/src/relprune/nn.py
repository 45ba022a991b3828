"""Minimal sequential CNN: layer types, the model container, forward and
reverse-mode gradients.

Tensors are plain float64 ``numpy`` arrays in NCHW layout.  Every public
entry point accepts either a single sample (shape == ``model.input_shape``)
or a batch with a leading sample axis.

Filter masks live on the model, one boolean vector per Conv2D layer (in
layer order).  A masked filter's output channel is forced to zero; when a
BatchNorm2D follows the conv, the mask is re-applied after the BN so the
filter contributes nothing downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import ClassVar, Sequence

import numpy as np

from . import _kernels as K


class ShapeError(ValueError):
    """Raised when a tensor shape does not fit a layer; carries the layer id."""

    def __init__(self, layer_id: int | None, message: str):
        self.layer_id = layer_id
        where = "input" if layer_id is None else f"layer {layer_id}"
        super().__init__(f"{where}: {message}")


# --------------------------------------------------------------------- layers


@dataclass(eq=False)
class Conv2D:
    weight: np.ndarray  # (out, in, k, k)
    bias: np.ndarray  # (out,)
    stride: int = 1
    padding: int = 0
    kind: ClassVar[str] = "Conv2D"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ValueError(f"conv weight must be (out, in, k, k), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("conv bias length must equal output channels")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    def params(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def hyper(self) -> dict[str, int]:
        return {"stride": self.stride, "padding": self.padding}


@dataclass(eq=False)
class BatchNorm2D:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5
    kind: ClassVar[str] = "BatchNorm2D"

    def __post_init__(self):
        for name in ("gamma", "beta", "mean", "var"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = self.gamma.shape
        if len(n) != 1 or any(getattr(self, a).shape != n for a in ("beta", "mean", "var")):
            raise ValueError("batchnorm parameters must be equal-length vectors")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def scale(self) -> np.ndarray:
        return self.gamma / np.sqrt(self.var + self.eps)

    def params(self) -> dict[str, np.ndarray]:
        return {"gamma": self.gamma, "beta": self.beta, "mean": self.mean, "var": self.var}

    def hyper(self) -> dict[str, float]:
        return {"eps": self.eps}


@dataclass(eq=False)
class ReLU:
    kind: ClassVar[str] = "ReLU"

    def params(self):
        return {}

    def hyper(self):
        return {}


@dataclass(eq=False)
class MaxPool2D:
    size: int = 2
    stride: int | None = None
    kind: ClassVar[str] = "MaxPool2D"

    def __post_init__(self):
        if self.stride is None:
            self.stride = self.size

    def params(self):
        return {}

    def hyper(self):
        return {"size": self.size, "stride": self.stride}


@dataclass(eq=False)
class GlobalAvgPool:
    kind: ClassVar[str] = "GlobalAvgPool"

    def params(self):
        return {}

    def hyper(self):
        return {}


@dataclass(eq=False)
class Flatten:
    kind: ClassVar[str] = "Flatten"

    def params(self):
        return {}

    def hyper(self):
        return {}


@dataclass(eq=False)
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    kind: ClassVar[str] = "Dense"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("dense weight must be (out, in) with matching bias")

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def hyper(self):
        return {}


LAYER_TYPES = {cls.kind: cls for cls in (Conv2D, BatchNorm2D, ReLU, MaxPool2D, GlobalAvgPool, Flatten, Dense)}
Layer = Conv2D | BatchNorm2D | ReLU | MaxPool2D | GlobalAvgPool | Flatten | Dense


def _output_shape(layer, shape: tuple[int, ...], idx: int) -> tuple[int, ...]:
    if isinstance(layer, Conv2D):
        if len(shape) != 3 or shape[0] != layer.in_channels:
            raise ShapeError(idx, f"Conv2D expects ({layer.in_channels}, H, W), got {shape}")
        ho = K.conv_output_size(shape[1], layer.kernel_size, layer.stride, layer.padding)
        wo = K.conv_output_size(shape[2], layer.kernel_size, layer.stride, layer.padding)
        if ho < 1 or wo < 1:
            raise ShapeError(idx, f"Conv2D output would be empty for input {shape}")
        return (layer.out_channels, ho, wo)
    if isinstance(layer, BatchNorm2D):
        if len(shape) != 3 or shape[0] != layer.channels:
            raise ShapeError(idx, f"BatchNorm2D expects {layer.channels} channels, got {shape}")
        return shape
    if isinstance(layer, ReLU):
        return shape
    if isinstance(layer, MaxPool2D):
        if len(shape) != 3:
            raise ShapeError(idx, f"MaxPool2D expects (C, H, W), got {shape}")
        ho = K.conv_output_size(shape[1], layer.size, layer.stride, 0)
        wo = K.conv_output_size(shape[2], layer.size, layer.stride, 0)
        if ho < 1 or wo < 1:
            raise ShapeError(idx, f"MaxPool2D window larger than input {shape}")
        return (shape[0], ho, wo)
    if isinstance(layer, GlobalAvgPool):
        if len(shape) != 3:
            raise ShapeError(idx, f"GlobalAvgPool expects (C, H, W), got {shape}")
        return (shape[0],)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(layer, Dense):
        if len(shape) != 1 or shape[0] != layer.in_features:
            raise ShapeError(idx, f"Dense expects ({layer.in_features},), got {shape}")
        return (layer.out_features,)
    raise TypeError(f"unknown layer type {type(layer).__name__}")


# ---------------------------------------------------------------------- model


@dataclass(eq=False)
class ModelGraph:
    """Ordered layers plus one alive-mask per Conv2D layer.

    Parameters are treated as immutable once the graph is built; pruning
    produces new graphs via :meth:`with_masks`, which share parameter arrays.
    """

    layers: tuple
    input_shape: tuple[int, ...]
    masks: tuple = None
    shapes: tuple = field(init=False, repr=False)
    conv_layers: tuple = field(init=False, repr=False)
    filter_index: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.layers = tuple(self.layers)
        self.input_shape = tuple(int(s) for s in self.input_shape)
        shapes = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            if isinstance(layer, BatchNorm2D) and (i == 0 or not isinstance(self.layers[i - 1], Conv2D)):
                raise ShapeError(i, "BatchNorm2D must directly follow a Conv2D")
            shape = _output_shape(layer, shape, i)
            shapes.append(shape)
        if not self.layers or len(shapes[-1]) != 1:
            raise ShapeError(len(self.layers) - 1, "model must end in a logit vector")
        self.shapes = tuple(shapes)
        self.conv_layers = tuple(i for i, l in enumerate(self.layers) if isinstance(l, Conv2D))
        self.filter_index = tuple(
            (li, ch) for li in self.conv_layers for ch in range(self.layers[li].out_channels)
        )
        if self.masks is None:
            masks = [np.ones(self.layers[li].out_channels, dtype=bool) for li in self.conv_layers]
        else:
            masks = [np.array(m, dtype=bool) for m in self.masks]
            if len(masks) != len(self.conv_layers):
                raise ValueError("need one mask per Conv2D layer")
            for li, m in zip(self.conv_layers, masks):
                if m.shape != (self.layers[li].out_channels,):
                    raise ShapeError(li, "mask length must equal output channels")
                if not m.any():
                    raise ShapeError(li, "every Conv2D layer needs at least one alive filter")
        for m in masks:
            m.setflags(write=False)
        self.masks = tuple(masks)

    # -- filter bookkeeping

    @property
    def f_num(self) -> int:
        return len(self.filter_index)

    @property
    def num_classes(self) -> int:
        return self.shapes[-1][0]

    @property
    def layer_offsets(self) -> tuple[int, ...]:
        """Global id of the first filter of each conv layer."""
        out, acc = [], 0
        for li in self.conv_layers:
            out.append(acc)
            acc += self.layers[li].out_channels
        return tuple(out)

    def alive(self) -> np.ndarray:
        """Global alive-vector of length ``f_num``."""
        if not self.masks:
            return np.zeros(0, dtype=bool)
        return np.concatenate(self.masks)

    def layer_of(self) -> np.ndarray:
        """Conv ordinal of every global filter id."""
        return np.repeat(
            np.arange(len(self.conv_layers)),
            [self.layers[li].out_channels for li in self.conv_layers],
        )

    def pruned_count(self) -> int:
        return int(self.f_num - self.alive().sum())

    def pruned_fraction(self) -> float:
        return self.pruned_count() / self.f_num if self.f_num else 0.0

    def with_masks(self, masks: Sequence[np.ndarray]) -> "ModelGraph":
        return ModelGraph(self.layers, self.input_shape, tuple(masks))

    def with_alive(self, alive: np.ndarray) -> "ModelGraph":
        alive = np.asarray(alive, dtype=bool)
        if alive.shape != (self.f_num,):
            raise ValueError(f"alive vector must have length {self.f_num}")
        bounds = np.cumsum([0] + [self.layers[li].out_channels for li in self.conv_layers])
        return self.with_masks([alive[a:b] for a, b in zip(bounds[:-1], bounds[1:])])

    def with_layers(self, layers: Sequence) -> "ModelGraph":
        return ModelGraph(tuple(layers), self.input_shape, self.masks)

    def channel_mask_after(self) -> dict[int, np.ndarray]:
        """Layer index -> mask to apply to that layer's output (conv, and a BN right after it)."""
        out = {}
        for ordinal, li in enumerate(self.conv_layers):
            m = self.masks[ordinal]
            if m.all():
                continue
            out[li] = m
            if li + 1 < len(self.layers) and isinstance(self.layers[li + 1], BatchNorm2D):
                out[li + 1] = m
        return out

    def param_count(self) -> int:
        return sum(p.size for layer in self.layers for p in layer.params().values())


# -------------------------------------------------------------------- forward


def _as_batch(model: ModelGraph, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape == model.input_shape:
        return x[None], True
    if x.shape[1:] != model.input_shape:
        raise ShapeError(None, f"expected input shape {model.input_shape} (optionally batched), got {x.shape}")
    return x, False


def layer_forward(layer, x: np.ndarray) -> np.ndarray:
    """Apply one layer to a batch (no masking)."""
    if isinstance(layer, Conv2D):
        return K.conv2d_forward(x, layer.weight, layer.bias, layer.stride, layer.padding)
    if isinstance(layer, BatchNorm2D):
        s = layer.scale()
        return (x - layer.mean[None, :, None, None]) * s[None, :, None, None] + layer.beta[None, :, None, None]
    if isinstance(layer, ReLU):
        return np.maximum(x, 0.0)
    if isinstance(layer, MaxPool2D):
        return K.maxpool_forward(x, layer.size, layer.stride)[0]
    if isinstance(layer, GlobalAvgPool):
        return x.mean(axis=(2, 3))
    if isinstance(layer, Flatten):
        return x.reshape(x.shape[0], -1)
    if isinstance(layer, Dense):
        return x @ layer.weight.T + layer.bias
    raise TypeError(f"unknown layer type {type(layer).__name__}")


def forward(model: ModelGraph, x) -> list[np.ndarray]:
    """Return every layer's output; the last entry holds the logits."""
    batch, single = _as_batch(model, x)
    masks = model.channel_mask_after()
    outs = []
    a = batch
    for i, layer in enumerate(model.layers):
        a = layer_forward(layer, a)
        m = masks.get(i)
        if m is not None:
            a = a * m[None, :, None, None]
        outs.append(a)
    if single:
        return [o[0] for o in outs]
    return outs


def logits(model: ModelGraph, x) -> np.ndarray:
    return forward(model, x)[-1]


def predict(model: ModelGraph, x) -> np.ndarray:
    """Argmax class per sample; ties go to the lowest class id."""
    return np.argmax(logits(model, x), axis=-1)


# ------------------------------------------------------------------- backward


def backward(model: ModelGraph, x, loss_grad, activations: list[np.ndarray] | None = None) -> dict[int, dict[str, np.ndarray]]:
    """Parameter gradients given dL/dlogits.

    Returns ``{layer_index: {param_name: grad}}`` for every layer with
    trainable parameters.  BatchNorm running statistics are treated as
    constants, so only ``gamma`` and ``beta`` receive gradients.
    """
    batch, single = _as_batch(model, x)
    g = np.asarray(loss_grad, dtype=np.float64)
    if single:
        g = g[None]
    if activations is None:
        activations = forward(model, batch)
    elif single:
        activations = [a[None] for a in activations]
    if g.shape != activations[-1].shape:
        raise ShapeError(len(model.layers) - 1, f"loss gradient shape {g.shape} != logits {activations[-1].shape}")
    masks = model.channel_mask_after()
    grads: dict[int, dict[str, np.ndarray]] = {}
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        a_in = batch if i == 0 else activations[i - 1]
        m = masks.get(i)
        if m is not None:
            g = g * m[None, :, None, None]
        if isinstance(layer, Conv2D):
            k = layer.kernel_size
            grads[i] = {
                "weight": K.conv2d_backward_weight(a_in, g, k, layer.stride, layer.padding),
                "bias": g.sum(axis=(0, 2, 3)),
            }
            if i > 0:
                g = K.conv2d_backward_input(g, layer.weight, a_in.shape[2], a_in.shape[3], layer.stride, layer.padding)
        elif isinstance(layer, BatchNorm2D):
            xhat = (a_in - layer.mean[None, :, None, None]) / np.sqrt(layer.var + layer.eps)[None, :, None, None]
            grads[i] = {"gamma": (g * xhat).sum(axis=(0, 2, 3)), "beta": g.sum(axis=(0, 2, 3))}
            g = g * layer.scale()[None, :, None, None]
        elif isinstance(layer, ReLU):
            g = g * (a_in > 0)
        elif isinstance(layer, MaxPool2D):
            _, arg = K.maxpool_forward(a_in, layer.size, layer.stride)
            g = K.maxpool_backward(g, arg, a_in.shape[2], a_in.shape[3], layer.size, layer.stride)
        elif isinstance(layer, GlobalAvgPool):
            h, w = a_in.shape[2:]
            g = np.broadcast_to(g[:, :, None, None] / (h * w), a_in.shape).copy()
        elif isinstance(layer, Flatten):
            g = g.reshape(a_in.shape)
        elif isinstance(layer, Dense):
            grads[i] = {"weight": g.T @ a_in, "bias": g.sum(axis=0)}
            g = g @ layer.weight
    return dict(sorted(grads.items()))


# ----------------------------------------------------------------- BN folding


def fold_batchnorm(conv: Conv2D, bn: BatchNorm2D) -> Conv2D:
    """Merge an inference-mode BatchNorm into the conv that feeds it."""
    if not isinstance(conv, Conv2D) or not isinstance(bn, BatchNorm2D):
        raise TypeError("fold_batchnorm expects (Conv2D, BatchNorm2D)")
    if conv.out_channels != bn.channels:
        raise ValueError(f"channel mismatch: conv has {conv.out_channels} outputs, BN has {bn.channels}")
    s = bn.scale()
    return Conv2D(
        conv.weight * s[:, None, None, None],
        (conv.bias - bn.mean) * s + bn.beta,
        stride=conv.stride,
        padding=conv.padding,
    )


def fold_model(model: ModelGraph) -> ModelGraph:
    """Fold every Conv2D+BatchNorm2D pair; conv ordinals (and masks) are preserved."""
    if not any(isinstance(l, BatchNorm2D) for l in model.layers):
        return model
    layers = []
    for layer in model.layers:
        if isinstance(layer, BatchNorm2D):
            layers[-1] = fold_batchnorm(layers[-1], layer)
        else:
            layers.append(layer)
    return ModelGraph(tuple(layers), model.input_shape, model.masks)


def copy_layer(layer, **changes):
    """Deep-copy a layer's arrays, optionally overriding fields."""
    params = {k: v.copy() for k, v in layer.params().items()}
    params.update(changes)
    return replace(layer, **params)
