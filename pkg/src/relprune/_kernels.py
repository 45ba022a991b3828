"""Hot convolution / pooling kernels.

Two interchangeable implementations live here: numba ``@njit`` loops and a
pure-numpy path built from strided slices.  The active one is chosen once at
import time; set ``RELPRUNE_DISABLE_NUMBA=1`` (or run without numba
installed) to force the numpy path.  Both are always importable as
``NUMBA_KERNELS`` / ``NUMPY_KERNELS`` so they can be benchmarked and
cross-checked against each other.

All arrays are float64, NCHW, square kernels.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


# ---------------------------------------------------------------- numpy path


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def np_conv2d_forward(x, w, b, stride, padding):
    n, _, h, wd = x.shape
    f, _, k, _ = w.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(wd, k, stride, padding)
    xp = _pad(x, padding)
    out = np.zeros((n, f, ho, wo))
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            out += np.einsum("nchw,fc->nfhw", patch, w[:, :, i, j])
    out += b[None, :, None, None]
    return out


def np_conv2d_backward_input(gout, w, in_h, in_w, stride, padding):
    n, _, ho, wo = gout.shape
    _, c, k, _ = w.shape
    gxp = np.zeros((n, c, in_h + 2 * padding, in_w + 2 * padding))
    for i in range(k):
        for j in range(k):
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += np.einsum(
                "nfhw,fc->nchw", gout, w[:, :, i, j]
            )
    if padding:
        return gxp[:, :, padding:-padding, padding:-padding].copy()
    return gxp


def np_conv2d_backward_weight(x, gout, k, stride, padding):
    _, c, _, _ = x.shape
    _, f, ho, wo = gout.shape
    xp = _pad(x, padding)
    gw = np.empty((f, c, k, k))
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            gw[:, :, i, j] = np.einsum("nfhw,nchw->fc", gout, patch)
    return gw


def np_maxpool_forward(x, size, stride):
    n, c, h, w = x.shape
    ho = conv_output_size(h, size, stride, 0)
    wo = conv_output_size(w, size, stride, 0)
    out = np.full((n, c, ho, wo), -np.inf)
    arg = np.zeros((n, c, ho, wo), dtype=np.int64)
    # scan window offsets in row-major order; strict > keeps the first maximum
    for i in range(size):
        for j in range(size):
            patch = x[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            better = patch > out
            out = np.where(better, patch, out)
            arg = np.where(better, i * size + j, arg)
    return out, arg


def np_maxpool_backward(gout, arg, in_h, in_w, size, stride):
    n, c, ho, wo = gout.shape
    gx = np.zeros((n, c, in_h, in_w))
    for i in range(size):
        for j in range(size):
            sel = np.where(arg == i * size + j, gout, 0.0)
            gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += sel
    return gx


# ---------------------------------------------------------------- numba path


@njit(cache=True)
def nb_conv2d_forward(x, w, b, stride, padding):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.empty((n, f, ho, wo))
    for s in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ch in range(c):
                        for ki in range(k):
                            hi = i * stride + ki - padding
                            if hi < 0 or hi >= h:
                                continue
                            for kj in range(k):
                                wj = j * stride + kj - padding
                                if wj < 0 or wj >= wd:
                                    continue
                                acc += x[s, ch, hi, wj] * w[o, ch, ki, kj]
                    out[s, o, i, j] = acc + b[o]
    return out


@njit(cache=True)
def nb_conv2d_backward_input(gout, w, in_h, in_w, stride, padding):
    n, f, ho, wo = gout.shape
    _, c, k, _ = w.shape
    gx = np.zeros((n, c, in_h, in_w))
    for s in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    g = gout[s, o, i, j]
                    if g == 0.0:
                        continue
                    for ch in range(c):
                        for ki in range(k):
                            hi = i * stride + ki - padding
                            if hi < 0 or hi >= in_h:
                                continue
                            for kj in range(k):
                                wj = j * stride + kj - padding
                                if wj < 0 or wj >= in_w:
                                    continue
                                gx[s, ch, hi, wj] += g * w[o, ch, ki, kj]
    return gx


@njit(cache=True)
def nb_conv2d_backward_weight(x, gout, k, stride, padding):
    n, c, h, wd = x.shape
    _, f, ho, wo = gout.shape
    gw = np.zeros((f, c, k, k))
    for s in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    g = gout[s, o, i, j]
                    if g == 0.0:
                        continue
                    for ch in range(c):
                        for ki in range(k):
                            hi = i * stride + ki - padding
                            if hi < 0 or hi >= h:
                                continue
                            for kj in range(k):
                                wj = j * stride + kj - padding
                                if wj < 0 or wj >= wd:
                                    continue
                                gw[o, ch, ki, kj] += g * x[s, ch, hi, wj]
    return gw


@njit(cache=True)
def nb_maxpool_forward(x, size, stride):
    n, c, h, w = x.shape
    ho = (h - size) // stride + 1
    wo = (w - size) // stride + 1
    out = np.empty((n, c, ho, wo))
    arg = np.empty((n, c, ho, wo), dtype=np.int64)
    for s in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = -np.inf
                    besti = 0
                    for ki in range(size):
                        for kj in range(size):
                            v = x[s, ch, i * stride + ki, j * stride + kj]
                            if v > best:
                                best = v
                                besti = ki * size + kj
                    out[s, ch, i, j] = best
                    arg[s, ch, i, j] = besti
    return out, arg


@njit(cache=True)
def nb_maxpool_backward(gout, arg, in_h, in_w, size, stride):
    n, c, ho, wo = gout.shape
    gx = np.zeros((n, c, in_h, in_w))
    for s in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    a = arg[s, ch, i, j]
                    gx[s, ch, i * stride + a // size, j * stride + a % size] += gout[s, ch, i, j]
    return gx


NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    conv2d_forward=np_conv2d_forward,
    conv2d_backward_input=np_conv2d_backward_input,
    conv2d_backward_weight=np_conv2d_backward_weight,
    maxpool_forward=np_maxpool_forward,
    maxpool_backward=np_maxpool_backward,
)

NUMBA_KERNELS = SimpleNamespace(
    name="numba" if HAVE_NUMBA else "numba-unavailable",
    conv2d_forward=nb_conv2d_forward,
    conv2d_backward_input=nb_conv2d_backward_input,
    conv2d_backward_weight=nb_conv2d_backward_weight,
    maxpool_forward=nb_maxpool_forward,
    maxpool_backward=nb_maxpool_backward,
)


def _numba_disabled() -> bool:
    return os.environ.get("RELPRUNE_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and not _numba_disabled()
ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS


def conv2d_forward(x, w, b, stride, padding):
    return ACTIVE.conv2d_forward(x, w, b, stride, padding)


def conv2d_backward_input(gout, w, in_h, in_w, stride, padding):
    return ACTIVE.conv2d_backward_input(gout, w, in_h, in_w, stride, padding)


def conv2d_backward_weight(x, gout, k, stride, padding):
    return ACTIVE.conv2d_backward_weight(x, gout, k, stride, padding)


def maxpool_forward(x, size, stride):
    return ACTIVE.maxpool_forward(x, size, stride)


def maxpool_backward(gout, arg, in_h, in_w, size, stride):
    return ACTIVE.maxpool_backward(gout, arg, in_h, in_w, size, stride)
