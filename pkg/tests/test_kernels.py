import os
import subprocess
import sys

import numpy as np
import pytest

from relprune import _kernels as K
from oracles import naive_conv2d

BACKENDS = [K.NUMPY_KERNELS, K.NUMBA_KERNELS]
IDS = [b.name for b in BACKENDS]


@pytest.mark.parametrize("kern", BACKENDS, ids=IDS)
@pytest.mark.parametrize("case", range(50))
def test_conv_matches_naive_loop(kern, case):
    rng = np.random.default_rng(case)
    c, f = rng.integers(1, 4), rng.integers(1, 5)
    k = int(rng.choice([1, 2, 3]))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, k))
    h, w = rng.integers(k, 8), rng.integers(k, 8)
    x = rng.normal(size=(2, c, h, w))
    wt = rng.normal(size=(f, c, k, k))
    b = rng.normal(size=f)
    got = kern.conv2d_forward(x, wt, b, stride, pad)
    for n in range(2):
        np.testing.assert_allclose(got[n], naive_conv2d(x[n], wt, b, stride, pad), rtol=0, atol=1e-12)


def test_spec_example_random_3x3_on_4x4():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 1, 4, 4))
    w = rng.normal(size=(2, 1, 3, 3))
    b = rng.normal(size=2)
    np.testing.assert_allclose(K.conv2d_forward(x, w, b, 1, 0)[0], naive_conv2d(x[0], w, b), rtol=0, atol=1e-12)


@pytest.mark.parametrize("case", range(10))
def test_backends_agree_on_all_kernels(case):
    rng = np.random.default_rng(100 + case)
    x = rng.normal(size=(3, 2, 7, 6))
    w = rng.normal(size=(4, 2, 3, 3))
    b = rng.normal(size=4)
    stride, pad = 1 + case % 2, case % 2
    a = K.NUMPY_KERNELS.conv2d_forward(x, w, b, stride, pad)
    np.testing.assert_allclose(K.NUMBA_KERNELS.conv2d_forward(x, w, b, stride, pad), a, atol=1e-12)
    g = rng.normal(size=a.shape)
    np.testing.assert_allclose(
        K.NUMBA_KERNELS.conv2d_backward_input(g, w, 7, 6, stride, pad),
        K.NUMPY_KERNELS.conv2d_backward_input(g, w, 7, 6, stride, pad),
        atol=1e-12,
    )
    np.testing.assert_allclose(
        K.NUMBA_KERNELS.conv2d_backward_weight(x, g, 3, stride, pad),
        K.NUMPY_KERNELS.conv2d_backward_weight(x, g, 3, stride, pad),
        atol=1e-11,
    )
    out_np, arg_np = K.NUMPY_KERNELS.maxpool_forward(x, 2, 2)
    out_nb, arg_nb = K.NUMBA_KERNELS.maxpool_forward(x, 2, 2)
    np.testing.assert_array_equal(out_np, out_nb)
    np.testing.assert_array_equal(arg_np, arg_nb)
    gp = rng.normal(size=out_np.shape)
    np.testing.assert_array_equal(
        K.NUMPY_KERNELS.maxpool_backward(gp, arg_np, 7, 6, 2, 2), K.NUMBA_KERNELS.maxpool_backward(gp, arg_nb, 7, 6, 2, 2)
    )


@pytest.mark.parametrize("kern", BACKENDS, ids=IDS)
def test_backward_input_is_adjoint_of_forward(kern):
    # <conv(x), g> == <x, conv^T(g)> for the bias-free conv
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    y = kern.conv2d_forward(x, w, np.zeros(4), 2, 1)
    g = rng.normal(size=y.shape)
    lhs = np.sum(y * g)
    rhs = np.sum(x * kern.conv2d_backward_input(g, w, 6, 5, 2, 1))
    assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("kern", BACKENDS, ids=IDS)
def test_maxpool_ties_pick_first_in_window(kern):
    x = np.zeros((1, 1, 2, 2))
    out, arg = kern.maxpool_forward(x, 2, 2)
    assert out[0, 0, 0, 0] == 0.0 and arg[0, 0, 0, 0] == 0


def test_env_flag_selects_numpy_backend():
    code = "import relprune._kernels as K; print(K.ACTIVE.name)"
    env = dict(os.environ, RELPRUNE_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["RELPRUNE_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == ("numba" if K.HAVE_NUMBA else "numpy")
