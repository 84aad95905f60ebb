"""The numba kernels and the numpy fallback must agree bit-for-bit on
float32 data (both accumulate in float64) and to ~1e-12 on float64."""

import os
import subprocess
import sys

import numpy as np
import pytest

from latentpaint import backend, kernels_numba, kernels_numpy


CASES = [(k, s) for k in (1, 3, 5) for s in (1, 2)]


@pytest.mark.parametrize("k,stride", CASES)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_conv_kernels_agree(rng, k, stride, dtype):
    x = rng.standard_normal((2, 11, 9, 6)).astype(dtype)
    w = rng.standard_normal((k, k, 6, 5)).astype(dtype)
    b = rng.standard_normal(5).astype(dtype)
    y_np = kernels_numpy.conv2d(x, w, b, stride)
    y_nb = kernels_numba.conv2d(x, w, b, stride)
    gy = rng.standard_normal(y_np.shape).astype(dtype)
    gi_np = kernels_numpy.conv2d_grad_input(gy, w, 11, 9, stride)
    gi_nb = kernels_numba.conv2d_grad_input(gy, w, 11, 9, stride)
    gw_np, gb_np = kernels_numpy.conv2d_grad_weights(x, gy, k, k, stride)
    gw_nb, gb_nb = kernels_numba.conv2d_grad_weights(x, gy, k, k, stride)
    if dtype is np.float32:
        assert np.array_equal(y_np, y_nb)
        assert np.array_equal(gi_np, gi_nb)
        assert np.array_equal(gw_np, gw_nb)
        assert np.array_equal(gb_np, gb_nb)
    else:
        for a, b_ in ((y_np, y_nb), (gi_np, gi_nb), (gw_np, gw_nb), (gb_np, gb_nb)):
            assert np.allclose(a, b_, rtol=1e-12, atol=1e-12)


def test_masked_laplacian_agree(rng):
    n = 40
    v = rng.standard_normal(n)
    nbr = rng.integers(-1, n, size=(n, 4)).astype(np.int64)
    out_np = kernels_numpy.masked_laplacian(v, nbr)
    out_nb = kernels_numba.masked_laplacian(v, nbr)
    assert np.allclose(out_np, out_nb, rtol=1e-13, atol=1e-13)


def test_set_backend_switches(rng):
    previous = backend.active_backend()
    try:
        x = rng.standard_normal((1, 5, 5, 2)).astype(np.float32)
        w = rng.standard_normal((3, 3, 2, 2)).astype(np.float32)
        b = np.zeros(2, dtype=np.float32)
        backend.set_backend("numpy")
        y1 = backend.conv2d(x, w, b)
        backend.set_backend("numba")
        y2 = backend.conv2d(x, w, b)
        assert np.array_equal(y1, y2)
        with pytest.raises(ValueError):
            backend.set_backend("tensorflow")
    finally:
        backend.set_backend(previous)


def test_env_flag_selects_backend():
    code = "import latentpaint.backend as b; print(b.active_backend())"
    for choice in ("numpy", "numba"):
        env = dict(os.environ, LATENTPAINT_BACKEND=choice)
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True, check=True)
        assert out.stdout.strip() == choice
    env = dict(os.environ, LATENTPAINT_BACKEND="fortran")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert out.returncode != 0
