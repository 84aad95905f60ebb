"""Numba-compiled kernel implementations (direct convolution loops).

Same contracts as :mod:`latentpaint.kernels_numpy`. All sums run in float64
accumulators over float64-cast operands, serially, so results are
deterministic and agree with the numpy backend to ~1e-13 relative.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _conv2d_kernel(x, wt, b, stride, y):
    bb, h, w, ci = x.shape
    co, kh, kw, _ = wt.shape
    ph, pw = kh // 2, kw // 2
    ho, wo = y.shape[1], y.shape[2]
    for bi in range(bb):
        for oy in range(ho):
            for ox in range(wo):
                for oc in range(co):
                    acc = np.float64(b[oc])
                    for ky in range(kh):
                        iy = oy * stride + ky - ph
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            ix = ox * stride + kx - pw
                            if ix < 0 or ix >= w:
                                continue
                            for ic in range(ci):
                                acc += np.float64(x[bi, iy, ix, ic]) * np.float64(wt[oc, ky, kx, ic])
                    y[bi, oy, ox, oc] = acc


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    kh, kw, ci, co = w.shape
    bb, h, ww, _ = x.shape
    ho = (h + 2 * (kh // 2) - kh) // stride + 1
    wo = (ww + 2 * (kw // 2) - kw) // stride + 1
    y = np.empty((bb, ho, wo, co), dtype=x.dtype)
    wt = np.ascontiguousarray(w.transpose(3, 0, 1, 2))
    _conv2d_kernel(x, wt, b, stride, y)
    return y


@njit(cache=True)
def _grad_input_kernel(gy, w, stride, gx):
    bb, ho, wo, co = gy.shape
    kh, kw, ci, _ = w.shape
    ph, pw = kh // 2, kw // 2
    h, ww = gx.shape[1], gx.shape[2]
    for bi in range(bb):
        for iy in range(h):
            for ix in range(ww):
                for ic in range(ci):
                    acc = 0.0
                    for ky in range(kh):
                        t = iy + ph - ky
                        if t < 0 or t % stride != 0:
                            continue
                        oy = t // stride
                        if oy >= ho:
                            continue
                        for kx in range(kw):
                            s = ix + pw - kx
                            if s < 0 or s % stride != 0:
                                continue
                            ox = s // stride
                            if ox >= wo:
                                continue
                            for oc in range(co):
                                acc += np.float64(gy[bi, oy, ox, oc]) * np.float64(w[ky, kx, ic, oc])
                    gx[bi, iy, ix, ic] = acc


def conv2d_grad_input(gy: np.ndarray, w: np.ndarray, in_h: int, in_w: int, stride: int = 1) -> np.ndarray:
    bb = gy.shape[0]
    ci = w.shape[2]
    gx = np.empty((bb, in_h, in_w, ci), dtype=gy.dtype)
    _grad_input_kernel(gy, np.ascontiguousarray(w), stride, gx)
    return gx


@njit(cache=True)
def _grad_weights_kernel(x, gy, stride, gw, gb):
    bb, h, w, ci = x.shape
    _, ho, wo, co = gy.shape
    kh, kw = gw.shape[0], gw.shape[1]
    ph, pw = kh // 2, kw // 2
    for bi in range(bb):
        for oy in range(ho):
            for ox in range(wo):
                for oc in range(co):
                    gb[oc] += np.float64(gy[bi, oy, ox, oc])
                for ky in range(kh):
                    iy = oy * stride + ky - ph
                    if iy < 0 or iy >= h:
                        continue
                    for kx in range(kw):
                        ix = ox * stride + kx - pw
                        if ix < 0 or ix >= w:
                            continue
                        for ic in range(ci):
                            xv = np.float64(x[bi, iy, ix, ic])
                            for oc in range(co):
                                gw[ky, kx, ic, oc] += xv * np.float64(gy[bi, oy, ox, oc])


def conv2d_grad_weights(x: np.ndarray, gy: np.ndarray, kh: int, kw: int, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    ci = x.shape[3]
    co = gy.shape[3]
    gw = np.zeros((kh, kw, ci, co), dtype=np.float64)
    gb = np.zeros(co, dtype=np.float64)
    _grad_weights_kernel(x, gy, stride, gw, gb)
    return gw.astype(x.dtype), gb.astype(x.dtype)


@njit(cache=True)
def _masked_laplacian_kernel(v, nbr_index, out):
    n = v.shape[0]
    for i in range(n):
        acc = 4.0 * np.float64(v[i])
        for k in range(4):
            j = nbr_index[i, k]
            if j >= 0:
                acc -= np.float64(v[j])
        out[i] = acc


def masked_laplacian(v: np.ndarray, nbr_index: np.ndarray) -> np.ndarray:
    out = np.empty(v.shape[0], dtype=np.float64)
    _masked_laplacian_kernel(v.astype(np.float64), nbr_index, out)
    return out
