"""Pure-numpy kernel implementations.

Layouts: activations are NHWC ``(batch, height, width, channels)``, weights
``(kh, kw, in_channels, out_channels)``. Convolutions use "same" padding
``k // 2``; output size is ``(n + 2*(k//2) - k) // stride + 1``.

Each convolution is computed as one BLAS matmul per kernel offset on a
shifted view of the (float64-upcast) input, accumulating in float64. This
avoids im2col's k^2 memory blowup and matches the numba backend's float64
accumulators, so the two backends agree to ~1e-13 relative.
"""

from __future__ import annotations

import numpy as np


def _out_size(n: int, k: int, stride: int) -> int:
    return (n + 2 * (k // 2) - k) // stride + 1


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1) -> np.ndarray:
    kh, kw, ci, co = w.shape
    bb, h, ww, _ = x.shape
    ph, pw = kh // 2, kw // 2
    ho, wo = _out_size(h, kh, stride), _out_size(ww, kw, stride)
    xp = np.pad(x.astype(np.float64), ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    w64 = w.astype(np.float64)
    y = np.broadcast_to(b.astype(np.float64), (bb, ho, wo, co)).copy()
    for ky in range(kh):
        for kx in range(kw):
            view = xp[:, ky : ky + (ho - 1) * stride + 1 : stride,
                      kx : kx + (wo - 1) * stride + 1 : stride, :]
            y += view @ w64[ky, kx]
    return y.astype(x.dtype)


def conv2d_grad_input(gy: np.ndarray, w: np.ndarray, in_h: int, in_w: int, stride: int = 1) -> np.ndarray:
    kh, kw, ci, co = w.shape
    bb, ho, wo, _ = gy.shape
    ph, pw = kh // 2, kw // 2
    gy64 = gy.astype(np.float64)
    w64 = w.astype(np.float64)
    gxp = np.zeros((bb, in_h + 2 * ph, in_w + 2 * pw, ci), dtype=np.float64)
    for ky in range(kh):
        for kx in range(kw):
            gxp[:, ky : ky + (ho - 1) * stride + 1 : stride,
                kx : kx + (wo - 1) * stride + 1 : stride, :] += gy64 @ w64[ky, kx].T
    return gxp[:, ph : ph + in_h, pw : pw + in_w, :].astype(gy.dtype)


def conv2d_grad_weights(x: np.ndarray, gy: np.ndarray, kh: int, kw: int, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    ci = x.shape[3]
    bb, ho, wo, co = gy.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.astype(np.float64), ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    gy64 = gy.astype(np.float64)
    gw = np.empty((kh, kw, ci, co), dtype=np.float64)
    for ky in range(kh):
        for kx in range(kw):
            view = xp[:, ky : ky + (ho - 1) * stride + 1 : stride,
                      kx : kx + (wo - 1) * stride + 1 : stride, :]
            gw[ky, kx] = np.tensordot(view, gy64, axes=([0, 1, 2], [0, 1, 2]))
    gb = gy64.sum(axis=(0, 1, 2))
    return gw.astype(x.dtype), gb.astype(x.dtype)


def masked_laplacian(v: np.ndarray, nbr_index: np.ndarray) -> np.ndarray:
    """5-point operator on interior unknowns: ``4*v[i] - sum(v[neighbors in interior])``.

    ``nbr_index`` is ``(n, 4)`` with the flat interior index of each 4-neighbor,
    or -1 when that neighbor is a Dirichlet boundary pixel.
    """
    ve = np.concatenate([v.astype(np.float64), [0.0]])
    out = 4.0 * v.astype(np.float64)
    for k in range(4):
        out -= ve[nbr_index[:, k]]
    return out
