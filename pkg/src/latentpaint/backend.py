"""Kernel backend selection.

The hot inner loops (2-D convolution passes and the masked Poisson stencil)
exist twice: a numba-compiled version and a pure-numpy fallback. The active
backend is chosen by the ``LATENTPAINT_BACKEND`` environment variable
(``numba`` | ``numpy`` | ``auto``, default ``auto`` = numba when importable)
and can be switched at runtime with :func:`set_backend`.

Both backends accumulate convolution sums in float64 on top of float32
operands, so results agree to well below float32 resolution and goldens are
stable across backends.
"""

from __future__ import annotations

import os

from . import kernels_numpy

_numba_err: ImportError | None = None
try:
    from . import kernels_numba
except ImportError as exc:  # pragma: no cover - exercised only without numba
    kernels_numba = None  # type: ignore[assignment]
    _numba_err = exc

_active: str | None = None


def _resolve_default() -> str:
    choice = os.environ.get("LATENTPAINT_BACKEND", "auto").strip().lower()
    if choice in ("", "auto"):
        return "numba" if kernels_numba is not None else "numpy"
    if choice not in ("numba", "numpy"):
        raise ValueError(f"LATENTPAINT_BACKEND={choice!r} (expected numba, numpy, or auto)")
    if choice == "numba" and kernels_numba is None:
        raise ImportError(f"LATENTPAINT_BACKEND=numba but numba is unavailable: {_numba_err}")
    return choice


def active_backend() -> str:
    global _active
    if _active is None:
        _active = _resolve_default()
    return _active


def set_backend(name: str) -> None:
    """Force the kernel backend (``numba`` or ``numpy``); used by tests and benchmarks."""
    global _active
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and kernels_numba is None:
        raise ImportError(f"numba backend unavailable: {_numba_err}")
    _active = name


def _impl():
    return kernels_numba if active_backend() == "numba" else kernels_numpy


def conv2d(x, w, b, stride=1):
    return _impl().conv2d(x, w, b, stride)


def conv2d_grad_input(gy, w, in_h, in_w, stride=1):
    return _impl().conv2d_grad_input(gy, w, in_h, in_w, stride)


def conv2d_grad_weights(x, gy, kh, kw, stride=1):
    return _impl().conv2d_grad_weights(x, gy, kh, kw, stride)


def masked_laplacian(v, nbr_index):
    return _impl().masked_laplacian(v, nbr_index)
