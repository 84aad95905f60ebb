"""Classical compositing baselines and the evaluation harness.

Implements color transfer (mean/std matching in a log-opponent space),
Laplacian pyramid blending with the 5-tap binomial kernel, and Poisson
blending (source gradients, target Dirichlet boundary) solved by conjugate
gradient on the 5-point stencil. The evaluation harness scores any method's
composite against the target photo outside the mask (PSNR) and along the
mask boundary (seam gradient energy).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import ShapeMismatchError
from .metrics import psnr, seam_energy

# 5-tap binomial kernel; pyramids and goldens depend on this exact choice.
BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _blur1d(img: np.ndarray, axis: int, kernel: np.ndarray) -> np.ndarray:
    r = len(kernel) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    padded = np.pad(img, pad, mode="reflect")
    out = np.zeros_like(img, dtype=np.float64)
    for i, kv in enumerate(kernel):
        sl = [slice(None)] * img.ndim
        sl[axis] = slice(i, i + img.shape[axis])
        out += kv * padded[tuple(sl)]
    return out


def blur(img: np.ndarray) -> np.ndarray:
    return _blur1d(_blur1d(img.astype(np.float64), 0, BINOMIAL5), 1, BINOMIAL5)


def pyr_down(img: np.ndarray) -> np.ndarray:
    return blur(img)[::2, ::2]


def pyr_up(img: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    up = np.zeros(shape + img.shape[2:], dtype=np.float64)
    up[::2, ::2] = img
    # 4x compensates the zeros inserted along each axis
    return _blur1d(_blur1d(up, 0, BINOMIAL5 * 2.0), 1, BINOMIAL5 * 2.0)


def gaussian_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [img.astype(np.float64)]
    for _ in range(levels):
        pyr.append(pyr_down(pyr[-1]))
    return pyr


def laplacian_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    gauss = gaussian_pyramid(img, levels)
    laps = [gauss[i] - pyr_up(gauss[i + 1], gauss[i].shape[:2]) for i in range(levels)]
    laps.append(gauss[levels])
    return laps


def reconstruct_laplacian(laps: list[np.ndarray]) -> np.ndarray:
    img = laps[-1]
    for lap in reversed(laps[:-1]):
        img = lap + pyr_up(img, lap.shape[:2])
    return img


def _check_levels(shape: tuple[int, int], levels: int) -> None:
    if levels < 1:
        raise ValueError("levels must be >= 1")
    div = 2 ** levels
    if shape[0] % div or shape[1] % div:
        raise ShapeMismatchError(f"image dims {shape} not divisible by 2^{levels}")


def laplacian_blend(source: np.ndarray, target: np.ndarray, mask: np.ndarray,
                    levels: int = 3) -> np.ndarray:
    """Per-band blend: source inside the (pyramid-smoothed) mask, target outside.

    Computed as target + reconstruct(mask-weighted band differences), which is
    algebraically the usual per-band blend but leaves pixels beyond the blur
    support bit-equal to the target.
    """
    if source.shape != target.shape or mask.shape != source.shape[:2]:
        raise ShapeMismatchError("source/target/mask dims disagree")
    _check_levels(mask.shape, levels)
    src_l = laplacian_pyramid(source, levels)
    tgt_l = laplacian_pyramid(target, levels)
    mask_g = gaussian_pyramid(mask.astype(np.float64), levels)
    deltas = []
    for ls, lt, m in zip(src_l, tgt_l, mask_g):
        mm = m[..., None] if ls.ndim == 3 else m
        deltas.append(mm * (ls - lt))
    return (target + reconstruct_laplacian(deltas)).astype(source.dtype)


# -- color transfer --------------------------------------------------------------

# Log-opponent (lightness / yellow-blue / red-green) transform constants.
RGB_TO_CONE = np.array([
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
])
CONE_TO_RGB = np.linalg.inv(RGB_TO_CONE)
LOG_TO_OPP = np.diag([1 / np.sqrt(3.0), 1 / np.sqrt(6.0), 1 / np.sqrt(2.0)]) @ np.array([
    [1.0, 1.0, 1.0],
    [1.0, 1.0, -2.0],
    [1.0, -1.0, 0.0],
])
OPP_TO_LOG = np.linalg.inv(LOG_TO_OPP)

_LOG_FLOOR = 1e-4


def _to_opponent(img: np.ndarray) -> np.ndarray:
    rgb01 = np.clip((img.astype(np.float64) + 1.0) / 2.0, _LOG_FLOOR, 1.0)
    cone = rgb01 @ RGB_TO_CONE.T
    return np.log10(np.maximum(cone, _LOG_FLOOR * 1e-2)) @ LOG_TO_OPP.T


def _from_opponent(opp: np.ndarray) -> np.ndarray:
    cone = 10.0 ** (opp @ OPP_TO_LOG.T)
    rgb01 = cone @ CONE_TO_RGB.T
    return np.clip(rgb01, 0.0, 1.0) * 2.0 - 1.0


def color_transfer(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Match per-channel mean/std of the source to the target in opponent space.

    Channels with (near-)zero source spread keep scale 1 and only shift.
    """
    if source.shape != target.shape:
        raise ShapeMismatchError(f"source {source.shape} vs target {target.shape}")
    src = _to_opponent(source).reshape(-1, 3)
    tgt = _to_opponent(target).reshape(-1, 3)
    mu_s, mu_t = src.mean(axis=0), tgt.mean(axis=0)
    sd_s, sd_t = src.std(axis=0), tgt.std(axis=0)
    scale = np.where(sd_s > 1e-8, sd_t / np.maximum(sd_s, 1e-12), 1.0)
    out = (src - mu_s) * scale + mu_t
    return _from_opponent(out.reshape(source.shape)).astype(source.dtype)


# -- Poisson blending -------------------------------------------------------------


def _interior(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask) != 0
    inner = m.copy()
    inner[0, :] = inner[-1, :] = inner[:, 0] = inner[:, -1] = False
    return inner


_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def poisson_system(mask: np.ndarray):
    """Interior pixel coordinates and, per pixel, its 4-neighbor interior indices
    (-1 where the neighbor is a boundary pixel)."""
    inner = _interior(mask)
    ys, xs = np.nonzero(inner)
    index = -np.ones(mask.shape, dtype=np.int64)
    index[ys, xs] = np.arange(ys.size)
    nbr = np.stack([index[ys + dy, xs + dx] for dy, dx in _OFFSETS], axis=1)
    return inner, ys, xs, nbr


def _conjugate_gradient(matvec, b: np.ndarray, x0: np.ndarray,
                        tol: float = 1e-12, max_iter: int | None = None) -> np.ndarray:
    x = x0.astype(np.float64).copy()
    r = b - matvec(x)
    p = r.copy()
    rs = float(r @ r)
    bnorm = float(b @ b) or 1.0
    limit = max_iter if max_iter is not None else 8 * b.size
    for _ in range(limit):
        if rs <= tol * bnorm:
            break
        ap = matvec(p)
        alpha = rs / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def poisson_blend(source: np.ndarray, target: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Solve the discrete Poisson equation on the mask interior with source
    gradients as guidance and target values as the Dirichlet boundary."""
    if source.shape != target.shape or mask.shape != source.shape[:2]:
        raise ShapeMismatchError("source/target/mask dims disagree")
    inner, ys, xs, nbr = poisson_system(mask)
    out = target.astype(np.float64).copy()
    if ys.size == 0:
        return out.astype(target.dtype)
    src = source.astype(np.float64)
    for ch in range(source.shape[2]):
        s = src[:, :, ch]
        t = out[:, :, ch]
        # divergence of the source gradient field at interior pixels
        b = 4.0 * s[ys, xs]
        for k, (dy, dx) in enumerate(_OFFSETS):
            b -= s[ys + dy, xs + dx]
            boundary = nbr[:, k] < 0
            b[boundary] += t[ys[boundary] + dy, xs[boundary] + dx]
        solution = _conjugate_gradient(lambda v: backend.masked_laplacian(v, nbr), b, t[ys, xs])
        out[ys, xs, ch] = solution
    return out.astype(target.dtype)


def paste(source: np.ndarray, target: np.ndarray, mask: np.ndarray) -> np.ndarray:
    m = (np.asarray(mask) != 0)[..., None]
    return np.where(m, source, target)


def color_transfer_composite(source: np.ndarray, target: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return paste(color_transfer(source, target), target, mask)


BLEND_METHODS = {
    "paste": paste,
    "color": color_transfer_composite,
    "laplacian": laplacian_blend,
    "poisson": poisson_blend,
}


def composite(source: np.ndarray, target: np.ndarray, mask: np.ndarray, method: str) -> np.ndarray:
    if method not in BLEND_METHODS:
        raise ValueError(f"unknown compositing method {method!r} (have {sorted(BLEND_METHODS)})")
    return BLEND_METHODS[method](source, target, mask)


# -- evaluation harness ------------------------------------------------------------


@dataclass
class CompositeFixture:
    name: str
    source: np.ndarray                 # edited render to insert
    target: np.ndarray                 # the photo
    mask: np.ndarray                   # pixel-space edit region
    outputs: dict[str, np.ndarray] = field(default_factory=dict)  # precomputed methods ("ours")


def evaluate(fixtures: list[CompositeFixture], methods: list[str]) -> list[dict]:
    """Score each method on each fixture: outside-mask PSNR vs the target,
    seam gradient energy along the mask boundary, and wall time."""
    rows = []
    for fx in fixtures:
        for method in methods:
            start = time.perf_counter()
            if method in fx.outputs:
                out = fx.outputs[method]
            else:
                out = composite(fx.source, fx.target, fx.mask, method)
            wall_ms = (time.perf_counter() - start) * 1e3
            rows.append({
                "method": method,
                "fixture": fx.name,
                "psnr_out": psnr(out, fx.target, fx.mask),
                "seam_energy": seam_energy(out, fx.mask),
                "wall_ms": wall_ms,
            })
    return rows


def write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["method", "fixture", "psnr_out", "seam_energy", "wall_ms"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
