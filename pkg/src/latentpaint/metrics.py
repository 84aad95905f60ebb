"""Shared fidelity metrics: PSNR, Pearson correlation, seam energy."""

from __future__ import annotations

import numpy as np

PIXEL_PEAK = 2.0  # pixel values live in [-1, 1]


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """PSNR in dB over the full image, or over pixels where ``mask == 0``.

    Returns ``inf`` when the compared regions are identical (or empty).
    """
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    if mask is not None:
        keep = np.asarray(mask) == 0
        a = a[keep]
        b = b[keep]
    if a.size == 0:
        return float("inf")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(PIXEL_PEAK ** 2 / mse)


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation between flattened arrays."""
    a = a.astype(np.float64).ravel()
    b = b.astype(np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    if denom == 0.0:
        return 0.0
    return float((a * b).sum() / denom)


def seam_energy(image: np.ndarray, mask: np.ndarray) -> float:
    """Sum of squared color jumps across 4-neighbor pairs straddling the mask edge."""
    img = image.astype(np.float64)
    m = np.asarray(mask) != 0
    total = 0.0
    dv = img[1:, :] - img[:-1, :]
    cross = m[1:, :] != m[:-1, :]
    total += float((dv[cross] ** 2).sum())
    dh = img[:, 1:] - img[:, :-1]
    cross = m[:, 1:] != m[:, :-1]
    total += float((dh[cross] ** 2).sum())
    return total
