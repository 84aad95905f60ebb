"""PNG I/O. Pixels are float32 in [-1, 1] everywhere inside the package;
conversion to and from 8-bit happens only here, with clamping documented at
this boundary: values outside [-1, 1] are clipped before quantization.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image as PILImage


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    clipped = np.clip(pixels.astype(np.float64), -1.0, 1.0)
    return np.round((clipped + 1.0) * 127.5).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.float32) / 127.5) - 1.0


def save_png(path: str | Path, pixels: np.ndarray) -> None:
    PILImage.fromarray(to_uint8(pixels)).save(path, format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        raw = np.asarray(im.convert("RGB"))
    return from_uint8(raw)


def encode_png_bytes(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(to_uint8(pixels)).save(buf, format="PNG")
    return buf.getvalue()


def decode_png_bytes(data: bytes) -> np.ndarray:
    with PILImage.open(io.BytesIO(data)) as im:
        raw = np.asarray(im.convert("RGB"))
    return from_uint8(raw)
