"""Latent-space edit algebra.

A pixel stroke maps to a latent-grid region; a class's channel indicator
crossed with that region forms the channel mask; applying an edit blends
``(1 - alpha) * z + alpha * (s * p)`` where ``p`` is the class activation
vector (or a reference style vector for restyle). Edits live on a replayable
stack; removing an edit means replaying the survivors from the base code.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .dissection import UnitCatalog, reference_style_vector
from .errors import EditError, ShapeMismatchError
from .generator import LatentCode, LayeredGenerator

MODES = ("draw", "erase", "restyle")

STRENGTH_PRESETS = {"low": 0.5, "med": 1.0, "high": 2.0}


def strength_preset(level: str, mode: str) -> float:
    """Preset strength values; erase is always 0 regardless of level."""
    if mode not in MODES:
        raise EditError(f"unknown mode {mode!r}")
    if level not in STRENGTH_PRESETS:
        raise EditError(f"unknown strength level {level!r} (expected low/med/high)")
    if mode == "erase":
        return 0.0
    return STRENGTH_PRESETS[level]


# -- masks and wire formats -----------------------------------------------------


def encode_mask_rle(mask: np.ndarray) -> dict:
    """Row-wise run-length encoding of a 0/1 mask: per row, [start, length, ...]."""
    m = np.asarray(mask)
    rows = []
    for row in m:
        runs: list[int] = []
        on = np.flatnonzero(row)
        if on.size:
            breaks = np.flatnonzero(np.diff(on) > 1)
            starts = np.concatenate([[on[0]], on[breaks + 1]])
            ends = np.concatenate([on[breaks], [on[-1]]])
            for s, e in zip(starts, ends):
                runs.extend([int(s), int(e - s + 1)])
        rows.append(runs)
    return {"height": int(m.shape[0]), "width": int(m.shape[1]), "rows": rows}


def decode_mask_rle(data: dict) -> np.ndarray:
    h, w = int(data["height"]), int(data["width"])
    rows = data["rows"]
    if len(rows) != h:
        raise EditError(f"RLE mask has {len(rows)} rows, header says {h}")
    mask = np.zeros((h, w), dtype=np.uint8)
    for y, runs in enumerate(rows):
        if len(runs) % 2:
            raise EditError(f"RLE row {y} has an odd number of entries")
        for i in range(0, len(runs), 2):
            start, length = int(runs[i]), int(runs[i + 1])
            if start < 0 or length < 1 or start + length > w:
                raise EditError(f"RLE run ({start},{length}) outside row of width {w}")
            mask[y, start : start + length] = 1
    return mask


def stroke_to_region(stroke: np.ndarray, grid_dims: tuple[int, int],
                     coverage_fraction: float = 0.0) -> np.ndarray:
    """Reduce a pixel-resolution stroke mask to the latent grid.

    A cell turns on when the stroke covers a positive fraction of its pixel
    block of at least ``coverage_fraction`` (default: any overlap).
    """
    stroke = np.asarray(stroke)
    gh, gw = grid_dims
    h, w = stroke.shape
    if h % gh or w % gw:
        raise ShapeMismatchError(f"stroke dims {(h, w)} not divisible by grid {(gh, gw)}")
    frac = stroke.reshape(gh, h // gh, gw, w // gw).astype(np.float64).mean(axis=(1, 3))
    return ((frac > 0) & (frac >= coverage_fraction)).astype(np.uint8)


# -- edit operations --------------------------------------------------------------


@dataclass(frozen=True)
class EditOp:
    op_id: int
    mode: str
    class_id: str
    region: np.ndarray               # latent-grid 0/1
    strength: float
    style_source: str | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise EditError(f"unknown mode {self.mode!r}")
        region = np.asarray(self.region)
        if not np.isin(region, (0, 1)).all():
            raise EditError("region mask must be binary")
        if self.strength < 0:
            raise EditError(f"strength must be >= 0, got {self.strength}")
        if self.mode == "erase" and self.strength != 0:
            raise EditError("erase requires strength 0")
        if self.mode == "restyle" and not self.style_source:
            raise EditError("restyle requires a style_source")

    def to_json(self) -> dict:
        return {
            "id": self.op_id,
            "mode": self.mode,
            "class": self.class_id,
            "region": encode_mask_rle(self.region),
            "strength": self.strength,
            "style_source": self.style_source,
        }

    @classmethod
    def from_json(cls, data: dict) -> "EditOp":
        op = cls(int(data["id"]), str(data["mode"]), str(data["class"]),
                 decode_mask_rle(data["region"]), float(data["strength"]),
                 data.get("style_source") or None)
        op.validate()
        return op


def channel_mask(catalog: UnitCatalog, class_id: str, region: np.ndarray) -> np.ndarray:
    """Broadcasted outer product of the class channel indicator with the region."""
    units = catalog.units(class_id)
    if not units.channels.any():
        raise EditError(f"class {class_id!r} has no dissected units")
    region = np.asarray(region)
    if region.shape != catalog.grid:
        raise ShapeMismatchError(f"region {region.shape} does not match latent grid {catalog.grid}")
    return (region[:, :, None] * units.channels[None, None, :]).astype(np.float32)


def _replacement_vector(op: EditOp, catalog: UnitCatalog,
                        styles: dict[str, np.ndarray] | None) -> np.ndarray:
    if op.mode == "erase":
        return np.zeros(catalog.n_channels, dtype=np.float32)
    if op.mode == "restyle":
        if not styles or op.style_source not in styles:
            raise EditError(f"unknown style source {op.style_source!r}")
        style = styles[op.style_source]
        if isinstance(style, LatentCode) or hasattr(style, "values"):
            return reference_style_vector(style, catalog, op.class_id)
        return np.asarray(style, dtype=np.float32)
    return catalog.units(op.class_id).activation


def apply_edit(z: LatentCode | np.ndarray, op: EditOp, catalog: UnitCatalog,
               styles: dict[str, np.ndarray] | None = None) -> LatentCode:
    """Blend the replacement content into z on the edit's channel mask."""
    op.validate()
    values = (z.values if isinstance(z, LatentCode) else np.asarray(z)).astype(np.float32)
    if values.shape[-1] != catalog.n_channels or values.shape[:2] != catalog.grid:
        raise ShapeMismatchError(
            f"latent {values.shape} does not match catalog grid {catalog.grid} x {catalog.n_channels}")
    alpha = channel_mask(catalog, op.class_id, op.region)
    p = _replacement_vector(op, catalog, styles)
    target = (op.strength * p)[None, None, :].astype(np.float32)
    out = (1.0 - alpha) * values + alpha * target
    return LatentCode(out.astype(np.float32), boundary=0)


# -- edit stack --------------------------------------------------------------------


@dataclass
class EditStack:
    base: LatentCode
    ops: list[EditOp] = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False)

    def next_op_id(self) -> int:
        return max((op.op_id for op in self.ops), default=0) + 1

    def add(self, op: EditOp) -> None:
        op.validate()
        if self.ops and op.op_id <= self.ops[-1].op_id:
            raise EditError(f"edit ids must increase; {op.op_id} after {self.ops[-1].op_id}")
        self.ops.append(op)

    def remove(self, op_id: int) -> EditOp:
        for i, op in enumerate(self.ops):
            if op.op_id == op_id:
                return self.ops.pop(i)
        raise EditError(f"no edit with id {op_id}")

    def digest(self, catalog: UnitCatalog) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.base.values).tobytes())
        h.update(json.dumps([op.to_json() for op in self.ops], sort_keys=True).encode())
        h.update(catalog.config_digest.encode())
        h.update(catalog.checkpoint_id.encode())
        return h.hexdigest()[:16]


def replay(stack: EditStack, catalog: UnitCatalog,
           styles: dict[str, np.ndarray] | None = None) -> LatentCode:
    """Fold the surviving ops over the base code, in order.

    All ops are validated (including class and style lookups) before any is
    applied, so an invalid op leaves the stack's cache untouched.
    """
    key = stack.digest(catalog)
    if key in stack._cache:
        return stack._cache[key].copy()
    for op in stack.ops:
        op.validate()
        channel_mask(catalog, op.class_id, op.region)
        _replacement_vector(op, catalog, styles)
    z = stack.base.copy()
    for op in stack.ops:
        z = apply_edit(z, op, catalog, styles)
    stack._cache.clear()
    stack._cache[key] = z.copy()
    return z


def combined_region(ops: list[EditOp], grid: tuple[int, int]) -> np.ndarray:
    region = np.zeros(grid, dtype=np.uint8)
    for op in ops:
        region |= np.asarray(op.region, dtype=np.uint8)
    return region


def region_pixel_footprint(region: np.ndarray, gen: LayeredGenerator, dilate_px: int = 0) -> np.ndarray:
    """Block-upsample edited cells to their pixel footprint, optionally dilated.

    Dilation grows a Chebyshev (8-neighbor) ball, matching how stacked 3x3
    convolutions spread influence, so ``dilate_px = receptive_halo_px(gen)``
    covers everything an edit can reach.
    """
    hz, wz, _ = gen.input_shape
    hp, wp, _ = gen.output_shape
    block_y, block_x = hp // hz, wp // wz
    mask = np.repeat(np.repeat(np.asarray(region, dtype=np.uint8), block_y, axis=0), block_x, axis=1)
    if dilate_px:
        padded = np.pad(mask, dilate_px)
        h, w = mask.shape
        grown = np.zeros_like(mask)
        for dy in range(2 * dilate_px + 1):
            for dx in range(2 * dilate_px + 1):
                grown |= padded[dy : dy + h, dx : dx + w]
        mask = grown
    return mask
