"""Layered convolutional generator: forward passes, the high/fine split, and
checkpoint I/O.

A generator is an ordered stack of layers ``g_1..g_n``; layer ``i`` is
(optional nearest-neighbor upsample) -> same-padded conv -> nonlinearity.
Boundary ``b`` names the activation after layer ``b`` (boundary 0 is the
network input). The split index ``h`` divides the stack into semantic layers
(1..h, never touched by adaptation) and fine-grained layers (h+1..n).

``run_stack``/``backprop_stack`` are the shared engine: they accept optional
per-layer multiplicative gain fields (``(1 + delta) *`` layer output, used by
image-specific adaptation) and per-layer weight overrides (used by the
preview generator), and can return gradients with respect to the input, the
gains, or any layer's weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend, nn
from .archive import content_digest, load_archive, save_archive
from .errors import ArchiveFormatError, ShapeMismatchError

CHECKPOINT_KIND = "generator"


@dataclass(frozen=True)
class LayerSpec:
    upsample: int
    kernel: tuple[int, int]
    in_channels: int
    out_channels: int
    nonlinearity: str

    def to_json(self) -> dict:
        return {
            "upsample": self.upsample,
            "kernel": list(self.kernel),
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "nonlinearity": self.nonlinearity,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LayerSpec":
        return cls(int(d["upsample"]), (int(d["kernel"][0]), int(d["kernel"][1])),
                   int(d["in_channels"]), int(d["out_channels"]), str(d["nonlinearity"]))


@dataclass
class LatentCode:
    """Dense activation grid at a layer boundary (HWC, float32)."""

    values: np.ndarray
    boundary: int = 0

    def copy(self) -> "LatentCode":
        return LatentCode(self.values.copy(), self.boundary)


class LayeredGenerator:
    def __init__(self, specs: list[LayerSpec], split: int, weights: list[tuple[np.ndarray, np.ndarray]],
                 input_grid: tuple[int, int], training_seed: int = 0):
        if not (1 <= split < len(specs)):
            raise ValueError(f"split index {split} outside 1..{len(specs) - 1}")
        for i, (spec, (w, b)) in enumerate(zip(specs, weights), start=1):
            expect = (spec.kernel[0], spec.kernel[1], spec.in_channels, spec.out_channels)
            if w.shape != expect or b.shape != (spec.out_channels,):
                raise ShapeMismatchError(
                    f"layer {i} weights {w.shape}/{b.shape} do not match spec {expect}")
        self.specs = list(specs)
        self.split = split
        self.weights = weights
        self.input_grid = input_grid
        self.training_seed = training_seed

    # -- shape bookkeeping ------------------------------------------------

    @property
    def n_layers(self) -> int:
        return len(self.specs)

    def boundary_shape(self, boundary: int) -> tuple[int, int, int]:
        if not (0 <= boundary <= self.n_layers):
            raise ValueError(f"boundary {boundary} outside 0..{self.n_layers}")
        h, w = self.input_grid
        c = self.specs[0].in_channels
        for spec in self.specs[:boundary]:
            h *= spec.upsample
            w *= spec.upsample
            c = spec.out_channels
        return (h, w, c)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.boundary_shape(0)

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return self.boundary_shape(self.n_layers)

    @property
    def checkpoint_id(self) -> str:
        return content_digest(self._manifest_core(), self._weight_arrays())

    def check_boundary(self, values: np.ndarray, boundary: int) -> None:
        expect = self.boundary_shape(boundary)
        if tuple(values.shape) != expect:
            raise ShapeMismatchError(
                f"latent shape {tuple(values.shape)} does not match boundary {boundary} shape {expect}")

    # -- forward passes ----------------------------------------------------

    def _as_boundary(self, z: "LatentCode | np.ndarray", default_boundary: int) -> tuple[np.ndarray, int]:
        if isinstance(z, LatentCode):
            return np.asarray(z.values), z.boundary
        return np.asarray(z), default_boundary

    def forward(self, z: "LatentCode | np.ndarray") -> np.ndarray:
        """Full image from a latent at boundary 0, or from boundary h (fine layers only)."""
        values, boundary = self._as_boundary(z, 0)
        if boundary not in (0, self.split):
            raise ShapeMismatchError(
                f"forward accepts boundary 0 or {self.split}, got boundary {boundary}")
        self.check_boundary(values, boundary)
        return run_stack(self, values[None], start=boundary)[0]

    def forward_high(self, z: "LatentCode | np.ndarray") -> LatentCode:
        values, boundary = self._as_boundary(z, 0)
        if boundary != 0:
            raise ShapeMismatchError(f"forward_high expects boundary 0, got {boundary}")
        self.check_boundary(values, 0)
        out = run_stack(self, values[None], start=0, stop=self.split)[0]
        return LatentCode(out, boundary=self.split)

    def forward_fine(self, z_h: "LatentCode | np.ndarray") -> np.ndarray:
        values, boundary = self._as_boundary(z_h, self.split)
        if boundary != self.split:
            raise ShapeMismatchError(
                f"forward_fine expects boundary {self.split}, got boundary {boundary}")
        self.check_boundary(values, self.split)
        return run_stack(self, values[None], start=self.split)[0]

    # -- persistence -------------------------------------------------------

    def _manifest_core(self) -> dict:
        return {
            "kind": CHECKPOINT_KIND,
            "layers": [s.to_json() for s in self.specs],
            "split": self.split,
            "input_grid": list(self.input_grid),
            "training_seed": self.training_seed,
        }

    def _weight_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for i, (w, b) in enumerate(self.weights, start=1):
            arrays[f"layer{i}.weight"] = w
            arrays[f"layer{i}.bias"] = b
        return arrays

    def copy_weights(self, layers: "list[int] | None" = None) -> list[tuple[np.ndarray, np.ndarray]]:
        idx = range(1, self.n_layers + 1) if layers is None else layers
        return [(self.weights[i - 1][0].copy(), self.weights[i - 1][1].copy()) for i in idx]


def save_checkpoint(gen: LayeredGenerator, path) -> None:
    save_archive(path, gen._manifest_core(), gen._weight_arrays())


def load_checkpoint(path) -> LayeredGenerator:
    manifest, arrays = load_archive(path)
    if manifest.get("kind") != CHECKPOINT_KIND:
        raise ArchiveFormatError(f"{path}: not a generator checkpoint (kind={manifest.get('kind')!r})")
    specs = [LayerSpec.from_json(d) for d in manifest["layers"]]
    weights = []
    for i in range(1, len(specs) + 1):
        try:
            weights.append((arrays[f"layer{i}.weight"], arrays[f"layer{i}.bias"]))
        except KeyError as exc:
            raise ArchiveFormatError(f"{path}: missing arrays for layer {i}") from exc
    return LayeredGenerator(specs, int(manifest["split"]), weights,
                            tuple(manifest["input_grid"]), int(manifest.get("training_seed", 0)))


# -- stack engine -----------------------------------------------------------


def run_stack(gen: LayeredGenerator, x: np.ndarray, start: int = 0, stop: "int | None" = None,
              gains: "dict[int, np.ndarray] | None" = None,
              weight_override: "dict[int, tuple[np.ndarray, np.ndarray]] | None" = None,
              gain_mode: str = "multiplicative",
              capture: bool = False):
    """Apply layers ``start+1..stop`` to a batch ``x`` at boundary ``start``.

    ``gains[i]`` perturbs layer i's output: ``(1 + gains[i]) * out`` in
    multiplicative mode, ``out + gains[i]`` in additive mode.
    ``weight_override[i]`` substitutes that layer's conv parameters. With
    ``capture=True`` returns ``(y, caches)`` for use with ``backprop_stack``.
    """
    stop = gen.n_layers if stop is None else stop
    caches = []
    for i in range(start + 1, stop + 1):
        spec = gen.specs[i - 1]
        w, b = (weight_override or {}).get(i, gen.weights[i - 1])
        x = nn.upsample_nearest(x, spec.upsample)
        conv_in = x
        x = backend.conv2d(x, w, b)
        x = nn.act_forward(spec.nonlinearity, x)
        post_act = x
        if gains and i in gains:
            x = x + gains[i] if gain_mode == "additive" else x * (1.0 + gains[i])
        if capture:
            caches.append((conv_in, post_act))
    return (x, caches) if capture else x


def backprop_stack(gen: LayeredGenerator, caches: list, gy: np.ndarray,
                   start: int = 0, stop: "int | None" = None,
                   gains: "dict[int, np.ndarray] | None" = None,
                   weight_override: "dict[int, tuple[np.ndarray, np.ndarray]] | None" = None,
                   gain_mode: str = "multiplicative",
                   need_weight_grads: tuple = (),
                   need_gain_grads: bool = False):
    """Backward pass matching a captured ``run_stack`` call.

    Returns ``(grad_input, weight_grads, gain_grads)`` where ``weight_grads``
    maps layer index -> (gw, gb) for layers in ``need_weight_grads`` and
    ``gain_grads`` maps layer index -> d(loss)/d(delta_i).
    """
    stop = gen.n_layers if stop is None else stop
    weight_grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    gain_grads: dict[int, np.ndarray] = {}
    for pos, i in enumerate(reversed(range(start + 1, stop + 1))):
        conv_in, post_act = caches[len(caches) - 1 - pos]
        spec = gen.specs[i - 1]
        w, b = (weight_override or {}).get(i, gen.weights[i - 1])
        if gains and i in gains:
            if gain_mode == "additive":
                if need_gain_grads:
                    gain_grads[i] = gy.astype(np.float64).sum(axis=0).astype(gy.dtype)
            else:
                if need_gain_grads:
                    gain_grads[i] = (gy.astype(np.float64) * post_act.astype(np.float64)).sum(axis=0).astype(gy.dtype)
                gy = gy * (1.0 + gains[i])
        gy = nn.act_backward(spec.nonlinearity, post_act, gy)
        if i in need_weight_grads:
            weight_grads[i] = backend.conv2d_grad_weights(conv_in, gy, w.shape[0], w.shape[1])
        gy = backend.conv2d_grad_input(gy, w, conv_in.shape[1], conv_in.shape[2])
        gy = nn.upsample_nearest_grad(gy, spec.upsample)
    return gy, weight_grads, gain_grads


# -- toy architecture ---------------------------------------------------------


def toy_layer_specs() -> list[LayerSpec]:
    """6-layer desk-scale architecture: 4x4x128 latent -> 64x64x3 image.

    Layer 1 keeps the 4x4 grid; layers 2-5 each upsample x2 (the fine section
    spans a four-scale pyramid); layer 6 maps to RGB with tanh.
    """
    chans = [128, 64, 48, 32, 24, 16, 3]
    specs = []
    for i in range(6):
        up = 2 if 1 <= i <= 4 else 1
        nonlin = "tanh" if i == 5 else "lrelu"
        specs.append(LayerSpec(up, (3, 3), chans[i], chans[i + 1], nonlin))
    return specs


TOY_SPLIT = 1  # h = n - 5 for the 6-layer toy stack
TOY_GRID = (4, 4)


def init_generator(specs: list[LayerSpec], split: int, seed: int,
                   input_grid: tuple[int, int] = TOY_GRID,
                   zero: bool = False,
                   dead_input_channels: "slice | None" = None) -> LayeredGenerator:
    """Fresh generator. ``dead_input_channels`` zeroes the first layer's view of
    those latent channels so they can never influence the output (reserved
    channels stay inert through training and inversion)."""
    rng = np.random.default_rng(seed)
    weights = []
    for spec in specs:
        kh, kw = spec.kernel
        if zero:
            w = np.zeros((kh, kw, spec.in_channels, spec.out_channels), dtype=np.float32)
        else:
            w = nn.he_init(rng, kh, kw, spec.in_channels, spec.out_channels)
        weights.append((w, np.zeros(spec.out_channels, dtype=np.float32)))
    if dead_input_channels is not None and not zero:
        weights[0][0][:, :, dead_input_channels, :] = 0.0
    return LayeredGenerator(specs, split, weights, input_grid, training_seed=seed)


def receptive_halo_px(gen: LayeredGenerator, start_boundary: int = 0) -> int:
    """Pixels beyond an input cell's block that layers start+1..n can reach."""
    halo = 0
    for spec in gen.specs[start_boundary:]:
        halo = halo * spec.upsample + spec.kernel[0] // 2
    return halo
