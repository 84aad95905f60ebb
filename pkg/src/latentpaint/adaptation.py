"""Image-specific generator adaptation.

The adapted generator G' keeps the base weights frozen and multiplies each
fine-grained layer's output (layers h+1..n-1; never the final layer) by a
learned gain field ``(1 + delta_i)``. The deltas are free parameters fit by
Adam to match the target photo on the pixels outside the edit footprint,
with an L2 penalty on their magnitude. A separate preview generator instead
fine-tunes a copy of the fine-layer weights against the whole unedited
image once per upload, so edits can be previewed without per-edit
optimization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .archive import load_archive, save_archive
from .errors import ArchiveFormatError, LatentPaintError, OptimizationError, ShapeMismatchError
from .generator import LatentCode, LayeredGenerator, backprop_stack, run_stack
from .perceptual import PerceptualExtractor


class AdaptationCancelled(LatentPaintError):
    """Raised between optimizer steps when a job's cancel hook fires."""


@dataclass
class AdaptationConfig:
    reg_weight: float = 0.1
    lr: float = 0.1
    steps: int = 1000
    preview_steps: int = 200
    preview_lr: float = 2e-3
    seed: int = 0
    random_init: bool = False      # default: delta = 0, exact identity at step 0
    init_scale: float = 1e-3
    gain_mode: str = "multiplicative"   # or "additive"

    def __post_init__(self):
        for name in ("reg_weight", "lr", "preview_lr", "init_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.steps < 0 or self.preview_steps < 0:
            raise ValueError("step budgets must be >= 0")
        if self.gain_mode not in ("multiplicative", "additive"):
            raise ValueError(f"unknown gain mode {self.gain_mode!r}")


@dataclass
class PerturbationSet:
    """One gain field per fine layer h+1..n-1, shaped like that layer's output."""

    deltas: dict[int, np.ndarray]
    seed: int = 0

    @classmethod
    def zeros(cls, gen: LayeredGenerator, seed: int = 0) -> "PerturbationSet":
        deltas = {i: np.zeros(gen.boundary_shape(i), dtype=np.float32)
                  for i in range(gen.split + 1, gen.n_layers)}
        return cls(deltas, seed)

    @classmethod
    def random(cls, gen: LayeredGenerator, seed: int, scale: float) -> "PerturbationSet":
        rng = np.random.default_rng(seed)
        deltas = {i: (rng.standard_normal(gen.boundary_shape(i)) * scale).astype(np.float32)
                  for i in range(gen.split + 1, gen.n_layers)}
        return cls(deltas, seed)

    def copy(self) -> "PerturbationSet":
        return PerturbationSet({i: d.copy() for i, d in self.deltas.items()}, self.seed)

    def layer_indices(self) -> list[int]:
        return sorted(self.deltas)


def reg_loss(perturbations: PerturbationSet) -> float:
    """Sum of squared entries across all gain fields."""
    return float(sum((d.astype(np.float64) ** 2).sum() for d in perturbations.deltas.values()))


def match_loss(output: np.ndarray, x: np.ndarray, pixel_mask: np.ndarray) -> float:
    """Mean |output - x| over pixel-channel entries where the mask is 0."""
    if output.shape != x.shape:
        raise ShapeMismatchError(f"match loss on mismatched shapes {output.shape} vs {x.shape}")
    if pixel_mask.shape != output.shape[:2]:
        raise ShapeMismatchError(f"mask {pixel_mask.shape} does not match image {output.shape[:2]}")
    keep = np.asarray(pixel_mask) == 0
    if not keep.any():
        return 0.0
    diff = output.astype(np.float64)[keep] - x.astype(np.float64)[keep]
    return float(np.abs(diff).mean())


def match_loss_grad(output: np.ndarray, x: np.ndarray, pixel_mask: np.ndarray) -> np.ndarray:
    keep = np.asarray(pixel_mask) == 0
    g = np.zeros(output.shape, dtype=output.dtype)
    if not keep.any():
        return g
    count = int(keep.sum()) * output.shape[2]
    sign = np.sign(output.astype(np.float64) - x.astype(np.float64))
    g[keep] = (sign[keep] / count).astype(output.dtype)
    return g


@dataclass
class AdaptedGenerator:
    base: LayeredGenerator
    perturbations: PerturbationSet
    binding: dict = field(default_factory=dict)
    trace: list[dict] = field(default_factory=list, repr=False)
    snapshots: dict[int, "PerturbationSet"] = field(default_factory=dict, repr=False)
    gain_mode: str = "multiplicative"

    @property
    def gains(self) -> dict[int, np.ndarray]:
        return self.perturbations.deltas

    def render(self, z: LatentCode | np.ndarray) -> np.ndarray:
        values = z.values if isinstance(z, LatentCode) else np.asarray(z)
        self.base.check_boundary(values, 0)
        return run_stack(self.base, values[None], gains=self.gains, gain_mode=self.gain_mode)[0]

    def save(self, path) -> None:
        manifest = {"kind": "adapted", "checkpoint_id": self.base.checkpoint_id,
                    "binding": self.binding, "seed": self.perturbations.seed,
                    "gain_mode": self.gain_mode}
        arrays = {f"delta{i}": d for i, d in self.perturbations.deltas.items()}
        save_archive(path, manifest, arrays)

    @classmethod
    def load(cls, path, gen: LayeredGenerator) -> "AdaptedGenerator":
        manifest, arrays = load_archive(path)
        if manifest.get("kind") != "adapted":
            raise ArchiveFormatError(f"{path}: not an adapted-generator archive")
        if manifest["checkpoint_id"] != gen.checkpoint_id:
            raise ArchiveFormatError(
                f"{path}: bound to checkpoint {manifest['checkpoint_id']}, not {gen.checkpoint_id}")
        deltas = {}
        for name, arr in arrays.items():
            deltas[int(name.removeprefix("delta"))] = arr
        return cls(gen, PerturbationSet(deltas, int(manifest.get("seed", 0))),
                   manifest.get("binding", {}),
                   gain_mode=manifest.get("gain_mode", "multiplicative"))


@dataclass
class WeightAdaptedGenerator:
    """Fine-layer weight copy fit to the unedited image (the fast preview path)."""

    base: LayeredGenerator
    fine_weights: dict[int, tuple[np.ndarray, np.ndarray]]
    steps_used: int = 0

    def render(self, z: LatentCode | np.ndarray) -> np.ndarray:
        values = z.values if isinstance(z, LatentCode) else np.asarray(z)
        self.base.check_boundary(values, 0)
        return run_stack(self.base, values[None], weight_override=self.fine_weights)[0]

    def save(self, path) -> None:
        manifest = {"kind": "preview", "checkpoint_id": self.base.checkpoint_id,
                    "steps_used": self.steps_used,
                    "layers": sorted(self.fine_weights)}
        arrays = {}
        for i, (w, b) in self.fine_weights.items():
            arrays[f"layer{i}.weight"] = w
            arrays[f"layer{i}.bias"] = b
        save_archive(path, manifest, arrays)

    @classmethod
    def load(cls, path, gen: LayeredGenerator) -> "WeightAdaptedGenerator":
        manifest, arrays = load_archive(path)
        if manifest.get("kind") != "preview":
            raise ArchiveFormatError(f"{path}: not a preview-generator archive")
        if manifest["checkpoint_id"] != gen.checkpoint_id:
            raise ArchiveFormatError(
                f"{path}: bound to checkpoint {manifest['checkpoint_id']}, not {gen.checkpoint_id}")
        fine = {int(i): (arrays[f"layer{i}.weight"], arrays[f"layer{i}.bias"])
                for i in manifest["layers"]}
        return cls(gen, fine, int(manifest.get("steps_used", 0)))


def render(model, z: LatentCode | np.ndarray) -> np.ndarray:
    """Forward pass through an adapted or base generator; pure and deterministic."""
    if isinstance(model, LayeredGenerator):
        return model.forward(z)
    return model.render(z)


def optimize_adaptation(gen: LayeredGenerator, z_e: LatentCode | np.ndarray, x: np.ndarray,
                        pixel_mask: np.ndarray, config: AdaptationConfig,
                        should_cancel: Callable[[], bool] | None = None,
                        snapshot_at: tuple[int, ...] = ()) -> AdaptedGenerator:
    """Fit the gain fields so G'(z_e) matches x outside the mask.

    The edited code and the base weights stay fixed; only the deltas move.
    Tracks the best-seen total loss; the returned perturbations (and any
    requested step snapshots) are best-so-far states, so longer budgets can
    only improve the result. Raises OptimizationError on a non-finite loss
    and AdaptationCancelled when the cancel hook fires between steps.
    """
    values = z_e.values if isinstance(z_e, LatentCode) else np.asarray(z_e)
    gen.check_boundary(values, 0)
    if x.shape != gen.output_shape:
        raise ShapeMismatchError(f"target {x.shape} does not match output {gen.output_shape}")
    pert = (PerturbationSet.random(gen, config.seed, config.init_scale)
            if config.random_init else PerturbationSet.zeros(gen, config.seed))
    layer_order = pert.layer_indices()
    params = [pert.deltas[i] for i in layer_order]
    adam = nn.Adam(params, config.lr)

    z_h = run_stack(gen, values[None], start=0, stop=gen.split)

    best = pert.copy()
    best_total = np.inf
    trace: list[dict] = []
    snapshots: dict[int, PerturbationSet] = {}

    for step in range(config.steps + 1):
        if should_cancel is not None and should_cancel():
            raise AdaptationCancelled(f"adaptation cancelled at step {step}")
        y, caches = run_stack(gen, z_h, start=gen.split, gains=pert.deltas,
                              gain_mode=config.gain_mode, capture=True)
        lm = match_loss(y[0], x, pixel_mask)
        lr_ = reg_loss(pert)
        total = lm + config.reg_weight * lr_
        if not np.isfinite(total):
            raise OptimizationError(f"adaptation hit non-finite loss at step {step}")
        if total < best_total:
            best_total = total
            best = pert.copy()
        trace.append({"step": step, "match": lm, "reg": lr_, "total": total, "best": best_total})
        if step in snapshot_at:
            snapshots[step] = best.copy()
        if step == config.steps:
            break
        gy = match_loss_grad(y[0], x, pixel_mask)[None]
        _, _, gain_grads = backprop_stack(gen, caches, gy, start=gen.split,
                                          gains=pert.deltas, gain_mode=config.gain_mode,
                                          need_gain_grads=True)
        grads = [gain_grads[i] + 2.0 * config.reg_weight * pert.deltas[i] for i in layer_order]
        adam.step(params, grads)

    binding = {"steps": config.steps, "reg_weight": config.reg_weight, "lr": config.lr}
    return AdaptedGenerator(gen, best, binding, trace, snapshots, gain_mode=config.gain_mode)


def fit_preview_generator(gen: LayeredGenerator, z: LatentCode | np.ndarray, x: np.ndarray,
                          config: AdaptationConfig,
                          extractor: PerceptualExtractor | None = None) -> WeightAdaptedGenerator:
    """Fine-tune a copy of the fine-layer weights so the render of ``z``
    reconstructs ``x`` over all pixels. The base model is untouched; the fit
    depends only on the unedited image, so it runs once per upload."""
    values = z.values if isinstance(z, LatentCode) else np.asarray(z)
    gen.check_boundary(values, 0)
    fine_idx = list(range(gen.split + 1, gen.n_layers + 1))
    fine = {i: (gen.weights[i - 1][0].copy(), gen.weights[i - 1][1].copy()) for i in fine_idx}
    params = [a for i in fine_idx for a in fine[i]]
    adam = nn.Adam(params, config.preview_lr)
    z_h = run_stack(gen, values[None], start=0, stop=gen.split)
    xb = x[None]
    for step in range(config.preview_steps):
        y, caches = run_stack(gen, z_h, start=gen.split, weight_override=fine, capture=True)
        loss = nn.l1_mean(y, xb)
        gy = nn.l1_mean_grad(y, xb)
        if extractor is not None and extractor.n_stages:
            floss, fgrad = extractor.feature_loss_and_grad(y, xb)
            loss += extractor.feature_weight * floss
            gy = gy + extractor.feature_weight * fgrad
        if not np.isfinite(loss):
            raise OptimizationError(f"preview fit hit non-finite loss at step {step}")
        _, wgrads, _ = backprop_stack(gen, caches, gy, start=gen.split,
                                      weight_override=fine,
                                      need_weight_grads=tuple(fine_idx))
        grads = [a for i in fine_idx for a in wgrads[i]]
        adam.step(params, grads)
    return WeightAdaptedGenerator(gen, fine, config.preview_steps)


def write_trace_csv(path, trace: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "match", "reg", "total", "best"])
        writer.writeheader()
        for row in trace:
            writer.writerow(row)
