"""Latent recovery: feed-forward encoder plus gradient refinement.

Inversion is two steps. A trained encoder predicts an initial latent from
the image; gradient descent on the reconstruction loss then refines it.
When the editable boundary sits above the network input, refinement
optimizes the earlier-boundary codes (the boundary-0 code plus additive
offsets at each intermediate boundary) and returns their push-forward,
which acts as an implicit regularizer for the returned code. At the toy
model's boundary 0 this degenerates to optimizing the code directly.

Generated images invert nearly perfectly; real photographs are not
guaranteed to (and at full scale generally do not) invert well.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .archive import load_archive, save_archive
from .errors import ArchiveFormatError, OptimizationError, ShapeMismatchError
from .generator import LatentCode, LayeredGenerator, backprop_stack, run_stack
from .metrics import pearson, psnr
from .perceptual import PerceptualExtractor


def reconstruction_loss(x: np.ndarray, y: np.ndarray, extractor: PerceptualExtractor) -> float:
    """Mean-L1 pixel term plus weighted per-stage mean-L1 feature terms."""
    if x.shape != y.shape:
        raise ShapeMismatchError(f"reconstruction loss on mismatched shapes {x.shape} vs {y.shape}")
    xb, yb = x[None], y[None]
    loss = nn.l1_mean(xb, yb)
    if extractor.n_stages:
        loss += extractor.feature_weight * extractor.feature_loss(yb, xb)
    return float(loss)


def reconstruction_loss_and_grad(y: np.ndarray, x: np.ndarray, extractor: PerceptualExtractor):
    """Batched loss and gradient with respect to the generated batch ``y``."""
    loss = nn.l1_mean(y, x)
    gy = nn.l1_mean_grad(y, x)
    if extractor.n_stages:
        floss, fgrad = extractor.feature_loss_and_grad(y, x)
        loss += extractor.feature_weight * floss
        gy = gy + extractor.feature_weight * fgrad
    return float(loss), gy


# -- encoder ------------------------------------------------------------------

ENCODER_KIND = "encoder"


class Encoder:
    """Residual conv trunk with a zero-initialized 1x1 regression head."""

    def __init__(self, net: nn.Sequential, out_grid: tuple[int, int], out_channels: int,
                 arch: dict, training_seed: int = 0):
        self.net = net
        self.out_grid = out_grid
        self.out_channels = out_channels
        self.arch = arch
        self.training_seed = training_seed

    @classmethod
    def create(cls, seed: int = 0, trunk_channels: tuple = (16, 32, 48, 64, 96),
               res_blocks: int = 2, out_channels: int = 128) -> "Encoder":
        rng = np.random.default_rng(seed)
        layers: list = []
        cin = 3
        for i, cout in enumerate(trunk_channels):
            layers.append(nn.Conv2d.create(rng, cin, cout, k=3, stride=1 if i == 0 else 2))
            layers.append(nn.Activation("lrelu"))
            cin = cout
        for _ in range(res_blocks):
            layers.append(nn.Residual(nn.Conv2d.create(rng, cin, cin),
                                      nn.Conv2d.create(rng, cin, cin)))
        layers.append(nn.Conv2d.create(rng, cin, out_channels, k=1, zero=True))
        grid = 64 // (2 ** (len(trunk_channels) - 1))
        arch = {"trunk_channels": list(trunk_channels), "res_blocks": res_blocks,
                "out_channels": out_channels}
        return cls(nn.Sequential(layers), (grid, grid), out_channels, arch, seed)

    def predict(self, image: np.ndarray) -> LatentCode:
        out, _ = self.net.forward(image[None].astype(np.float32))
        return LatentCode(out[0], boundary=0)

    def save(self, path) -> None:
        manifest = {"kind": ENCODER_KIND, "arch": self.arch, "training_seed": self.training_seed}
        arrays = {}
        for i, p in enumerate(self.net.params()):
            arrays[f"param{i:03d}"] = p
        save_archive(path, manifest, arrays)

    @classmethod
    def load(cls, path) -> "Encoder":
        manifest, arrays = load_archive(path)
        if manifest.get("kind") != ENCODER_KIND:
            raise ArchiveFormatError(f"{path}: not an encoder checkpoint")
        arch = manifest["arch"]
        enc = cls.create(seed=int(manifest.get("training_seed", 0)),
                         trunk_channels=tuple(arch["trunk_channels"]),
                         res_blocks=int(arch["res_blocks"]),
                         out_channels=int(arch["out_channels"]))
        params = enc.net.params()
        if len(params) != len(arrays):
            raise ArchiveFormatError(f"{path}: expected {len(params)} arrays, found {len(arrays)}")
        for i, p in enumerate(params):
            stored = arrays[f"param{i:03d}"]
            if stored.shape != p.shape:
                raise ShapeMismatchError(f"{path}: param{i:03d} shape {stored.shape} != {p.shape}")
            p[...] = stored
        return enc


@dataclass
class EncoderTrainConfig:
    seed: int = 0
    epochs: int = 8
    batch_size: int = 16
    lr: float = 1.5e-3
    lr_decay: float = 0.93
    holdout: int = 64
    latent_match_weight: float = 0.0
    max_holdout_loss: float | None = None


def train_encoder(gen: LayeredGenerator, images: list[np.ndarray], config: EncoderTrainConfig,
                  extractor: PerceptualExtractor,
                  true_latents: list[np.ndarray] | None = None,
                  encoder: Encoder | None = None) -> tuple[Encoder, dict]:
    """Fit the encoder to minimize reconstruction loss of G(E(x)) over images.

    When ``true_latents`` is given (generator samples), an optional direct
    latent-matching term with weight ``latent_match_weight`` is added.
    ``encoder`` overrides the default fresh architecture (whose trunk assumes
    64x64 inputs).
    """
    enc = encoder if encoder is not None else Encoder.create(
        config.seed, out_channels=gen.specs[0].in_channels)
    params = enc.net.params()
    adam = nn.Adam(params, config.lr)
    rng = np.random.default_rng(config.seed)
    n_train = len(images) - config.holdout if config.holdout else len(images)

    def batch_loss(idx: np.ndarray, train: bool):
        x = np.stack([images[i] for i in idx])
        e, enc_caches = enc.net.forward(x)
        y, gen_caches = run_stack(gen, e, capture=True)
        loss, gy = reconstruction_loss_and_grad(y, x, extractor)
        if not train:
            return loss, None
        ge = backprop_stack(gen, gen_caches, gy)[0]
        if config.latent_match_weight and true_latents is not None:
            zt = np.stack([true_latents[i] for i in idx])
            loss += config.latent_match_weight * nn.l1_mean(e, zt)
            ge = ge + config.latent_match_weight * nn.l1_mean_grad(e, zt)
        _, grads = enc.net.backward(enc_caches, ge)
        return loss, grads

    trace = []
    for epoch in range(config.epochs):
        adam.lr = config.lr * config.lr_decay ** epoch
        order = rng.permutation(n_train)
        total, seen = 0.0, 0
        for i in range(0, n_train, config.batch_size):
            idx = order[i : i + config.batch_size]
            loss, grads = batch_loss(idx, train=True)
            if not np.isfinite(loss):
                raise OptimizationError(
                    f"encoder training diverged at epoch {epoch} (loss={loss}); trace={trace}")
            adam.step(params, grads)
            total += loss * len(idx)
            seen += len(idx)
        trace.append(total / seen)

    holdout_loss = None
    if config.holdout:
        losses = []
        for i in range(n_train, len(images), config.batch_size):
            idx = np.arange(i, min(i + config.batch_size, len(images)))
            losses.append(batch_loss(idx, train=False)[0] * len(idx))
        holdout_loss = float(sum(losses) / config.holdout)
        if config.max_holdout_loss is not None and holdout_loss > config.max_holdout_loss:
            raise OptimizationError(
                f"encoder holdout loss {holdout_loss:.5f} above target "
                f"{config.max_holdout_loss:.5f}; trace={trace}")
    return enc, {"loss_trace": trace, "holdout_loss": holdout_loss}


# -- gradient refinement ------------------------------------------------------


@dataclass
class RefineConfig:
    steps: int = 400
    lr: float = 0.05
    lr_decay: float = 0.995    # per-step multiplier; tightens the final iterates
    boundary: int = 0          # boundary of the returned (editable) code
    seed: int = 0


@dataclass
class InversionResult:
    z: LatentCode
    loss_trace: list[float] = field(repr=False)
    psnr: float = 0.0
    pearson_r: float | None = None


def refine_latent(gen: LayeredGenerator, x: np.ndarray, z0: LatentCode | np.ndarray,
                  config: RefineConfig, extractor: PerceptualExtractor,
                  z_true: np.ndarray | None = None) -> InversionResult:
    """Gradient descent on the reconstruction loss starting from ``z0``.

    ``z0`` is a boundary-0 code. The optimization variables are the
    boundary-0 code and, when ``config.boundary`` = k > 0, additive offsets
    at boundaries 1..k-1; the result is the push-forward code at boundary k.
    The loss trace records the best value seen so far, and the returned code
    is the best-seen iterate, so the trace is non-increasing.
    """
    k = config.boundary
    if not (0 <= k < gen.n_layers):
        raise ValueError(f"refine boundary {k} outside 0..{gen.n_layers - 1}")
    z0_values = z0.values if isinstance(z0, LatentCode) else z0
    gen.check_boundary(z0_values, 0)

    variables = [np.array(z0_values, copy=True)[None]]
    for b in range(1, k):
        variables.append(np.zeros((1,) + gen.boundary_shape(b), dtype=z0_values.dtype))
    adam = nn.Adam(variables, config.lr)

    def forward_with_caches():
        a = variables[0]
        caches = []
        for b in range(1, k + 1):
            a, c = run_stack(gen, a, start=b - 1, stop=b, capture=True)
            caches.append(c)
            if b < k:
                a = a + variables[b]
        z_k = a
        y, tail = run_stack(gen, a, start=k, capture=True)
        return z_k, y, caches, tail

    best_loss = np.inf
    best_zk = None
    trace = []
    for step in range(config.steps + 1):
        z_k, y, caches, tail = forward_with_caches()
        loss, gy = reconstruction_loss_and_grad(y, x[None], extractor)
        if not np.isfinite(loss):
            raise OptimizationError(f"refinement hit non-finite loss at step {step}")
        if loss < best_loss:
            best_loss = loss
            best_zk = z_k[0].copy()
        trace.append(best_loss)
        if step == config.steps:
            break
        g = backprop_stack(gen, tail, gy, start=k)[0]
        grads = [None] * len(variables)
        for b in range(k, 0, -1):
            if b < k:
                grads[b] = g
            g = backprop_stack(gen, caches[b - 1], g, start=b - 1, stop=b)[0]
        grads[0] = g
        adam.lr = config.lr * config.lr_decay ** step
        adam.step(variables, grads)

    y_best = run_stack(gen, best_zk[None], start=k)[0]
    return InversionResult(
        z=LatentCode(best_zk, boundary=k),
        loss_trace=trace,
        psnr=psnr(y_best, x),
        pearson_r=pearson(best_zk, z_true) if z_true is not None else None,
    )


def invert_image(gen: LayeredGenerator, encoder: Encoder, x: np.ndarray,
                 config: RefineConfig, extractor: PerceptualExtractor,
                 z_true: np.ndarray | None = None) -> InversionResult:
    """Two-step recovery: encoder prediction, then gradient refinement."""
    z0 = encoder.predict(x)
    return refine_latent(gen, x, z0, config, extractor, z_true=z_true)


def save_inversion_result(result: InversionResult, json_path, archive_path) -> None:
    save_archive(archive_path, {"kind": "latent", "boundary": result.z.boundary},
                 {"z": result.z.values.astype(np.float32)})
    payload = {
        "psnr": result.psnr,
        "pearson_r": result.pearson_r,
        "loss_trace": [float(v) for v in result.loss_trace],
        "boundary": result.z.boundary,
        "z_archive": str(Path(archive_path).name),
    }
    Path(json_path).write_text(json.dumps(payload, indent=2))


def load_latent(archive_path) -> LatentCode:
    manifest, arrays = load_archive(archive_path)
    if manifest.get("kind") != "latent" or "z" not in arrays:
        raise ArchiveFormatError(f"{archive_path}: not a latent archive")
    return LatentCode(arrays["z"], int(manifest.get("boundary", 0)))
