"""Reconstruction training of the desk-scale generator on synthetic scenes.

The toy generator learns to decode the structured scene latents back to
pixels (L1 + perceptual loss). Training is fully seeded and single-threaded,
so identical configs produce identical checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, scenes
from .errors import OptimizationError
from .generator import LayeredGenerator, backprop_stack, init_generator, run_stack, toy_layer_specs, TOY_SPLIT
from .metrics import psnr
from .perceptual import PerceptualExtractor


@dataclass
class ToyTrainConfig:
    seed: int = 0
    epochs: int = 18
    batch_size: int = 32
    lr: float = 2e-3
    lr_decay: float = 0.96
    holdout: int = 64
    extractor_seed: int = 11
    min_holdout_psnr: float | None = None
    # std of training noise injected into class-gated latent channels over
    # cells the class does not cover; the target image stays clean, which
    # teaches the generator to ignore those directions. Without this the
    # unused directions keep their random-init influence and gradient-based
    # inversion drifts along them.
    offmanifold_noise: float = 0.3


def _batch(samples: list[scenes.SceneSample], idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = np.stack([samples[i].latent for i in idx])
    x = np.stack([samples[i].image for i in idx])
    return z, x


def gated_offsupport_mask(z: np.ndarray) -> np.ndarray:
    """1 on class-gated channels (color, texture) in cells without that class."""
    mask = np.zeros_like(z)
    for k in range(scenes.N_CLASSES):
        absent = z[..., scenes.COV_BASE + k] == 0
        for ch in (*range(scenes.RGB_BASE + 3 * k, scenes.RGB_BASE + 3 * k + 3),
                   scenes.TEX_BASE + k):
            mask[..., ch] = np.maximum(mask[..., ch], absent)
    return mask


def _recon_loss_and_grad(y: np.ndarray, x: np.ndarray, extractor: PerceptualExtractor):
    loss = nn.l1_mean(y, x)
    gy = nn.l1_mean_grad(y, x)
    if extractor.n_stages:
        floss, fgrad = extractor.feature_loss_and_grad(y, x)
        loss += extractor.feature_weight * floss
        gy = gy + extractor.feature_weight * fgrad
    return loss, gy


def _eval_loss(gen: LayeredGenerator, samples: list[scenes.SceneSample],
               extractor: PerceptualExtractor, batch_size: int = 32) -> float:
    total, count = 0.0, 0
    for i in range(0, len(samples), batch_size):
        idx = np.arange(i, min(i + batch_size, len(samples)))
        z, x = _batch(samples, idx)
        y = run_stack(gen, z)
        total += _recon_loss_and_grad(y, x, extractor)[0] * len(idx)
        count += len(idx)
    return total / count


def holdout_psnr(gen: LayeredGenerator, samples: list[scenes.SceneSample]) -> float:
    vals = [psnr(run_stack(gen, s.latent[None])[0], s.image) for s in samples]
    return float(np.mean(vals))


def train_toy_generator(dataset: list[scenes.SceneSample], config: ToyTrainConfig) -> tuple[LayeredGenerator, dict]:
    """Train the 6-layer toy generator; returns (generator, report).

    Raises OptimizationError (with the reached PSNR) when the held-out
    reconstruction target in the config is not met.
    """
    gen = init_generator(toy_layer_specs(), TOY_SPLIT, config.seed,
                         dead_input_channels=scenes.RESERVED)
    extractor = PerceptualExtractor.fixed_random(config.extractor_seed)
    train = dataset[: len(dataset) - config.holdout] if config.holdout else dataset
    held = dataset[len(dataset) - config.holdout:] if config.holdout else []
    all_layers = tuple(range(1, gen.n_layers + 1))
    params = [a for w, b in gen.weights for a in (w, b)]
    adam = nn.Adam(params, config.lr)
    rng = np.random.default_rng(config.seed)

    initial_loss = _eval_loss(gen, train, extractor)
    trace = [initial_loss]
    for epoch in range(config.epochs):
        adam.lr = config.lr * config.lr_decay ** epoch
        order = rng.permutation(len(train))
        epoch_loss, seen = 0.0, 0
        for i in range(0, len(train), config.batch_size):
            idx = order[i : i + config.batch_size]
            z, x = _batch(train, idx)
            if config.offmanifold_noise:
                noise = rng.standard_normal(z.shape).astype(np.float32)
                z = z + config.offmanifold_noise * noise * gated_offsupport_mask(z)
            y, caches = run_stack(gen, z, capture=True)
            loss, gy = _recon_loss_and_grad(y, x, extractor)
            _, wgrads, _ = backprop_stack(gen, caches, gy, need_weight_grads=all_layers)
            grads = [a for i_l in all_layers for a in wgrads[i_l]]
            adam.step(params, grads)
            epoch_loss += loss * len(idx)
            seen += len(idx)
        trace.append(epoch_loss / seen)

    final_loss = trace[-1] if config.epochs else initial_loss
    report = {
        "initial_loss": initial_loss,
        "final_loss": final_loss,
        "loss_trace": trace,
        "holdout_psnr": holdout_psnr(gen, held) if held else None,
    }
    if config.min_holdout_psnr is not None and held:
        if report["holdout_psnr"] < config.min_holdout_psnr:
            raise OptimizationError(
                f"toy training did not converge: holdout PSNR {report['holdout_psnr']:.2f} dB "
                f"< target {config.min_holdout_psnr:.2f} dB (final loss {final_loss:.5f})")
    return gen, report
