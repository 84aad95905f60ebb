"""Build the committed model assets and pilot measurements, stage by stage.

Stages (each writes its outputs and can be run independently):
  gen        train the toy generator        -> assets/toy-v1.ckpt
  enc        train the encoder              -> assets/encoder-v1.ckpt
  catalog    dissect channels               -> assets/catalog-v1.arc
  goldens    freeze forward-pass goldens    -> tests/fixtures/generator_goldens.arc
  invert     pilot: two-step recovery accuracy on 32 generated images
  adapt      pilot: adaptation fidelity margins on the 8 edit fixtures

Run from the repo root:  python3 scripts/build_assets.py gen enc catalog goldens
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
ASSETS = ROOT / "assets"
FIXTURES = ROOT / "tests" / "fixtures"

sys.path.insert(0, str(ROOT / "src"))

from latentpaint import scenes  # noqa: E402
from latentpaint.adaptation import AdaptationConfig, fit_preview_generator, optimize_adaptation  # noqa: E402
from latentpaint.archive import save_archive  # noqa: E402
from latentpaint.dissection import build_catalog  # noqa: E402
from latentpaint.editing import EditOp, EditStack, region_pixel_footprint, replay  # noqa: E402
from latentpaint.generator import load_checkpoint, run_stack, save_checkpoint  # noqa: E402
from latentpaint.inversion import (Encoder, EncoderTrainConfig, RefineConfig, invert_image,  # noqa: E402
                                   train_encoder)
from latentpaint.metrics import psnr  # noqa: E402
from latentpaint.perceptual import PerceptualExtractor  # noqa: E402
from latentpaint.training import ToyTrainConfig, train_toy_generator  # noqa: E402

GEN_DATASET_SEED = 1000
GEN_SCENES = 2400
ENC_SAMPLE_SEED = 5000
ENC_SAMPLES = 2048
CATALOG_SEED = 2000
CATALOG_SCENES = 512
EXTRACTOR_SEED = 11


def log(msg: str) -> None:
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def stage_gen() -> None:
    log(f"generating {GEN_SCENES} training scenes (seed {GEN_DATASET_SEED})")
    data = scenes.make_synthetic_dataset(GEN_DATASET_SEED, GEN_SCENES)
    cfg = ToyTrainConfig(seed=0, epochs=20, batch_size=32, lr=2.5e-3, lr_decay=0.93, holdout=64)
    t0 = time.perf_counter()
    gen, report = train_toy_generator(data, cfg)
    log(f"trained in {time.perf_counter() - t0:.0f}s; holdout PSNR {report['holdout_psnr']:.2f} dB")
    log(f"loss trace: {[round(v, 4) for v in report['loss_trace']]}")
    ASSETS.mkdir(exist_ok=True)
    save_checkpoint(gen, ASSETS / "toy-v1.ckpt")
    (ASSETS / "toy-v1.report.json").write_text(json.dumps(report, indent=2))
    log(f"saved {ASSETS / 'toy-v1.ckpt'} (id {gen.checkpoint_id})")


def _generator_samples(gen, count: int, seed_base: int):
    images, latents = [], []
    for i in range(count):
        z = scenes.sample_latent(seed_base + i)
        images.append(run_stack(gen, z[None])[0])
        latents.append(z)
    return images, latents


def stage_enc() -> None:
    gen = load_checkpoint(ASSETS / "toy-v1.ckpt")
    extractor = PerceptualExtractor.fixed_random(EXTRACTOR_SEED)
    log(f"rendering {ENC_SAMPLES} generator samples for encoder training")
    images, latents = _generator_samples(gen, ENC_SAMPLES, ENC_SAMPLE_SEED)
    cfg = EncoderTrainConfig(seed=0, epochs=8, batch_size=16, lr=1.5e-3, lr_decay=0.9, holdout=64,
                             latent_match_weight=5.0)
    t0 = time.perf_counter()
    enc, report = train_encoder(gen, images, cfg, extractor, true_latents=latents)
    log(f"trained in {time.perf_counter() - t0:.0f}s; holdout loss {report['holdout_loss']:.5f}")
    log(f"loss trace: {[round(v, 5) for v in report['loss_trace']]}")
    # encoder-only accuracy on fresh generated images
    from latentpaint.metrics import pearson
    rs = []
    for i in range(32):
        z_true = scenes.sample_latent(910_000 + i)
        x = run_stack(gen, z_true[None])[0]
        rs.append(pearson(enc.predict(x).values, z_true))
    log(f"encoder-only pearson r on 32 fresh samples: min {min(rs):.4f} mean {np.mean(rs):.4f}")
    enc.save(ASSETS / "encoder-v1.ckpt")
    report["encoder_only_pearson_min"] = min(rs)
    report["encoder_only_pearson_mean"] = float(np.mean(rs))
    (ASSETS / "encoder-v1.report.json").write_text(json.dumps(report, indent=2))
    log(f"saved {ASSETS / 'encoder-v1.ckpt'}")


def stage_catalog() -> None:
    gen = load_checkpoint(ASSETS / "toy-v1.ckpt")
    sample = scenes.make_synthetic_dataset(CATALOG_SEED, CATALOG_SCENES)
    catalog = build_catalog(gen, sample, sample_id=f"scenes-seed{CATALOG_SEED}-n{CATALOG_SCENES}")
    for name, units in catalog.classes.items():
        top = np.argsort(units.iou)[::-1][:4]
        log(f"{name}: top channels {top.tolist()} iou {[round(float(units.iou[c]), 3) for c in top]} "
            f"selected {int(units.channels.sum())}")
    catalog.save(ASSETS / "catalog-v1.arc")
    log(f"saved {ASSETS / 'catalog-v1.arc'}")


def stage_goldens() -> None:
    gen = load_checkpoint(ASSETS / "toy-v1.ckpt")
    FIXTURES.mkdir(parents=True, exist_ok=True)
    z_fix = scenes.sample_latent(777)
    img_fix = gen.forward(z_fix)
    zh_fix = gen.forward_high(z_fix)
    save_archive(FIXTURES / "generator_goldens.arc",
                 {"kind": "goldens", "checkpoint_id": gen.checkpoint_id, "z_seed": 777},
                 {"z_fix": z_fix, "img_fix": img_fix, "zh_fix": zh_fix.values})
    sample = scenes.scene_sample(int(np.random.default_rng(0).integers(0, 2 ** 63 - 1)))
    hist = np.bincount(sample.segmentation.ravel(), minlength=scenes.N_CLASSES)
    (FIXTURES / "scene_seed0_histogram.json").write_text(json.dumps({
        "dataset_seed": 0, "count": 1,
        "class_pixels": {name: int(hist[i]) for i, name in enumerate(scenes.CLASSES)},
    }, indent=2))
    log(f"froze generator goldens and scene histogram: {dict(zip(scenes.CLASSES, hist.tolist()))}")


def stage_invert(steps: int = 300, lr: float = 0.05, count: int = 32) -> None:
    gen = load_checkpoint(ASSETS / "toy-v1.ckpt")
    enc = Encoder.load(ASSETS / "encoder-v1.ckpt")
    extractor = PerceptualExtractor.fixed_random(EXTRACTOR_SEED)
    cfg = RefineConfig(steps=steps, lr=lr)
    rs, psnrs = [], []
    t0 = time.perf_counter()
    for i in range(count):
        z_true = scenes.sample_latent(920_000 + i)
        x = run_stack(gen, z_true[None])[0]
        res = invert_image(gen, enc, x, cfg, extractor, z_true=z_true)
        rs.append(res.pearson_r)
        psnrs.append(res.psnr)
    dt = time.perf_counter() - t0
    log(f"two-step recovery ({steps} steps, lr {lr}): pearson min {min(rs):.5f} "
        f"mean {np.mean(rs):.5f} | psnr min {min(psnrs):.1f} mean {np.mean(psnrs):.1f} "
        f"| {dt:.0f}s total ({dt / count:.1f}s per image)")


EDIT_FIXTURES = [
    {"scene_seed": 9000, "mode": "draw", "class": "tree", "cells": [[1, 3]], "strength": 1.0},
    {"scene_seed": 9001, "mode": "erase", "class": "tree", "cells": [[1, 0], [1, 1], [2, 0], [2, 1]], "strength": 0.0},
    {"scene_seed": 9002, "mode": "draw", "class": "dome", "cells": [[0, 1], [0, 2]], "strength": 1.0},
    {"scene_seed": 9003, "mode": "erase", "class": "door", "cells": [[3, 1], [3, 2]], "strength": 0.0},
    {"scene_seed": 9004, "mode": "draw", "class": "tree", "cells": [[1, 0], [1, 1]], "strength": 2.0},
    {"scene_seed": 9005, "mode": "erase", "class": "building", "cells": [[1, 2], [2, 2]], "strength": 0.0},
    {"scene_seed": 9006, "mode": "draw", "class": "building", "cells": [[2, 0], [3, 0]], "strength": 1.0},
    {"scene_seed": 9007, "mode": "draw", "class": "dome", "cells": [[0, 2]], "strength": 0.5},
]


def write_edit_fixtures() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    (FIXTURES / "edit_fixtures.json").write_text(json.dumps(EDIT_FIXTURES, indent=2))


def fixture_op(fx: dict, grid: tuple[int, int]) -> EditOp:
    region = np.zeros(grid, dtype=np.uint8)
    for y, x in fx["cells"]:
        region[y, x] = 1
    return EditOp(1, fx["mode"], fx["class"], region, fx["strength"])


def stage_adapt(steps: int = 1000, reg_weight: float = 1e-4, invert_steps: int = 300) -> None:
    from latentpaint.dissection import UnitCatalog

    gen = load_checkpoint(ASSETS / "toy-v1.ckpt")
    enc = Encoder.load(ASSETS / "encoder-v1.ckpt")
    catalog = UnitCatalog.load(ASSETS / "catalog-v1.arc")
    extractor = PerceptualExtractor.fixed_random(EXTRACTOR_SEED)
    write_edit_fixtures()
    rows = []
    for fx in EDIT_FIXTURES:
        x, _ = scenes.render_scene(scenes.sample_scene_spec(fx["scene_seed"]))
        res = invert_image(gen, enc, x, RefineConfig(steps=invert_steps), extractor)
        stack = EditStack(res.z)
        stack.add(fixture_op(fx, catalog.grid))
        z_e = replay(stack, catalog)
        mask = region_pixel_footprint(stack.ops[0].region, gen)
        cfg = AdaptationConfig(reg_weight=reg_weight, lr=0.1, steps=steps)
        t0 = time.perf_counter()
        adapted = optimize_adaptation(gen, z_e, x, mask, cfg, snapshot_at=(100,))
        dt = time.perf_counter() - t0
        base_img = gen.forward(z_e)
        img_1000 = adapted.render(z_e)
        from latentpaint.adaptation import AdaptedGenerator
        img_100 = AdaptedGenerator(gen, adapted.snapshots[100]).render(z_e)
        pv_cfg = AdaptationConfig(reg_weight=reg_weight, preview_steps=200, preview_lr=2e-3)
        preview = fit_preview_generator(gen, res.z, x, pv_cfg)
        img_pv = preview.render(z_e)
        row = {
            "fixture": f"{fx['mode']}-{fx['class']}-{fx['scene_seed']}",
            "inv_psnr": res.psnr,
            "base": psnr(base_img, x, mask),
            "adapt100": psnr(img_100, x, mask),
            "adapt1000": psnr(img_1000, x, mask),
            "preview": psnr(img_pv, x, mask),
            "secs": dt,
        }
        rows.append(row)
        log(" ".join(f"{k}={v:.2f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    gains = [r["adapt1000"] - r["base"] for r in rows]
    log(f"adaptation gain (1000 steps vs unadapted): min {min(gains):.2f} dB mean {np.mean(gains):.2f} dB")
    ordering_ok = all(r["base"] < r["adapt100"] < r["adapt1000"] for r in rows)
    beats_preview = all(r["adapt1000"] > r["preview"] for r in rows)
    log(f"ordering base<100<1000 on all fixtures: {ordering_ok}; 1000 beats preview: {beats_preview}")


STAGES = {
    "gen": stage_gen,
    "enc": stage_enc,
    "catalog": stage_catalog,
    "goldens": stage_goldens,
    "invert": stage_invert,
    "adapt": stage_adapt,
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("stages", nargs="+", choices=sorted(STAGES))
    args = parser.parse_args()
    for name in args.stages:
        log(f"=== stage {name} ===")
        STAGES[name]()


if __name__ == "__main__":
    main()
