"""Batch command line: train-toy, invert, dissect, edit, adapt, eval, serve.

Every subcommand is deterministic given its --seed and exits nonzero with a
message on stderr when an operation fails.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import scenes
from .adaptation import AdaptationConfig, optimize_adaptation, write_trace_csv
from .compositing import BLEND_METHODS, CompositeFixture, evaluate, write_metrics_csv
from .dissection import UnitCatalog, build_catalog
from .editing import EditOp, EditStack, replay
from .errors import LatentPaintError
from .generator import load_checkpoint, save_checkpoint
from .imageio import load_png, save_png
from .inversion import (Encoder, RefineConfig, invert_image, load_latent, refine_latent,
                        save_inversion_result)
from .perceptual import PerceptualExtractor
from .training import ToyTrainConfig, train_toy_generator


def cmd_train_toy(args) -> int:
    dataset = scenes.make_synthetic_dataset(args.dataset_seed, args.scenes)
    cfg = ToyTrainConfig(seed=args.seed, epochs=args.epochs, batch_size=args.batch_size,
                         lr=args.lr, holdout=args.holdout, min_holdout_psnr=args.min_psnr)
    gen, report = train_toy_generator(dataset, cfg)
    save_checkpoint(gen, args.out)
    holdout = report["holdout_psnr"]
    print(f"saved {args.out} (id {gen.checkpoint_id}); "
          f"final loss {report['final_loss']:.5f}"
          + (f", holdout PSNR {holdout:.2f} dB" if holdout is not None else ""))
    return 0


def _load_extractor(args) -> PerceptualExtractor:
    if getattr(args, "extractor", None):
        return PerceptualExtractor.from_archive(args.extractor)
    return PerceptualExtractor.fixed_random(args.extractor_seed)


def cmd_invert(args) -> int:
    gen = load_checkpoint(args.checkpoint)
    x = load_png(args.image)
    extractor = _load_extractor(args)
    cfg = RefineConfig(steps=args.steps, lr=args.lr, seed=args.seed)
    if args.encoder:
        result = invert_image(gen, Encoder.load(args.encoder), x, cfg, extractor)
    else:
        z0 = np.zeros(gen.input_shape, dtype=np.float32)
        result = refine_latent(gen, x, z0, cfg, extractor)
    json_path = args.json or str(Path(args.out).with_suffix(".json"))
    save_inversion_result(result, json_path, args.out)
    print(f"wrote {args.out}; reconstruction PSNR {result.psnr:.2f} dB")
    return 0


def cmd_dissect(args) -> int:
    gen = load_checkpoint(args.checkpoint)
    sample = scenes.make_synthetic_dataset(args.seed, args.scenes)
    catalog = build_catalog(gen, sample, threshold_quantile=args.quantile,
                            iou_floor=args.iou_floor, top_k=args.top_k,
                            sample_id=f"scenes-seed{args.seed}-n{args.scenes}")
    catalog.save(args.out)
    for name, units in catalog.classes.items():
        print(f"{name}: {int(units.channels.sum())} channels, "
              f"best IoU {float(units.iou.max()):.3f}")
    print(f"saved {args.out}")
    return 0


def _load_styles(pairs: list[str]) -> dict:
    styles = {}
    for pair in pairs or []:
        name, _, path = pair.partition("=")
        if not path:
            raise LatentPaintError(f"--style expects NAME=latent.arc, got {pair!r}")
        styles[name] = load_latent(path)
    return styles


def cmd_edit(args) -> int:
    catalog = UnitCatalog.load(args.catalog)
    z = load_latent(args.z)
    ops_json = json.loads(Path(args.ops).read_text())
    stack = EditStack(z)
    for op_json in ops_json:
        stack.add(EditOp.from_json(op_json))
    z_e = replay(stack, catalog, _load_styles(args.style))
    from .archive import save_archive

    save_archive(args.out, {"kind": "latent", "boundary": 0}, {"z": z_e.values})
    changed = int((z_e.values != z.values).sum())
    print(f"applied {len(stack.ops)} ops; {changed} latent coordinates changed; wrote {args.out}")
    return 0


def cmd_adapt(args) -> int:
    gen = load_checkpoint(args.checkpoint)
    x = load_png(args.image)
    z_e = load_latent(args.z)
    if args.mask:
        mask = (np.asarray((load_png(args.mask) + 1.0) / 2.0).mean(axis=2) > 0.5).astype(np.uint8)
    else:
        mask = np.zeros(x.shape[:2], dtype=np.uint8)
    cfg = AdaptationConfig(reg_weight=args.reg_weight, lr=args.lr, steps=args.steps,
                           seed=args.seed)
    adapted = optimize_adaptation(gen, z_e, x, mask, cfg)
    out_img = adapted.render(z_e)
    save_png(args.out, out_img)
    if args.delta:
        adapted.save(args.delta)
    if args.trace:
        write_trace_csv(args.trace, adapted.trace)
    from .metrics import psnr

    print(f"wrote {args.out}; outside-mask PSNR {psnr(out_img, x, mask):.2f} dB "
          f"({args.steps} steps)")
    return 0


def cmd_eval(args) -> int:
    fixtures = []
    root = Path(args.fixtures)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for fdir in sorted(p for p in root.iterdir() if p.is_dir()):
        source = load_png(fdir / "source.png")
        target = load_png(fdir / "target.png")
        mask = (np.asarray((load_png(fdir / "mask.png") + 1.0) / 2.0).mean(axis=2) > 0.5).astype(np.uint8)
        outputs = {}
        for method in methods:
            if method not in BLEND_METHODS and (fdir / f"{method}.png").exists():
                outputs[method] = load_png(fdir / f"{method}.png")
        fixtures.append(CompositeFixture(fdir.name, source, target, mask, outputs))
    if not fixtures:
        raise LatentPaintError(f"no fixture directories under {root}")
    for method in methods:
        if method not in BLEND_METHODS and any(method not in fx.outputs for fx in fixtures):
            raise LatentPaintError(
                f"method {method!r} is not built in and some fixtures lack {method}.png")
    rows = evaluate(fixtures, methods)
    write_metrics_csv(args.out, rows)
    for row in rows:
        print(f"{row['method']:10s} {row['fixture']:24s} psnr_out={row['psnr_out']:.2f} "
              f"seam={row['seam_energy']:.4f} wall_ms={row['wall_ms']:.1f}")
    print(f"wrote {args.out}")
    return 0


def cmd_serve(args) -> int:   # pragma: no cover - network loop
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentpaint", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", help="train the desk-scale generator on synthetic scenes")
    p.add_argument("--scenes", type=int, default=2400)
    p.add_argument("--dataset-seed", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=2.5e-3)
    p.add_argument("--holdout", type=int, default=64)
    p.add_argument("--min-psnr", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("invert", help="recover the latent code of an image")
    p.add_argument("--image", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--encoder", default=None)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extractor", default=None, help="perceptual extractor archive")
    p.add_argument("--extractor-seed", type=int, default=11)
    p.add_argument("--out", required=True, help="latent archive path")
    p.add_argument("--json", default=None, help="result JSON path (default: next to --out)")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("dissect", help="build the per-class channel catalog")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenes", type=int, default=512)
    p.add_argument("--seed", type=int, default=2000)
    p.add_argument("--quantile", type=float, default=0.99)
    p.add_argument("--iou-floor", type=float, default=0.04)
    p.add_argument("--top-k", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dissect)

    p = sub.add_parser("edit", help="apply an edit-op list to a latent")
    p.add_argument("--z", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--ops", required=True, help="JSON list of edit ops")
    p.add_argument("--style", action="append", help="NAME=latent.arc reference for restyle ops")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("adapt", help="fit the image-specific generator and render")
    p.add_argument("--image", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--z", required=True, help="edited latent archive")
    p.add_argument("--mask", default=None, help="pixel mask PNG (white = edited region)")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--reg-weight", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="rendered PNG")
    p.add_argument("--delta", default=None, help="perturbation archive output")
    p.add_argument("--trace", default=None, help="loss trace CSV output")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="score compositing methods on fixture directories")
    p.add_argument("--fixtures", required=True)
    p.add_argument("--methods", required=True, help="comma list; non-built-ins read <method>.png")
    p.add_argument("--out", required=True, help="metrics CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (LatentPaintError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
