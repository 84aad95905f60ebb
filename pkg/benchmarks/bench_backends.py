"""Benchmark the numba kernels against the pure-numpy fallback.

Times the convolution passes at the toy generator's layer shapes, one full
adaptation step (forward + gain gradients over the fine layers), and the
Poisson stencil. Run from the repo root:

    python3 benchmarks/bench_backends.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from latentpaint import backend, scenes  # noqa: E402
from latentpaint.adaptation import PerturbationSet, match_loss_grad  # noqa: E402
from latentpaint.generator import (TOY_SPLIT, backprop_stack, init_generator, run_stack,  # noqa: E402
                                   toy_layer_specs)


def timeit(fn, repeat: int) -> float:
    fn()  # warmup (and numba compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times) * 1e3


def conv_cases(rng):
    # (name, x, w) at the toy generator's fine-layer shapes
    cases = []
    for name, (h, w, ci, co) in [
        ("conv 8x8x64->48", (8, 8, 64, 48)),
        ("conv 16x16x48->32", (16, 16, 48, 32)),
        ("conv 32x32x32->24", (32, 32, 32, 24)),
        ("conv 64x64x24->16", (64, 64, 24, 16)),
    ]:
        x = rng.standard_normal((1, h, w, ci)).astype(np.float32)
        wt = rng.standard_normal((3, 3, ci, co)).astype(np.float32)
        b = np.zeros(co, dtype=np.float32)
        cases.append((name, x, wt, b))
    return cases


def bench(repeat: int) -> None:
    rng = np.random.default_rng(0)
    gen = init_generator(toy_layer_specs(), TOY_SPLIT, seed=0, dead_input_channels=scenes.RESERVED)
    z = scenes.sample_latent(1)[None]
    x_img = scenes.scene_sample(1).image
    mask = np.zeros((64, 64), np.uint8)
    pert = PerturbationSet.zeros(gen)
    z_h = run_stack(gen, z, 0, gen.split)

    def adaptation_step():
        y, caches = run_stack(gen, z_h, start=gen.split, gains=pert.deltas, capture=True)
        gy = match_loss_grad(y[0], x_img, mask)[None]
        backprop_stack(gen, caches, gy, start=gen.split, gains=pert.deltas, need_gain_grads=True)

    nbr = rng.integers(-1, 4000, size=(4000, 4)).astype(np.int64)
    vec = rng.standard_normal(4000)

    rows = []
    for name in ("numpy", "numba"):
        backend.set_backend(name)
        for case_name, cx, cw, cb in conv_cases(rng):
            fwd = timeit(lambda: backend.conv2d(cx, cw, cb), repeat)
            gy = backend.conv2d(cx, cw, cb)
            bwd_i = timeit(lambda: backend.conv2d_grad_input(gy, cw, cx.shape[1], cx.shape[2]), repeat)
            bwd_w = timeit(lambda: backend.conv2d_grad_weights(cx, gy, 3, 3), repeat)
            rows.append((name, case_name, fwd, bwd_i, bwd_w))
        step_ms = timeit(adaptation_step, repeat)
        lap_ms = timeit(lambda: backend.masked_laplacian(vec, nbr), repeat)
        rows.append((name, "adaptation step (fine stack)", step_ms, float("nan"), float("nan")))
        rows.append((name, "poisson stencil 4000 px", lap_ms, float("nan"), float("nan")))

    print(f"{'backend':8s} {'case':30s} {'fwd ms':>9s} {'grad_in ms':>11s} {'grad_w ms':>10s}")
    for name, case_name, fwd, bwd_i, bwd_w in rows:
        cols = "".join(f"{v:>11.3f}" if v == v else f"{'-':>11s}" for v in (bwd_i, bwd_w))
        print(f"{name:8s} {case_name:30s} {fwd:>9.3f}{cols}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    bench(args.repeat)


if __name__ == "__main__":
    main()
