"""Shared test helpers: micro generators and independent solver oracles."""

from __future__ import annotations

import numpy as np

from latentpaint.generator import LayeredGenerator, LayerSpec


def micro_generator(seed: int = 1, chans=(5, 4, 3), ups=(1, 2), grid=(4, 4),
                    split: int = 1, final_tanh: bool = True, dtype=np.float64,
                    scale: float = 0.4) -> LayeredGenerator:
    """Small random generator for oracle tests; float64 by default so
    finite-difference checks are not fp32-noise limited."""
    rng = np.random.default_rng(seed)
    specs, weights = [], []
    for i in range(len(chans) - 1):
        nonlin = "tanh" if (final_tanh and i == len(chans) - 2) else "lrelu"
        specs.append(LayerSpec(ups[i], (3, 3), chans[i], chans[i + 1], nonlin))
        w = (rng.standard_normal((3, 3, chans[i], chans[i + 1])) * scale).astype(dtype)
        b = (rng.standard_normal(chans[i + 1]) * 0.05).astype(dtype)
        weights.append((w, b))
    return LayeredGenerator(specs, split, weights, grid)


def make_random_catalog(rng, grid=(4, 4), channels=8, n_classes=3):
    """Random unit catalog for edit-algebra property tests."""
    from latentpaint.dissection import ClassUnits, UnitCatalog

    classes = {}
    for k in range(n_classes):
        ind = (rng.random(channels) < 0.4).astype(np.uint8)
        if not ind.any():
            ind[int(rng.integers(channels))] = 1
        act = (rng.standard_normal(channels) * ind).astype(np.float32)
        iou = np.abs(rng.standard_normal(channels)).astype(np.float32)
        classes[f"class{k}"] = ClassUnits(ind, act, iou)
    return UnitCatalog(classes, "ckpt-test", "cfg-test", grid, channels)


def random_edit_op(rng, catalog, op_id: int, empty_region_ok: bool = True):
    from latentpaint.editing import EditOp

    mode = "erase" if rng.random() < 0.4 else "draw"
    region = (rng.random(catalog.grid) < 0.35).astype(np.uint8)
    if not empty_region_ok and not region.any():
        region[tuple(rng.integers(0, g) for g in catalog.grid)] = 1
    class_id = f"class{int(rng.integers(len(catalog.classes)))}"
    strength = 0.0 if mode == "erase" else float(rng.uniform(0.0, 2.0))
    return EditOp(op_id, mode, class_id, region, strength)


def edit_property_failures(seed: int, cases: int) -> dict[str, int]:
    """Run the randomized edit-algebra property suite; returns failure counts."""
    from latentpaint.editing import EditOp, EditStack, apply_edit, channel_mask, replay
    from latentpaint.generator import LatentCode

    rng = np.random.default_rng(seed)
    fails = {"identity": 0, "idempotence": 0, "locality": 0, "determinism": 0, "removal": 0}
    for _ in range(cases):
        catalog = make_random_catalog(rng)
        gh, gw = catalog.grid
        z = LatentCode(rng.standard_normal((gh, gw, catalog.n_channels)).astype(np.float32))
        op = random_edit_op(rng, catalog, 1)

        empty = EditOp(1, op.mode, op.class_id, np.zeros(catalog.grid, np.uint8), op.strength)
        if not np.array_equal(apply_edit(z, empty, catalog).values, z.values):
            fails["identity"] += 1

        once = apply_edit(z, op, catalog)
        twice = apply_edit(once, op, catalog)
        if not np.array_equal(once.values, twice.values):
            fails["idempotence"] += 1

        alpha = channel_mask(catalog, op.class_id, op.region)
        changed = once.values != z.values
        if changed[alpha == 0].any():
            fails["locality"] += 1

        stack = EditStack(z)
        for i in range(3):
            stack.add(random_edit_op(rng, catalog, i + 1))
        a = replay(stack, catalog)
        b = replay(EditStack(z, list(stack.ops)), catalog)
        if not (np.array_equal(a.values, b.values)):
            fails["determinism"] += 1

        removed = EditStack(z, list(stack.ops))
        removed.remove(2)
        survivors = EditStack(z, [stack.ops[0], stack.ops[2]])
        if not np.array_equal(replay(removed, catalog).values, replay(survivors, catalog).values):
            fails["removal"] += 1
    return fails


def dense_poisson_solve(source: np.ndarray, target: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Direct dense solve of the Poisson compositing system (test oracle)."""
    from latentpaint.compositing import _interior, _OFFSETS

    inner = _interior(mask)
    ys, xs = np.nonzero(inner)
    n = ys.size
    out = target.astype(np.float64).copy()
    if n == 0:
        return out
    index = -np.ones(mask.shape, dtype=np.int64)
    index[ys, xs] = np.arange(n)
    a = np.zeros((n, n))
    for i in range(n):
        a[i, i] = 4.0
        for dy, dx in _OFFSETS:
            j = index[ys[i] + dy, xs[i] + dx]
            if j >= 0:
                a[i, j] = -1.0
    src = source.astype(np.float64)
    for ch in range(source.shape[2]):
        s = src[:, :, ch]
        t = out[:, :, ch]
        b = 4.0 * s[ys, xs]
        for dy, dx in _OFFSETS:
            b -= s[ys + dy, xs + dx]
            off_interior = index[ys + dy, xs + dx] < 0
            b[off_interior] += t[ys[off_interior] + dy, xs[off_interior] + dx]
        out[ys, xs, ch] = np.linalg.solve(a, b)
    return out
