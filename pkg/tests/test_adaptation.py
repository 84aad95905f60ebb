import numpy as np
import pytest

from latentpaint.adaptation import (AdaptationCancelled, AdaptationConfig, AdaptedGenerator,
                                    PerturbationSet, WeightAdaptedGenerator,
                                    fit_preview_generator, match_loss, match_loss_grad,
                                    optimize_adaptation, reg_loss, render, write_trace_csv)
from latentpaint.errors import ShapeMismatchError
from latentpaint.generator import run_stack
from latentpaint.perceptual import PerceptualExtractor

from util import micro_generator


def micro3(seed=1, dtype=np.float64):
    # 3 layers, split 1: two fine layers carry gains (the final layer never does)
    return micro_generator(seed=seed, chans=(5, 4, 4, 3), ups=(1, 2, 1), grid=(3, 3),
                           split=1, dtype=dtype)


# -- match loss ---------------------------------------------------------------


def test_match_loss_fully_masked_is_zero(rng):
    out = rng.standard_normal((4, 4, 3))
    x = rng.standard_normal((4, 4, 3))
    assert match_loss(out, x, np.ones((4, 4))) == 0.0


def test_match_loss_elementwise_arithmetic():
    out = np.zeros((1, 2, 3))
    x = np.zeros((1, 2, 3))
    out[0, 0] = 0.2
    out[0, 1] = 0.8
    x[0, 1] = 0.8
    mask = np.array([[0, 1]])
    assert match_loss(out, x, mask) == pytest.approx(0.2)


def test_match_loss_zero_on_exact_match(rng):
    x = rng.standard_normal((4, 4, 3))
    assert match_loss(x.copy(), x, np.zeros((4, 4))) == 0.0


def test_match_loss_shape_checks(rng):
    with pytest.raises(ShapeMismatchError):
        match_loss(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)), np.zeros((4, 4)))
    with pytest.raises(ShapeMismatchError):
        match_loss(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), np.zeros((5, 4)))


def test_match_loss_invariant_to_masked_pixels(rng):
    x = rng.standard_normal((6, 6, 3))
    out = rng.standard_normal((6, 6, 3))
    mask = np.zeros((6, 6))
    mask[2:5, 1:4] = 1
    base = match_loss(out, x, mask)
    wild = out.copy()
    wild[mask == 1] = rng.standard_normal(wild[mask == 1].shape) * 100
    assert match_loss(wild, x, mask) == base
    g = match_loss_grad(out, x, mask)
    assert (g[mask == 1] == 0).all()


# -- reg loss ---------------------------------------------------------------------


def test_reg_loss_zero_and_sum_of_squares():
    pert = PerturbationSet({2: np.zeros((2, 2, 3), np.float32)})
    assert reg_loss(pert) == 0.0
    pert = PerturbationSet({2: np.array([1.0, -2.0], np.float32)})
    assert reg_loss(pert) == pytest.approx(5.0)


def test_reg_loss_quadratic_homogeneity(rng):
    deltas = {2: rng.standard_normal((2, 3)).astype(np.float32),
              3: rng.standard_normal((4, 2)).astype(np.float32)}
    one = reg_loss(PerturbationSet(deltas))
    doubled = reg_loss(PerturbationSet({i: 2 * d for i, d in deltas.items()}))
    assert doubled == pytest.approx(4 * one, rel=1e-6)


# -- adapted generator mechanics ------------------------------------------------------


def test_zero_step_budget_is_identity():
    gen = micro3(dtype=np.float32)
    rng = np.random.default_rng(0)
    z = rng.standard_normal(gen.input_shape).astype(np.float32)
    x = rng.standard_normal(gen.output_shape).astype(np.float32)
    cfg = AdaptationConfig(steps=0, reg_weight=0.1)
    adapted = optimize_adaptation(gen, z, x, np.zeros(gen.output_shape[:2]), cfg)
    assert np.abs(adapted.render(z) - gen.forward(z)).max() <= 1e-6
    assert all((d == 0).all() for d in adapted.perturbations.deltas.values())


def test_perturbation_layer_range_excludes_final_layer():
    gen = micro3()
    pert = PerturbationSet.zeros(gen)
    assert pert.layer_indices() == [2]     # layers h+1..n-1 for h=1, n=3
    gen6 = micro_generator(seed=2, chans=(6, 5, 4, 4, 3), ups=(1, 2, 2, 1), grid=(2, 2),
                           split=1, dtype=np.float32)
    assert PerturbationSet.zeros(gen6).layer_indices() == [2, 3]
    for i, d in PerturbationSet.zeros(gen6).deltas.items():
        assert d.shape == gen6.boundary_shape(i)


def test_gradients_match_finite_differences():
    # L = L_match + reg_weight * L_reg on a 3-layer generator, 8 probed coords
    gen = micro3(seed=5)
    rng = np.random.default_rng(9)
    z = rng.standard_normal((1,) + gen.input_shape)
    x = rng.standard_normal(gen.output_shape) * 0.4
    mask = np.zeros(gen.output_shape[:2])
    mask[0:2, 0:3] = 1
    reg_weight = 0.1
    pert = PerturbationSet({2: rng.standard_normal(gen.boundary_shape(2)) * 0.1})
    z_h = run_stack(gen, z, 0, gen.split)

    def total(deltas):
        y = run_stack(gen, z_h, start=gen.split, gains=deltas)
        return match_loss(y[0], x, mask) + reg_weight * reg_loss(PerturbationSet(deltas))

    from latentpaint.generator import backprop_stack

    y, caches = run_stack(gen, z_h, start=gen.split, gains=pert.deltas, capture=True)
    gy = match_loss_grad(y[0], x, mask)[None]
    _, _, ggains = backprop_stack(gen, caches, gy, start=gen.split, gains=pert.deltas,
                                  need_gain_grads=True)
    analytic = ggains[2] + 2 * reg_weight * pert.deltas[2]
    eps = 1e-6
    rel = []
    for _ in range(8):
        idx = tuple(rng.integers(0, s) for s in analytic.shape)
        dp = {2: pert.deltas[2].copy()}
        dp[2][idx] += eps
        dm = {2: pert.deltas[2].copy()}
        dm[2][idx] -= eps
        fd = (total(dp) - total(dm)) / (2 * eps)
        rel.append(abs(fd - analytic[idx]) / max(abs(fd), 1e-12))
    assert max(rel) <= 1e-3


def test_optimize_reduces_loss_and_freezes_base():
    import hashlib

    gen = micro3(seed=6, dtype=np.float32)
    rng = np.random.default_rng(1)
    z = rng.standard_normal(gen.input_shape).astype(np.float32)
    x = np.tanh(rng.standard_normal(gen.output_shape)).astype(np.float32)
    mask = np.zeros(gen.output_shape[:2])
    mask[0:2, 0:2] = 1

    def weights_digest():
        h = hashlib.sha256()
        for w, b in gen.weights:
            h.update(w.tobytes())
            h.update(b.tobytes())
        return h.hexdigest()

    before = weights_digest()
    cfg = AdaptationConfig(steps=60, lr=0.05, reg_weight=1e-4)
    adapted = optimize_adaptation(gen, z, x, mask, cfg)
    assert weights_digest() == before
    assert adapted.trace[-1]["best"] <= adapted.trace[0]["total"]
    assert adapted.trace[-1]["best"] < adapted.trace[0]["total"]
    best_series = [row["best"] for row in adapted.trace]
    assert (np.diff(best_series) <= 1e-15).all()


def test_monotone_budget_and_snapshots():
    gen = micro3(seed=7, dtype=np.float32)
    rng = np.random.default_rng(2)
    z = rng.standard_normal(gen.input_shape).astype(np.float32)
    x = np.tanh(rng.standard_normal(gen.output_shape)).astype(np.float32)
    mask = np.zeros(gen.output_shape[:2])
    cfg = AdaptationConfig(steps=120, lr=0.05, reg_weight=1e-4)
    long_run = optimize_adaptation(gen, z, x, mask, cfg, snapshot_at=(30,))
    short_run = optimize_adaptation(
        gen, z, x, mask, AdaptationConfig(steps=30, lr=0.05, reg_weight=1e-4))
    assert long_run.trace[-1]["best"] <= short_run.trace[-1]["best"] + 1e-15
    snap = long_run.snapshots[30]
    for i in snap.layer_indices():
        assert np.array_equal(snap.deltas[i], short_run.perturbations.deltas[i])


def test_additive_gain_mode():
    gen = micro3(seed=8, dtype=np.float32)
    rng = np.random.default_rng(3)
    z = rng.standard_normal(gen.input_shape).astype(np.float32)
    x = np.tanh(rng.standard_normal(gen.output_shape)).astype(np.float32)
    cfg = AdaptationConfig(steps=40, lr=0.05, reg_weight=1e-4, gain_mode="additive")
    adapted = optimize_adaptation(gen, z, x, np.zeros(gen.output_shape[:2]), cfg)
    assert adapted.gain_mode == "additive"
    assert adapted.trace[-1]["best"] < adapted.trace[0]["total"]
    with pytest.raises(ValueError):
        AdaptationConfig(gain_mode="fancy")


def test_random_init_variant():
    gen = micro3(seed=9, dtype=np.float32)
    rng = np.random.default_rng(4)
    z = rng.standard_normal(gen.input_shape).astype(np.float32)
    x = gen.forward(z)
    cfg = AdaptationConfig(steps=0, random_init=True, init_scale=0.05, seed=3)
    adapted = optimize_adaptation(gen, z, x, np.zeros(gen.output_shape[:2]), cfg)
    assert any((d != 0).any() for d in adapted.perturbations.deltas.values())
    rerun = optimize_adaptation(gen, z, x, np.zeros(gen.output_shape[:2]), cfg)
    for i in adapted.perturbations.layer_indices():
        assert np.array_equal(adapted.perturbations.deltas[i], rerun.perturbations.deltas[i])


def test_cancellation_between_steps():
    gen = micro3(seed=10, dtype=np.float32)
    rng = np.random.default_rng(5)
    z = rng.standard_normal(gen.input_shape).astype(np.float32)
    x = np.tanh(rng.standard_normal(gen.output_shape)).astype(np.float32)
    calls = {"n": 0}

    def cancel_after_three():
        calls["n"] += 1
        return calls["n"] > 3

    with pytest.raises(AdaptationCancelled):
        optimize_adaptation(gen, z, x, np.zeros(gen.output_shape[:2]),
                            AdaptationConfig(steps=50, reg_weight=1e-4),
                            should_cancel=cancel_after_three)


def test_nonfinite_loss_reports_step():
    from latentpaint.errors import OptimizationError

    gen = micro3(seed=11, dtype=np.float32)
    z = np.zeros(gen.input_shape, np.float32)
    x = np.full(gen.output_shape, np.nan, np.float32)
    with pytest.raises(OptimizationError, match="step 0"):
        optimize_adaptation(gen, z, x, np.zeros(gen.output_shape[:2]),
                            AdaptationConfig(steps=5, reg_weight=1e-4))


def test_adapted_persistence_roundtrip(tmp_path):
    gen = micro3(seed=12, dtype=np.float32)
    rng = np.random.default_rng(6)
    deltas = {2: rng.standard_normal(gen.boundary_shape(2)).astype(np.float32) * 0.1}
    adapted = AdaptedGenerator(gen, PerturbationSet(deltas, seed=4), {"steps": 7})
    adapted.save(tmp_path / "a.arc")
    back = AdaptedGenerator.load(tmp_path / "a.arc", gen)
    assert np.array_equal(back.perturbations.deltas[2], deltas[2])
    assert back.binding == {"steps": 7}
    z = rng.standard_normal(gen.input_shape).astype(np.float32)
    assert np.array_equal(back.render(z), adapted.render(z))

    other = micro3(seed=99, dtype=np.float32)
    from latentpaint.archive import ArchiveFormatError

    with pytest.raises(ArchiveFormatError, match="bound to checkpoint"):
        AdaptedGenerator.load(tmp_path / "a.arc", other)


def test_trace_csv(tmp_path):
    rows = [{"step": 0, "match": 1.0, "reg": 0.0, "total": 1.0, "best": 1.0}]
    write_trace_csv(tmp_path / "t.csv", rows)
    text = (tmp_path / "t.csv").read_text().splitlines()
    assert text[0] == "step,match,reg,total,best"
    assert text[1].startswith("0,1.0")


# -- preview generator ------------------------------------------------------------


def test_preview_zero_steps_equals_base():
    gen = micro3(seed=13, dtype=np.float32)
    rng = np.random.default_rng(7)
    z = rng.standard_normal(gen.input_shape).astype(np.float32)
    x = np.tanh(rng.standard_normal(gen.output_shape)).astype(np.float32)
    preview = fit_preview_generator(gen, z, x, AdaptationConfig(preview_steps=0, reg_weight=0.1))
    z_e = rng.standard_normal(gen.input_shape).astype(np.float32)
    assert np.array_equal(preview.render(z_e), gen.forward(z_e))


def test_preview_fit_improves_reconstruction_and_keeps_base():
    gen = micro3(seed=14, dtype=np.float32)
    rng = np.random.default_rng(8)
    z = rng.standard_normal(gen.input_shape).astype(np.float32)
    x = np.tanh(rng.standard_normal(gen.output_shape) * 0.5).astype(np.float32)
    before_w = [w.copy() for w, _ in gen.weights]
    preview = fit_preview_generator(gen, z, x,
                                    AdaptationConfig(preview_steps=80, preview_lr=5e-3,
                                                     reg_weight=0.1))
    for (w, _), w0 in zip(gen.weights, before_w):
        assert np.array_equal(w, w0)
    err_before = np.abs(gen.forward(z) - x).mean()
    err_after = np.abs(preview.render(z) - x).mean()
    assert err_after < err_before
    # only fine layers may differ from the base
    assert set(preview.fine_weights) == {2, 3}


def test_preview_persistence_roundtrip(tmp_path):
    gen = micro3(seed=15, dtype=np.float32)
    rng = np.random.default_rng(9)
    z = rng.standard_normal(gen.input_shape).astype(np.float32)
    x = np.tanh(rng.standard_normal(gen.output_shape)).astype(np.float32)
    preview = fit_preview_generator(gen, z, x,
                                    AdaptationConfig(preview_steps=5, preview_lr=5e-3,
                                                     reg_weight=0.1))
    preview.save(tmp_path / "p.ckpt")
    back = WeightAdaptedGenerator.load(tmp_path / "p.ckpt", gen)
    assert np.array_equal(back.render(z), preview.render(z))


def test_render_dispatch():
    gen = micro3(seed=16, dtype=np.float32)
    rng = np.random.default_rng(10)
    z = rng.standard_normal(gen.input_shape).astype(np.float32)
    assert np.array_equal(render(gen, z), gen.forward(z))
    pert = PerturbationSet.zeros(gen)
    assert np.array_equal(render(AdaptedGenerator(gen, pert), z), gen.forward(z))
