import numpy as np
import pytest

from latentpaint.dissection import ClassUnits, UnitCatalog
from latentpaint.editing import (EditOp, EditStack, apply_edit, channel_mask, decode_mask_rle,
                                 encode_mask_rle, replay, strength_preset, stroke_to_region,
                                 STRENGTH_PRESETS)
from latentpaint.errors import EditError, ShapeMismatchError
from latentpaint.generator import LatentCode

from util import edit_property_failures, make_random_catalog


def catalog_with(indicator, activation, grid=(2, 2)):
    channels = len(indicator)
    units = ClassUnits(np.asarray(indicator, np.uint8),
                       np.asarray(activation, np.float32),
                       np.zeros(channels, np.float32))
    return UnitCatalog({"tree": units}, "ckpt", "cfg", grid, channels)


# -- stroke_to_region ---------------------------------------------------------


def test_empty_stroke_gives_empty_region():
    region = stroke_to_region(np.zeros((64, 64), np.uint8), (4, 4))
    assert region.sum() == 0


def test_single_pixel_any_overlap():
    stroke = np.zeros((64, 64), np.uint8)
    stroke[0, 0] = 1
    region = stroke_to_region(stroke, (4, 4))
    expect = np.zeros((4, 4), np.uint8)
    expect[0, 0] = 1
    assert np.array_equal(region, expect)


def test_diagonal_line_hits_diagonal_cells():
    stroke = np.zeros((64, 64), np.uint8)
    for i in range(64):
        stroke[i, i] = 1
    region = stroke_to_region(stroke, (4, 4))
    assert np.array_equal(region, np.eye(4, dtype=np.uint8))


def test_coverage_fraction_threshold():
    stroke = np.zeros((64, 64), np.uint8)
    stroke[0:4, 0:16] = 1      # covers 1/4 of cell (0,0)
    assert stroke_to_region(stroke, (4, 4))[0, 0] == 1
    assert stroke_to_region(stroke, (4, 4), coverage_fraction=0.5)[0, 0] == 0
    assert stroke_to_region(stroke, (4, 4), coverage_fraction=0.25)[0, 0] == 1


def test_stroke_dims_must_divide():
    with pytest.raises(ShapeMismatchError):
        stroke_to_region(np.zeros((63, 64), np.uint8), (4, 4))


# -- channel_mask --------------------------------------------------------------


def test_channel_mask_zero_region():
    cat = catalog_with([1, 0, 1, 0], [1, 0, 1, 0])
    alpha = channel_mask(cat, "tree", np.zeros((2, 2), np.uint8))
    assert alpha.shape == (2, 2, 4) and alpha.sum() == 0


def test_channel_mask_outer_product():
    cat = catalog_with([1, 0, 1, 0], [1, 0, 1, 0])
    region = np.zeros((2, 2), np.uint8)
    region[1, 0] = 1
    alpha = channel_mask(cat, "tree", region)
    nz = np.argwhere(alpha)
    assert alpha.sum() == 2
    assert {tuple(r) for r in nz} == {(1, 0, 0), (1, 0, 2)}


def test_channel_mask_all_ones():
    cat = catalog_with([1, 1, 1, 1], [1, 1, 1, 1])
    alpha = channel_mask(cat, "tree", np.ones((2, 2), np.uint8))
    assert (alpha == 1).all()


def test_channel_mask_empty_units_rejected():
    cat = catalog_with([0, 0, 0, 0], [0, 0, 0, 0])
    with pytest.raises(EditError, match="no dissected units"):
        channel_mask(cat, "tree", np.ones((2, 2), np.uint8))


# -- apply_edit ---------------------------------------------------------------


def test_apply_edit_blend_formula():
    cat = catalog_with([1, 0], [5.0, 0.0], grid=(1, 1))
    z = LatentCode(np.array([[[3.0, 7.0]]], np.float32))
    op = EditOp(1, "draw", "tree", np.ones((1, 1), np.uint8), 2.0)
    z_e = apply_edit(z, op, cat)
    assert np.array_equal(z_e.values, np.array([[[10.0, 7.0]]], np.float32))


def test_apply_edit_empty_region_identity():
    rng = np.random.default_rng(0)
    cat = make_random_catalog(rng)
    z = LatentCode(rng.standard_normal((4, 4, cat.n_channels)).astype(np.float32))
    op = EditOp(1, "draw", "class0", np.zeros((4, 4), np.uint8), 1.0)
    assert np.array_equal(apply_edit(z, op, cat).values, z.values)


def test_erase_full_grid_all_channels_zeroes_latent():
    cat = catalog_with([1, 1, 1], [0.5, 0.5, 0.5], grid=(2, 2))
    z = LatentCode(np.random.default_rng(0).standard_normal((2, 2, 3)).astype(np.float32))
    op = EditOp(1, "erase", "tree", np.ones((2, 2), np.uint8), 0.0)
    assert (apply_edit(z, op, cat).values == 0).all()


def test_edit_op_validation():
    region = np.ones((2, 2), np.uint8)
    with pytest.raises(EditError):
        EditOp(1, "erase", "tree", region, 1.0).validate()
    with pytest.raises(EditError):
        EditOp(1, "restyle", "tree", region, 1.0).validate()
    with pytest.raises(EditError):
        EditOp(1, "draw", "tree", region, -0.5).validate()
    with pytest.raises(EditError):
        EditOp(1, "sharpen", "tree", region, 1.0).validate()
    EditOp(1, "restyle", "tree", region, 1.0, style_source="ref").validate()


def test_restyle_uses_style_vector():
    cat = catalog_with([1, 0], [9.0, 0.0], grid=(1, 1))
    z = LatentCode(np.array([[[3.0, 7.0]]], np.float32))
    op = EditOp(1, "restyle", "tree", np.ones((1, 1), np.uint8), 1.0, style_source="ref")
    style = np.array([2.5, 0.0], np.float32)
    z_e = apply_edit(z, op, cat, styles={"ref": style})
    assert np.array_equal(z_e.values, np.array([[[2.5, 7.0]]], np.float32))
    with pytest.raises(EditError, match="style source"):
        apply_edit(z, op, cat, styles={})


# -- replay / stack ------------------------------------------------------------


def test_replay_empty_stack_is_base():
    rng = np.random.default_rng(3)
    cat = make_random_catalog(rng)
    z = LatentCode(rng.standard_normal((4, 4, cat.n_channels)).astype(np.float32))
    out = replay(EditStack(z), cat)
    assert np.array_equal(out.values, z.values)


def test_disjoint_ops_commute():
    cat = UnitCatalog({
        "a": ClassUnits(np.array([1, 1, 0, 0], np.uint8),
                        np.array([2.0, -1.0, 0, 0], np.float32), np.zeros(4, np.float32)),
        "b": ClassUnits(np.array([0, 0, 1, 1], np.uint8),
                        np.array([0, 0, 0.5, 3.0], np.float32), np.zeros(4, np.float32)),
    }, "ckpt", "cfg", (2, 2), 4)
    rng = np.random.default_rng(4)
    z = LatentCode(rng.standard_normal((2, 2, 4)).astype(np.float32))
    # same region, disjoint channels; and disjoint regions, same class
    for op1, op2 in [
        (EditOp(1, "draw", "a", np.ones((2, 2), np.uint8), 1.5),
         EditOp(2, "draw", "b", np.ones((2, 2), np.uint8), 0.5)),
        (EditOp(1, "draw", "a", np.array([[1, 0], [0, 0]], np.uint8), 1.0),
         EditOp(2, "erase", "a", np.array([[0, 0], [0, 1]], np.uint8), 0.0)),
    ]:
        fwd = apply_edit(apply_edit(z, op1, cat), op2, cat)
        rev = apply_edit(apply_edit(z, op2, cat), op1, cat)
        assert np.array_equal(fwd.values, rev.values)


def test_duplicate_op_idempotent():
    rng = np.random.default_rng(5)
    cat = make_random_catalog(rng)
    z = LatentCode(rng.standard_normal((4, 4, cat.n_channels)).astype(np.float32))
    region = np.zeros((4, 4), np.uint8)
    region[1:3, 1:3] = 1
    op1 = EditOp(1, "draw", "class1", region, 1.0)
    op2 = EditOp(2, "draw", "class1", region, 1.0)
    once = replay(EditStack(z, [op1]), cat)
    twice = replay(EditStack(z, [op1, op2]), cat)
    assert np.array_equal(once.values, twice.values)


def test_invalid_op_aborts_replay_without_mutation():
    rng = np.random.default_rng(6)
    cat = make_random_catalog(rng)
    z = LatentCode(rng.standard_normal((4, 4, cat.n_channels)).astype(np.float32))
    stack = EditStack(z)
    stack.add(EditOp(1, "draw", "class0", np.ones((4, 4), np.uint8), 1.0))
    replay(stack, cat)
    bad = EditOp(2, "draw", "missing-class", np.ones((4, 4), np.uint8), 1.0)
    stack.ops.append(bad)
    with pytest.raises(Exception):
        replay(stack, cat)
    stack.ops.pop()
    assert len(stack.ops) == 1


def test_later_edit_wins_inside_overlap():
    cat = catalog_with([1, 1], [1.0, 1.0], grid=(1, 1))
    z = LatentCode(np.zeros((1, 1, 2), np.float32))
    op1 = EditOp(1, "draw", "tree", np.ones((1, 1), np.uint8), 2.0)
    op2 = EditOp(2, "draw", "tree", np.ones((1, 1), np.uint8), 0.5)
    out = replay(EditStack(z, [op1, op2]), cat)
    assert np.allclose(out.values, 0.5)


def test_stack_ids_monotonic():
    rng = np.random.default_rng(7)
    cat = make_random_catalog(rng)
    z = LatentCode(np.zeros((4, 4, cat.n_channels), np.float32))
    stack = EditStack(z)
    stack.add(EditOp(3, "draw", "class0", np.zeros((4, 4), np.uint8), 1.0))
    with pytest.raises(EditError):
        stack.add(EditOp(2, "draw", "class0", np.zeros((4, 4), np.uint8), 1.0))
    with pytest.raises(EditError):
        stack.remove(99)


# -- strength presets ------------------------------------------------------------


def test_strength_presets():
    assert STRENGTH_PRESETS == {"low": 0.5, "med": 1.0, "high": 2.0}
    assert strength_preset("med", "draw") == 1.0
    assert strength_preset("high", "draw") == 2.0
    assert strength_preset("low", "restyle") == 0.5
    for level in ("low", "med", "high"):
        assert strength_preset(level, "erase") == 0.0
    with pytest.raises(EditError):
        strength_preset("extreme", "draw")


# -- RLE wire format ----------------------------------------------------------------


def test_rle_roundtrip_random(rng):
    for _ in range(50):
        h, w = int(rng.integers(1, 20)), int(rng.integers(1, 20))
        mask = (rng.random((h, w)) < 0.4).astype(np.uint8)
        assert np.array_equal(decode_mask_rle(encode_mask_rle(mask)), mask)


def test_rle_rejects_bad_runs():
    with pytest.raises(EditError):
        decode_mask_rle({"height": 1, "width": 4, "rows": [[0]]})
    with pytest.raises(EditError):
        decode_mask_rle({"height": 1, "width": 4, "rows": [[2, 5]]})
    with pytest.raises(EditError):
        decode_mask_rle({"height": 2, "width": 4, "rows": [[0, 1]]})


def test_edit_op_json_roundtrip():
    region = np.array([[1, 0], [1, 1]], np.uint8)
    op = EditOp(4, "restyle", "tree", region, 1.5, style_source="ref9")
    back = EditOp.from_json(op.to_json())
    assert back.op_id == 4 and back.mode == "restyle" and back.class_id == "tree"
    assert back.strength == 1.5 and back.style_source == "ref9"
    assert np.array_equal(back.region, region)


# -- randomized property suite (small smoke; the acceptance suite runs 1000) -----


def test_edit_algebra_properties_smoke():
    fails = edit_property_failures(seed=2024, cases=60)
    assert all(v == 0 for v in fails.values()), fails
