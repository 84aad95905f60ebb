import numpy as np
import pytest

from latentpaint import scenes
from latentpaint.dissection import (ClassUnits, UnitCatalog, class_activation_vector,
                                    iou_scores, reference_style_vector, select_channels)
from latentpaint.errors import CatalogError
from latentpaint.generator import LatentCode


def test_planted_channel_equal_to_mask_scores_one():
    rng = np.random.default_rng(0)
    mask = np.zeros((4, 4), bool)
    mask[1:3, 1:3] = True
    latents = np.zeros((3, 4, 4, 2))
    latents[:, :, :, 0] = mask.astype(float)          # planted: activation equals the mask
    latents[:, :, :, 1] = rng.random((3, 4, 4)) * 0.01
    scores = iou_scores(latents, np.repeat(mask[None], 3, axis=0), threshold_quantile=0.99)
    assert scores[0] == pytest.approx(1.0)


def test_constructed_partial_overlap_is_one_third():
    # activation on 4 cells, mask on 4 cells, 2 shared -> IoU = 2/6
    act = np.zeros((1, 4, 4, 1))
    act[0, 0, 0, 0] = act[0, 0, 1, 0] = act[0, 1, 0, 0] = act[0, 1, 1, 0] = 1.0
    mask = np.zeros((1, 4, 4), bool)
    mask[0, 1, 1] = mask[0, 1, 0] = mask[0, 2, 2] = mask[0, 2, 3] = True
    scores = iou_scores(act, mask, threshold_quantile=0.5)
    assert scores[0] == pytest.approx(2.0 / 6.0)


def test_all_zero_channel_scores_zero():
    mask = np.zeros((2, 4, 4), bool)
    mask[:, 0, :] = True
    latents = np.zeros((2, 4, 4, 3))
    scores = iou_scores(latents, mask, threshold_quantile=0.99)
    assert (scores == 0).all()


def test_upsampled_activation_matches_pixel_mask():
    lat = np.zeros((1, 2, 2, 1))
    lat[0, 0, 0, 0] = 1.0
    mask = np.zeros((1, 4, 4), bool)
    mask[0, 0:2, 0:2] = True
    scores = iou_scores(lat, mask, threshold_quantile=0.5, upsample=2)
    assert scores[0] == pytest.approx(1.0)


def test_class_absent_everywhere_raises():
    from latentpaint.dissection import channel_iou
    from latentpaint.generator import TOY_SPLIT, init_generator, toy_layer_specs

    gen = init_generator(toy_layer_specs(), TOY_SPLIT, seed=0)
    samples = scenes.make_synthetic_dataset(50, 3)
    for s in samples:
        s.segmentation = np.zeros_like(s.segmentation)   # force everything to sky
    with pytest.raises(CatalogError, match="door"):
        channel_iou(gen, samples, "door")


def test_select_channels_floor_and_cap():
    scores = np.array([0.5, 0.01, 0.3, 0.2, 0.45, 0.05])
    ind = select_channels(scores, iou_floor=0.04, top_k=3)
    assert np.array_equal(np.flatnonzero(ind), [0, 2, 4])
    ind = select_channels(scores, iou_floor=0.6, top_k=3)
    assert ind.sum() == 0


def test_activation_vector_single_image_is_masked_mean():
    sample = scenes.scene_sample(12)
    cid = scenes.CLASS_IDS["sky"]
    indicator = np.zeros(scenes.LATENT_CHANNELS, np.uint8)
    indicator[[0, 7]] = 1
    vec = class_activation_vector([sample], "sky", indicator)
    cov = scenes.class_coverage(sample.segmentation)[:, :, cid]
    want = (sample.latent.astype(np.float64) * cov[:, :, None]).sum(axis=(0, 1)) / cov.sum()
    assert vec[0] == pytest.approx(want[0], rel=1e-6)
    assert vec[7] == pytest.approx(want[7], rel=1e-6)
    assert vec[1] == 0


def units_catalog(indicator, channels=3):
    units = ClassUnits(np.asarray(indicator, np.uint8),
                       np.zeros(channels, np.float32), np.zeros(channels, np.float32))
    return UnitCatalog({"tree": units}, "ckpt", "cfg", (1, 3), channels)


def test_style_vector_mean_of_positive_activations():
    cat = units_catalog([1, 0, 0])
    z = LatentCode(np.array([[[-1.0, 9, 9], [2.0, 9, 9], [4.0, 9, 9]]], np.float32))
    vec = reference_style_vector(z, cat, "tree")
    assert vec[0] == pytest.approx(3.0)      # mean of {2, 4}
    assert vec[1] == 0 and vec[2] == 0


def test_style_vector_no_positive_activations():
    cat = units_catalog([1, 0, 0])
    z = LatentCode(np.array([[[-1.0, 1, 1], [-2.0, 1, 1], [0.0, 1, 1]]], np.float32))
    assert reference_style_vector(z, cat, "tree")[0] == 0.0


def test_style_vector_ignores_unselected_channels():
    cat = units_catalog([1, 0, 0])
    z1 = np.array([[[1.0, 5.0, -2.0], [3.0, 5.0, -2.0], [1.0, 5.0, -2.0]]], np.float32)
    z2 = z1.copy()
    z2[:, :, 1] *= 7.0     # positive rescale of a non-selected channel
    z2[:, :, 2] *= 3.0
    v1 = reference_style_vector(LatentCode(z1), cat, "tree")
    v2 = reference_style_vector(LatentCode(z2), cat, "tree")
    assert np.array_equal(v1, v2)


def test_style_vector_unknown_class():
    cat = units_catalog([1, 0, 0])
    with pytest.raises(CatalogError):
        reference_style_vector(LatentCode(np.zeros((1, 3, 3), np.float32)), cat, "lamp")


def test_catalog_roundtrip_exact(tmp_path, rng):
    classes = {}
    for name in ("sky", "tree"):
        classes[name] = ClassUnits((rng.random(8) < 0.5).astype(np.uint8),
                                   rng.standard_normal(8).astype(np.float32),
                                   rng.random(8).astype(np.float32))
    cat = UnitCatalog(classes, "ckpt123", "cfg456", (4, 4), 8)
    cat.save(tmp_path / "c.arc")
    back = UnitCatalog.load(tmp_path / "c.arc")
    assert back.checkpoint_id == "ckpt123" and back.config_digest == "cfg456"
    assert back.grid == (4, 4) and back.n_channels == 8
    for name in classes:
        assert np.array_equal(back.classes[name].channels, classes[name].channels)
        assert np.array_equal(back.classes[name].activation, classes[name].activation)
        assert np.array_equal(back.classes[name].iou, classes[name].iou)
