"""Channel dissection: which latent channels localize which object class.

For every channel we binarize its activation grid at a high per-channel
quantile (positive activations only), upsample nearest to image resolution,
and score spatial agreement with the class segmentation mask by IoU,
averaged over images containing the class. The catalog stores, per class,
the selected channel indicator, per-channel IoU scores, and the class
activation vector used as replacement content when drawing.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .archive import load_archive, save_archive
from .errors import ArchiveFormatError, CatalogError
from .generator import LayeredGenerator
from .scenes import CLASSES, CLASS_IDS, SceneSample, class_coverage

DEFAULT_QUANTILE = 0.99
DEFAULT_IOU_FLOOR = 0.04
DEFAULT_TOP_K = 16

CATALOG_KIND = "catalog"


def iou_scores(latents: np.ndarray, class_masks: np.ndarray,
               threshold_quantile: float = DEFAULT_QUANTILE, upsample: int = 1) -> np.ndarray:
    """Per-channel IoU between thresholded activations and class masks.

    ``latents``: (N, h, w, C); ``class_masks``: (N, h*upsample, w*upsample)
    booleans. Thresholds are per-channel quantiles pooled over the whole
    sample; only strictly positive activations count as active. Images where
    the class is absent are skipped; IoU is the mean over the rest.
    """
    lat = np.asarray(latents, dtype=np.float64)
    masks = np.asarray(class_masks, dtype=bool)
    n, h, w, c = lat.shape
    thresholds = np.quantile(lat.reshape(-1, c), threshold_quantile, axis=0)
    active = (lat >= thresholds) & (lat > 0)
    if upsample > 1:
        active = np.repeat(np.repeat(active, upsample, axis=1), upsample, axis=2)
    scores = np.zeros(c, dtype=np.float64)
    present = masks.reshape(n, -1).any(axis=1)
    if not present.any():
        return scores
    act = active[present]
    msk = masks[present][..., None]
    inter = (act & msk).sum(axis=(1, 2), dtype=np.float64)
    union = (act | msk).sum(axis=(1, 2), dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_image = np.where(union > 0, inter / union, 0.0)
    return per_image.mean(axis=0)


def channel_iou(gen: LayeredGenerator, samples: list[SceneSample], class_id: str,
                threshold_quantile: float = DEFAULT_QUANTILE) -> np.ndarray:
    """IoU scores of every latent channel against ``class_id`` over the samples."""
    if class_id not in CLASS_IDS:
        raise CatalogError(f"unknown class {class_id!r}; expected one of {CLASSES}")
    cid = CLASS_IDS[class_id]
    masks = np.stack([s.segmentation == cid for s in samples])
    if not masks.any():
        raise CatalogError(f"class {class_id!r} absent from every segmentation in the sample")
    latents = np.stack([s.latent for s in samples])
    upsample = gen.output_shape[0] // gen.input_shape[0]
    return iou_scores(latents, masks, threshold_quantile, upsample)


@dataclass
class ClassUnits:
    channels: np.ndarray      # (C,) uint8 indicator
    activation: np.ndarray    # (C,) float32, zero off the selected channels
    iou: np.ndarray           # (C,) float32


@dataclass
class UnitCatalog:
    classes: dict[str, ClassUnits]
    checkpoint_id: str
    config_digest: str
    grid: tuple[int, int]
    n_channels: int

    def class_names(self) -> list[str]:
        return list(self.classes)

    def units(self, class_id: str) -> ClassUnits:
        if class_id not in self.classes:
            raise CatalogError(f"class {class_id!r} not in catalog ({sorted(self.classes)})")
        return self.classes[class_id]

    def check_compatible(self, gen: LayeredGenerator) -> None:
        if gen.checkpoint_id != self.checkpoint_id:
            raise CatalogError(
                f"catalog bound to checkpoint {self.checkpoint_id}, generator is {gen.checkpoint_id}")

    def save(self, path) -> None:
        manifest = {
            "kind": CATALOG_KIND,
            "checkpoint_id": self.checkpoint_id,
            "config_digest": self.config_digest,
            "grid": list(self.grid),
            "n_channels": self.n_channels,
            "classes": sorted(self.classes),
        }
        arrays = {}
        for name, units in self.classes.items():
            arrays[f"{name}.channels"] = units.channels.astype(np.uint8)
            arrays[f"{name}.activation"] = units.activation.astype(np.float32)
            arrays[f"{name}.iou"] = units.iou.astype(np.float32)
        save_archive(path, manifest, arrays)

    @classmethod
    def load(cls, path) -> "UnitCatalog":
        manifest, arrays = load_archive(path)
        if manifest.get("kind") != CATALOG_KIND:
            raise ArchiveFormatError(f"{path}: not a catalog archive")
        classes = {}
        for name in manifest["classes"]:
            classes[name] = ClassUnits(arrays[f"{name}.channels"],
                                       arrays[f"{name}.activation"],
                                       arrays[f"{name}.iou"])
        return cls(classes, manifest["checkpoint_id"], manifest["config_digest"],
                   tuple(manifest["grid"]), int(manifest["n_channels"]))


def select_channels(scores: np.ndarray, iou_floor: float = DEFAULT_IOU_FLOOR,
                    top_k: int = DEFAULT_TOP_K) -> np.ndarray:
    """Indicator of channels with IoU >= floor, capped at the top_k best."""
    passing = np.flatnonzero(scores >= iou_floor)
    if passing.size > top_k:
        order = np.argsort(scores[passing], kind="stable")[::-1]
        passing = passing[order[:top_k]]
    indicator = np.zeros(scores.shape[0], dtype=np.uint8)
    indicator[passing] = 1
    return indicator


def class_activation_vector(samples: list[SceneSample], class_id: str,
                            indicator: np.ndarray) -> np.ndarray:
    """Mean activation over the class's spatial support (coverage-weighted),
    on selected channels; zero elsewhere."""
    cid = CLASS_IDS[class_id]
    num = np.zeros(indicator.shape[0], dtype=np.float64)
    den = 0.0
    for s in samples:
        cov = class_coverage(s.segmentation)[:, :, cid]
        num += (s.latent.astype(np.float64) * cov[:, :, None]).sum(axis=(0, 1))
        den += cov.sum()
    vec = num / den if den > 0 else np.zeros_like(num)
    return (vec * indicator).astype(np.float32)


def build_catalog(gen: LayeredGenerator, samples: list[SceneSample],
                  classes: tuple = CLASSES,
                  threshold_quantile: float = DEFAULT_QUANTILE,
                  iou_floor: float = DEFAULT_IOU_FLOOR,
                  top_k: int = DEFAULT_TOP_K,
                  sample_id: str = "") -> UnitCatalog:
    """Score channels per class and assemble the catalog bound to ``gen``."""
    config = {
        "threshold_quantile": threshold_quantile,
        "iou_floor": iou_floor,
        "top_k": top_k,
        "sample_id": sample_id,
        "n_samples": len(samples),
    }
    digest = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]
    out: dict[str, ClassUnits] = {}
    for name in classes:
        scores = channel_iou(gen, samples, name, threshold_quantile)
        indicator = select_channels(scores, iou_floor, top_k)
        if not indicator.any():
            warnings.warn(f"no channel passed selection for class {name!r}; edits will be rejected")
            activation = np.zeros(scores.shape[0], dtype=np.float32)
        else:
            activation = class_activation_vector(samples, name, indicator)
        out[name] = ClassUnits(indicator, activation, scores.astype(np.float32))
    hz, wz, cz = gen.input_shape
    return UnitCatalog(out, gen.checkpoint_id, digest, (hz, wz), cz)


def reference_style_vector(z_ref, catalog: UnitCatalog, class_id: str) -> np.ndarray:
    """Appearance vector from a reference latent: per selected channel, the mean
    of its strictly positive activations (0 when none are positive)."""
    units = catalog.units(class_id)
    values = z_ref.values if hasattr(z_ref, "values") else np.asarray(z_ref)
    vec = np.zeros(catalog.n_channels, dtype=np.float32)
    for ch in np.flatnonzero(units.channels):
        vals = values[:, :, ch]
        pos = vals[vals > 0]
        vec[ch] = float(pos.mean()) if pos.size else 0.0
    return vec
