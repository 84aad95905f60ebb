"""Procedural outdoor scenes with exact per-pixel class labels.

Scenes are 64x64 arrangements of six classes (sky, ground, building, tree,
dome, door) with per-scene colors, texture amplitudes, horizon and lighting.
``encode_scene_latent`` maps a scene to the toy generator's 4x4x128 latent
grid: a documented subset of channels carries class coverage, class color,
texture amplitude and globals; the rest are reserved and always zero (the
toy generator's first layer is initialized dead on them, mirroring the large
over-provisioned latents of full-scale models). Channel <-> class gating is
what the dissection stage later rediscovers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IMG_SIZE = 64
GRID = 4
BLOCK = IMG_SIZE // GRID

CLASSES = ("sky", "ground", "building", "tree", "dome", "door")
N_CLASSES = len(CLASSES)
CLASS_IDS = {name: i for i, name in enumerate(CLASSES)}

LATENT_CHANNELS = 128
COV_BASE = 0                    # 6 channels: per-class pixel coverage of each cell
RGB_BASE = 6                    # 18 channels: coverage-gated class color (RGB in [-1, 1])
TEX_BASE = 24                   # 6 channels: coverage-gated texture amplitude
CH_HORIZON = 30                 # broadcast horizon height
CH_LIGHT = 31                   # broadcast global light factor
STRUCTURED_CHANNELS = 32
RESERVED = slice(STRUCTURED_CHANNELS, LATENT_CHANNELS)

TEX_GAIN = 5.0                  # texture amps are ~[0, 0.18]; scaled to ~[0, 0.9]

_BASE_PALETTE = np.array([
    [0.35, 0.55, 0.88],   # sky
    [0.30, 0.52, 0.22],   # ground
    [0.58, 0.52, 0.44],   # building
    [0.12, 0.42, 0.16],   # tree
    [0.62, 0.60, 0.72],   # dome
    [0.42, 0.22, 0.10],   # door
], dtype=np.float64)


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    horizon: int
    light: float
    colors: tuple                  # 6 x 3, values in [0, 1]
    tex_amps: tuple                # 6 amplitudes
    building: tuple                # (x0, x1, top)
    dome: tuple | None             # (radius,)
    door: tuple | None             # (width, height)
    tree: tuple | None             # (cx, cy, radius)


@dataclass
class SceneSample:
    image: np.ndarray              # (64, 64, 3) float32 in [-1, 1]
    segmentation: np.ndarray       # (64, 64) uint8 class ids
    latent: np.ndarray             # (4, 4, 128) float32
    spec: SceneSpec = field(repr=False, default=None)


def sample_scene_spec(seed: int) -> SceneSpec:
    rng = np.random.default_rng(seed)
    horizon = int(rng.integers(40, 51))
    light = float(rng.uniform(0.85, 1.15))
    colors = np.clip(_BASE_PALETTE + rng.uniform(-0.12, 0.12, size=(6, 3)), 0.05, 0.95)
    tex_amps = rng.uniform(0.0, 0.18, size=6)
    width = int(rng.integers(18, 39))
    cx = int(rng.integers(16, 49))
    x0 = max(1, min(IMG_SIZE - width - 1, cx - width // 2))
    x1 = x0 + width
    top = int(rng.integers(16, 31))
    building = (x0, x1, top)
    dome = (int(rng.integers(5, min(11, width // 2 + 1))),) if rng.random() < 0.8 else None
    door = (int(rng.integers(4, 9)), int(rng.integers(8, 15))) if rng.random() < 0.9 else None
    tree = None
    if rng.random() < 0.85:
        r = int(rng.integers(6, 13))
        side_left = (x0 > IMG_SIZE - x1) if x0 != IMG_SIZE - x1 else bool(rng.random() < 0.5)
        tx = int(rng.integers(r, max(r + 1, x0 - 2))) if side_left and x0 - 2 > r else \
            int(rng.integers(min(x1 + 2, IMG_SIZE - r - 1), IMG_SIZE - r))
        ty = int(rng.integers(horizon - 18, horizon - 7))
        tree = (tx, ty, r)
    return SceneSpec(seed, horizon, light,
                     tuple(map(tuple, colors.tolist())), tuple(tex_amps.tolist()),
                     building, dome, door, tree)


def _patterns(ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Fixed, pixel-coordinate textures per class (amplitude 1)."""
    pats = np.empty((N_CLASSES,) + ys.shape, dtype=np.float64)
    pats[0] = np.sin(2 * np.pi * ys / 21.0)                       # sky bands
    pats[1] = np.sin(2 * np.pi * ys / 3.0)                        # ground stripes
    pats[2] = ((xs // 3 + ys // 2) % 2) * 2.0 - 1.0               # brick checker
    pats[3] = np.sin(xs * 2.1) * np.cos(ys * 1.7)                 # foliage speckle
    pats[4] = np.sin(2 * np.pi * xs / 5.0)                        # dome ribs
    pats[5] = np.sin(2 * np.pi * ys / 4.0)                        # door planks
    return pats


def render_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render a spec to (image in [-1, 1], segmentation); pure in the spec."""
    ys, xs = np.mgrid[0:IMG_SIZE, 0:IMG_SIZE]
    pats = _patterns(ys, xs)
    colors = np.asarray(spec.colors, dtype=np.float64)
    amps = np.asarray(spec.tex_amps, dtype=np.float64)

    seg = np.zeros((IMG_SIZE, IMG_SIZE), dtype=np.uint8)          # sky everywhere
    seg[ys >= spec.horizon] = CLASS_IDS["ground"]
    x0, x1, top = spec.building
    bmask = (xs >= x0) & (xs < x1) & (ys >= top)
    seg[bmask] = CLASS_IDS["building"]
    if spec.door is not None:
        dw, dh = spec.door
        dcx = (x0 + x1) // 2
        dmask = (xs >= dcx - dw // 2) & (xs < dcx - dw // 2 + dw) & (ys >= IMG_SIZE - dh) & bmask
        seg[dmask] = CLASS_IDS["door"]
    if spec.dome is not None:
        (dr,) = spec.dome
        dcx = (x0 + x1) // 2
        dome_mask = ((xs - dcx) ** 2 + (ys - top) ** 2 <= dr * dr) & (ys <= top)
        seg[dome_mask] = CLASS_IDS["dome"]
    if spec.tree is not None:
        tx, ty, tr = spec.tree
        canopy = (xs - tx) ** 2 + ((ys - ty) * 1.2) ** 2 <= tr * tr
        trunk = (np.abs(xs - tx) <= 1) & (ys > ty) & (ys < spec.horizon + 3)
        seg[canopy | trunk] = CLASS_IDS["tree"]

    img = np.empty((IMG_SIZE, IMG_SIZE, 3), dtype=np.float64)
    shade = 1.0 - 0.22 * ys / (IMG_SIZE - 1.0)                    # sky gradient; flat elsewhere
    for k in range(N_CLASSES):
        m = seg == k
        base = colors[k][None, :] * (shade[m, None] if k == CLASS_IDS["sky"] else 1.0)
        img[m] = base + amps[k] * pats[k][m, None]
    img = np.clip(img * spec.light, 0.0, 1.0)
    return (img * 2.0 - 1.0).astype(np.float32), seg


def class_coverage(segmentation: np.ndarray, grid: int = GRID) -> np.ndarray:
    """Per-cell pixel coverage of each class: (grid, grid, n_classes) in [0, 1]."""
    h, w = segmentation.shape
    bh, bw = h // grid, w // grid
    onehot = (segmentation[..., None] == np.arange(N_CLASSES)).astype(np.float64)
    blocks = onehot.reshape(grid, bh, grid, bw, N_CLASSES)
    return blocks.mean(axis=(1, 3))


def encode_scene_latent(spec: SceneSpec, segmentation: np.ndarray) -> np.ndarray:
    """Structured 4x4x128 latent for a scene: the toy model's editing representation."""
    cov = class_coverage(segmentation)
    z = np.zeros((GRID, GRID, LATENT_CHANNELS), dtype=np.float64)
    colors = np.asarray(spec.colors, dtype=np.float64) * 2.0 - 1.0
    amps = np.asarray(spec.tex_amps, dtype=np.float64) * TEX_GAIN
    z[:, :, COV_BASE:COV_BASE + N_CLASSES] = cov
    for k in range(N_CLASSES):
        z[:, :, RGB_BASE + 3 * k:RGB_BASE + 3 * k + 3] = cov[:, :, k:k + 1] * colors[k]
        z[:, :, TEX_BASE + k] = cov[:, :, k] * amps[k]
    z[:, :, CH_HORIZON] = (spec.horizon - 45.0) / 10.0
    z[:, :, CH_LIGHT] = (spec.light - 1.0) / 0.3
    return z.astype(np.float32)


def scene_sample(seed: int) -> SceneSample:
    spec = sample_scene_spec(seed)
    image, seg = render_scene(spec)
    return SceneSample(image, seg, encode_scene_latent(spec, seg), spec)


def make_synthetic_dataset(spec_seed: int, count: int) -> list[SceneSample]:
    """Deterministic list of scenes; every pixel labeled with exactly one class."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(spec_seed)
    seeds = rng.integers(0, 2 ** 63 - 1, size=count)
    return [scene_sample(int(s)) for s in seeds]


def sample_latent(seed: int) -> np.ndarray:
    """Draw a latent from the generator's prior (the scene-encoding distribution)."""
    return scene_sample(seed).latent
