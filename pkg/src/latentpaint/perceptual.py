"""Feature extractor for the perceptual half of the reconstruction loss.

The extractor is a stack of strided conv stages; the loss compares mean
absolute differences of each stage's feature map. The default is a
fixed-seed random stack, which keeps tests hermetic; weights trained
elsewhere can be supplied through ``from_archive`` for production use.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .archive import load_archive, save_archive
from .errors import ArchiveFormatError, ShapeMismatchError

DEFAULT_FEATURE_WEIGHT = 10.0


class PerceptualExtractor:
    def __init__(self, convs: list[nn.Conv2d], feature_weight: float = DEFAULT_FEATURE_WEIGHT):
        self.convs = convs
        self.feature_weight = feature_weight

    @classmethod
    def fixed_random(cls, seed: int = 11, channels: tuple = (8, 12, 16),
                     feature_weight: float = DEFAULT_FEATURE_WEIGHT) -> "PerceptualExtractor":
        """Deterministic random extractor; the hermetic default for this package."""
        rng = np.random.default_rng(seed)
        convs = []
        cin = 3
        for cout in channels:
            convs.append(nn.Conv2d.create(rng, cin, cout, k=3, stride=2))
            cin = cout
        return cls(convs, feature_weight)

    @classmethod
    def zero_stage(cls) -> "PerceptualExtractor":
        """No feature stages: the reconstruction loss degenerates to the pixel term."""
        return cls([], DEFAULT_FEATURE_WEIGHT)

    @property
    def n_stages(self) -> int:
        return len(self.convs)

    def stages(self, x: np.ndarray, capture: bool = False):
        """Per-stage feature maps for a batched image (B, H, W, 3)."""
        feats, caches = [], []
        for conv in self.convs:
            y, c_conv = conv.forward(x)
            x = nn.act_forward("lrelu", y)
            feats.append(x)
            caches.append(c_conv)
        return (feats, caches) if capture else feats

    def feature_loss_and_grad(self, y: np.ndarray, x: np.ndarray):
        """Sum over stages of mean|F_i(y) - F_i(x)| and its gradient wrt y."""
        if y.shape != x.shape:
            raise ShapeMismatchError(f"feature loss on mismatched shapes {y.shape} vs {x.shape}")
        if not self.convs:
            return 0.0, np.zeros_like(y)
        fy, cy = self.stages(y, capture=True)
        fx = self.stages(x)
        loss = 0.0
        g = np.zeros_like(fy[-1])
        for i in reversed(range(self.n_stages)):
            loss += nn.l1_mean(fy[i], fx[i])
            g = g + nn.l1_mean_grad(fy[i], fx[i])
            g = nn.act_backward("lrelu", fy[i], g)
            gx_conv = self.convs[i].backward(cy[i], g)[0]
            if i > 0:
                g = gx_conv
            else:
                return float(loss), gx_conv
        raise AssertionError("unreachable")

    def feature_loss(self, y: np.ndarray, x: np.ndarray) -> float:
        fy = self.stages(y)
        fx = self.stages(x)
        return float(sum(nn.l1_mean(a, b) for a, b in zip(fy, fx)))

    def save(self, path) -> None:
        manifest = {"kind": "perceptual", "feature_weight": self.feature_weight,
                    "strides": [c.stride for c in self.convs]}
        arrays = {}
        for i, c in enumerate(self.convs):
            arrays[f"stage{i}.weight"] = c.w
            arrays[f"stage{i}.bias"] = c.b
        save_archive(path, manifest, arrays)

    @classmethod
    def from_archive(cls, path) -> "PerceptualExtractor":
        manifest, arrays = load_archive(path)
        if manifest.get("kind") != "perceptual":
            raise ArchiveFormatError(f"{path}: not a perceptual extractor archive")
        convs = []
        for i, stride in enumerate(manifest["strides"]):
            convs.append(nn.Conv2d(arrays[f"stage{i}.weight"], arrays[f"stage{i}.bias"], int(stride)))
        return cls(convs, float(manifest.get("feature_weight", DEFAULT_FEATURE_WEIGHT)))
