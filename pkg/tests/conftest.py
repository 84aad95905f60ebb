import os
from pathlib import Path

# Pick the kernel backend before latentpaint resolves it; an explicit
# LATENTPAINT_BACKEND in the environment still wins.
os.environ.setdefault("LATENTPAINT_BACKEND", "numpy")

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
ASSETS = ROOT / "assets"
FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(scope="session")
def toy_gen():
    from latentpaint.generator import load_checkpoint

    return load_checkpoint(ASSETS / "toy-v1.ckpt")


@pytest.fixture(scope="session")
def toy_encoder():
    from latentpaint.inversion import Encoder

    return Encoder.load(ASSETS / "encoder-v1.ckpt")


@pytest.fixture(scope="session")
def toy_catalog():
    from latentpaint.dissection import UnitCatalog

    return UnitCatalog.load(ASSETS / "catalog-v1.arc")


@pytest.fixture(scope="session")
def extractor():
    from latentpaint.perceptual import PerceptualExtractor

    return PerceptualExtractor.fixed_random(11)


@pytest.fixture(scope="session")
def goldens():
    from latentpaint.archive import load_archive

    manifest, arrays = load_archive(FIXTURES / "generator_goldens.arc")
    return manifest, arrays


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
