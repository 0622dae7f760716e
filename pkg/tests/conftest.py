import numpy as np
import pytest

from spinshield.spectral import PatchSignalClip


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_clip(rng, patches=3, frames=16, fps=25.0):
    return PatchSignalClip(signals=rng.normal(size=(patches, frames)), fps=fps)
