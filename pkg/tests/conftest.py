import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ssdr.core import Camera, GBuffer


@pytest.fixture
def camera100() -> Camera:
    return Camera(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


@pytest.fixture
def flat_gbuffer():
    """Fronto-parallel Lambertian plane at depth 2, 16x16."""
    h = w = 16
    return GBuffer(albedo=np.full((h, w, 3), 0.5),
                   normal=np.tile([0.0, 0.0, -1.0], (h, w, 1)),
                   depth=np.full((h, w), 2.0),
                   roughness=np.ones((h, w)),
                   metallic=np.zeros((h, w)))


@pytest.fixture
def glossy_patch():
    """8x8 mixed-material patch with perturbed normals, for adjoint tests."""
    from ssdr.core import normalize
    h = w = 8
    rng = np.random.default_rng(0)
    nrm = normalize(np.tile([0.0, -0.35, -1.0], (h, w, 1))
                    + 0.1 * rng.normal(size=(h, w, 3)))
    return GBuffer(albedo=rng.uniform(0.2, 0.9, (h, w, 3)),
                   normal=nrm,
                   depth=np.full((h, w), 2.0) + 0.2 * rng.random((h, w)),
                   roughness=rng.uniform(0.15, 0.9, (h, w)),
                   metallic=rng.uniform(0.0, 1.0, (h, w)))
