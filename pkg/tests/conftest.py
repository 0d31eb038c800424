import numpy as np
import pytest

from pinchcomp.geometry import build_geometry, PinchingState
from pinchcomp.rate import BeamformingState


@pytest.fixture
def table1_geometry():
    """Default desk geometry: two users sampled with a fixed seed."""
    return build_geometry(seed=0)


@pytest.fixture
def small_geometry():
    """One user, one waveguide, one PA: the smallest meaningful system."""
    return build_geometry(n_waveguides=1, n_pas=1, n_users=1, seed=5)


def random_instance(seed, **overrides):
    """Geometry plus random positions and beams, reproducible per seed."""
    rng = np.random.default_rng(seed)
    geom = build_geometry(seed=seed, **overrides)
    x = rng.uniform(0.0, geom.span, size=(2, geom.n_waveguides, geom.n_pas))
    scale = np.sqrt(max(geom.power_budget) / (2 * geom.n_waveguides * geom.n_users))
    w = scale * (rng.standard_normal((2, geom.n_waveguides, geom.n_users))
                 + 1j * rng.standard_normal((2, geom.n_waveguides, geom.n_users)))
    return geom, PinchingState(x), BeamformingState(w)
