import numpy as np
import pytest

from chemflow.dynamics import State
from chemflow.fields import GridSpec, ScalarField, VectorField
from chemflow.model import build_model, gravity_potential
from chemflow.scenarios import get_scenario


@pytest.fixture(scope="session")
def grid64():
    return GridSpec(2, 64)


@pytest.fixture(scope="session")
def grid32():
    return GridSpec(2, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def band_limited_state(grid, rng, kmax=None, positive=True):
    """Random smooth state whose modes all sit inside the dealiasing band."""
    from chemflow.fields import random_smooth_field
    from chemflow.operators import leray_project

    kmax = kmax if kmax is not None else grid.points / 6
    n = random_smooth_field(grid, rng, kmax)
    c = random_smooth_field(grid, rng, kmax)
    if positive:
        n = n * 0.1 + 1.0
        c = c * 0.1 + 1.0
    u = leray_project(VectorField([random_smooth_field(grid, rng, kmax) for _ in range(grid.dim)]))
    return State(n, c, u)


@pytest.fixture(scope="session")
def drop_setup():
    """The gaussian_drop reference objects on a 64^2 grid (cheap variant)."""
    g = GridSpec(2, 64)
    mf = build_model("step", 1.0, 0.3, 0.1, 2.0)
    pot = gravity_potential(g, 1.0)
    s0 = get_scenario("gaussian_drop").initial_state(g)
    return g, mf, pot, s0
