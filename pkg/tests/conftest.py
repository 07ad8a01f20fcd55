import numpy as np
import pytest

from nskrt import SlabConfig, make_linear_profile

REFERENCE_KAPPA_C = 1.0 / (np.pi**2 + 1.0)  # linear profile, g=h=L=slope=1


@pytest.fixture
def slab():
    return SlabConfig(g=1.0, mu=0.1, kappa=0.0, L=1.0, h=1.0)


@pytest.fixture
def linear_profile(slab):
    return make_linear_profile(1.0, 1.0, slab, N=128)
