import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from geolab.loopspace import BrokenLoop, TimeGrid
from geolab.manifold import FlatTorus, RoundSphere

settings.register_profile("geolab", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("geolab")


@pytest.fixture
def sphere():
    return RoundSphere(1.0)


@pytest.fixture
def torus():
    return FlatTorus()


def equator_loop(k, turns=1, q=1.0):
    ang = 2 * np.pi * turns * np.arange(k) / k
    nodes = np.stack([np.cos(ang), np.sin(ang), np.zeros(k)], axis=1)
    return BrokenLoop(RoundSphere(1.0), TimeGrid.uniform(k, q), nodes)


def torus_line(k, winding=(1, 0), offset=(0.0, 0.3), q_prime=0.0):
    torus = FlatTorus()
    t = np.arange(k) / k
    pts = np.asarray(offset) + t[:, None] * np.asarray(winding, float)
    return BrokenLoop(torus, TimeGrid.uniform(k, 1.0, q_prime), torus.reduce(pts))
