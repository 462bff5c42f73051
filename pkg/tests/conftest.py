import numpy as np
import pytest
from hypothesis import settings

from kymo.grid import GridSpec
from kymo.motility import ExpDecay
from kymo.scheme import InitSpec, SimConfig

settings.register_profile("kymo", deadline=None, max_examples=40)
settings.load_profile("kymo")


def bump_config(n=64, dim=1, tau=0.0, motility=None, epsilon=1e-3, epsilon0=0.5, dt=1e-3,
                T=0.2, amplitude=4.0, floor=0.5, width=0.1, center=None, cadence=10, **kw):
    grid = GridSpec((n,) * dim, (1.0,) * dim)
    center = center if center is not None else [0.5] * dim
    init_u = InitSpec("GaussianBump", {"center": center, "width": width,
                                       "amplitude": amplitude, "floor": floor})
    init_v = kw.pop("init_v", InitSpec("Constant", {"value": 0.0}))
    return SimConfig(grid, motility or ExpDecay(), tau, epsilon, epsilon0, dt, T,
                     init_u, init_v, cadence=cadence, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def make_cfg():
    return bump_config


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
