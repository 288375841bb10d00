import warnings

import numpy as np
import pytest

from disp2d.discretize import build_grid
from disp2d.potential import PotentialSpec, build_potential


@pytest.fixture(scope="session")
def small_grid():
    return build_grid("polar", n_r=12, n_theta=12, r_max=5.0, r_scale=1.0)


@pytest.fixture(scope="session")
def gauss_pot(small_grid):
    return build_potential(PotentialSpec("gaussian", amplitude=-0.5, length_scale=1.5), small_grid)


@pytest.fixture(scope="session")
def repulsive_pot(small_grid):
    return build_potential(PotentialSpec("gaussian", amplitude=1.0, length_scale=1.0), small_grid)


@pytest.fixture(scope="session")
def two_well_pot():
    grid = build_grid("polar", n_r=14, n_theta=16, r_max=6.0, r_scale=1.0)
    return build_potential(PotentialSpec.from_dict({"family": "two-well-signed"}), grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def criterion(request):
    """Record one acceptance line: criterion(label, passed, detail)."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(label, passed, detail):
        lines.append(f"{'PASS' if passed else 'FAIL'}  criterion {label}: {detail}")
        print(lines[-1])
        return passed
    return record


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
