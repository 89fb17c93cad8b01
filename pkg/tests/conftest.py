import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src" / "acscp"))

from cscp_engine import EpisodeConfig  # noqa: E402
from threat import BasisSet, ThreatDynamics, make_default_scenario  # noqa: E402
from workspace import build_grid  # noqa: E402


@pytest.fixture
def grid3():
    return build_grid(1.0, 3)


@pytest.fixture
def grid4():
    return build_grid(1.0, 4)


@pytest.fixture
def small_scenario():
    """5x5 격자, 2x2 기저"""
    basis, dynamics, state = make_default_scenario(4, 5, rng=np.random.default_rng(7))
    return build_grid(1.0, 5), basis, dynamics, state


@pytest.fixture
def static_dynamics():
    def _make(num_params: int) -> ThreatDynamics:
        return ThreatDynamics(A=np.eye(num_params), sigma_P=0.0)
    return _make


@pytest.fixture
def small_cfg():
    return EpisodeConfig(side_count=5, num_params=4, ticks_per_edge=4, sensor_count=2,
                         ego_speed=0.01, sensor_speed=0.05, seed=3)


def random_basis(rng: np.random.Generator, num_params: int, width: float = 0.5) -> BasisSet:
    return BasisSet(centers=rng.uniform(-1, 1, size=(num_params, 2)), widths=np.full(num_params, width))


def random_spd(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    M = rng.standard_normal((n, n))
    return scale * (M @ M.T + 0.1 * np.eye(n))
