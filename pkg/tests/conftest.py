from pathlib import Path

import numpy as np
import pytest

from sparsedom.fixtures import build_measure, fixture_measure
from sparsedom.geometry import DyadicCube

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "fixtures"


def root_cube(n: int = 1, grid: int = 0) -> DyadicCube:
    """Side-4 cube holding the unit data box in its central half."""
    return DyadicCube(grid, -2, (-1,) * n)


@pytest.fixture(scope="session")
def fixture_dir():
    return FIXTURE_DIR


@pytest.fixture(scope="session")
def cantor6():
    return fixture_measure("cantor6")


@pytest.fixture(scope="session")
def uniform16():
    return fixture_measure("uniform16")


@pytest.fixture(scope="session")
def uniform8():
    return fixture_measure("uniform8-1d")


@pytest.fixture(scope="session")
def uniform64():
    return fixture_measure("uniform64")


@pytest.fixture(scope="session")
def twocluster():
    return fixture_measure("twocluster")


@pytest.fixture(scope="session")
def uniform2d():
    return fixture_measure("uniform2d")


@pytest.fixture(scope="session")
def cantor2d():
    return fixture_measure("cantor2d3")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def atomic(points, weights, alpha=1.0, n_max=8, seed=0, separate=True):
    pts = np.atleast_2d(np.asarray(points, float))
    if pts.shape[0] == 1 and len(weights) > 1:
        pts = pts.T
    atoms = [[*p, w] for p, w in zip(pts.tolist(), weights)]
    return build_measure({"type": "atomic", "atoms": atoms, "alpha": alpha,
                          "n_max": n_max, "seed": seed, "separate": separate})
