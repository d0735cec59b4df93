import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bplan.occupancy import OccupancyOctree, build_map
from bplan.scene import Bounds, Obstacle, Scene, make_scene

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def bounds():
    return Bounds.default()


@pytest.fixture(scope="session")
def elongated_world():
    scene = make_scene("elongated", 42)
    return scene, build_map(scene)


@pytest.fixture(scope="session")
def narrow_world():
    scene = make_scene("narrow_circular", 7)
    return scene, build_map(scene)


@pytest.fixture(scope="session")
def box_world():
    """One axis-aligned box in the middle of the workspace."""
    scene = Scene([Obstacle.box((0.0, 0.0, 1.6), (0.3, 0.3, 0.3))], Bounds.default())
    return scene, build_map(scene)


def random_octree(rng, n_leaves, bounds=None, resolution=0.1):
    """Map with ``n_leaves`` random leaves pushed to the occupied clamp."""
    omap = OccupancyOctree(bounds or Bounds.default(), resolution)
    n = omap.n
    idx = rng.integers(0, n, size=(n_leaves, 3))
    keys = np.unique(omap.key(idx))
    omap._update(keys, 10.0)
    return omap


# -- acceptance report -----------------------------------------------------

_CRITERIA = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line; the test still asserts ``ok``."""

    def report(n, ok, detail):
        _CRITERIA[n] = (bool(ok), detail)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
