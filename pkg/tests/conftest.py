import numpy as np
import pytest

from shapefocus.bvh import Bvh
from shapefocus.cost import CostParams, CostTable
from shapefocus.phantoms import humanoid, icosphere
from shapefocus.rig import generate_rig
from shapefocus.sampling import sample_surface


@pytest.fixture(scope="session")
def sphere():
    return icosphere(100.0, 4)


@pytest.fixture(scope="session")
def sphere_bvh(sphere):
    return Bvh(sphere)


@pytest.fixture(scope="session")
def phantom():
    """Humanoid mesh, BVH, 10k samples, default rig and cost table."""
    mesh = humanoid()
    bvh = Bvh(mesh)
    samples = sample_surface(mesh, 10_000, seed=0, bvh=bvh)
    rig = generate_rig()
    table = CostTable.build(rig, samples, CostParams(), bvh)
    return {"mesh": mesh, "bvh": bvh, "samples": samples, "rig": rig, "table": table}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, title, detail = RESULTS[n]
        terminalreporter.line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
