import numpy as np
import pytest

from ivem.ifespace import Coefficients
from ivem.mesh import build_cut_mesh, cut_tetrahedron, plane_levelset, sphere_levelset

REF_TET = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def ref_tet():
    return REF_TET.copy()


@pytest.fixture(scope="session")
def flat_cut():
    """Reference tet cut by x1 = 0.3 (three cut points around vertex 0)."""
    return cut_tetrahedron(REF_TET, lambda x: x[:, 0] - 0.3)


@pytest.fixture(scope="session")
def quad_cut():
    """Reference tet cut by x1 + x2 = 0.5 (four cut points)."""
    return cut_tetrahedron(REF_TET, lambda x: x[:, 0] + x[:, 1] - 0.5)


@pytest.fixture(scope="session")
def tilted_cut():
    n = np.array([0.8, -0.3, 0.5])
    return cut_tetrahedron(REF_TET, lambda x: x @ n - 0.2)


@pytest.fixture(scope="session")
def coeff():
    return Coefficients(alpha_minus=1.0, alpha_plus=20.0, beta_minus=3.0, beta_plus=100.0)


@pytest.fixture(scope="session")
def sphere_topo4():
    return build_cut_mesh(4, sphere_levelset())


@pytest.fixture(scope="session")
def sphere_topo8():
    return build_cut_mesh(8, sphere_levelset())


@pytest.fixture(scope="session")
def flat_topo4():
    return build_cut_mesh(4, plane_levelset(0.05))


@pytest.fixture(scope="session")
def uncut_topo4():
    return build_cut_mesh(4, None)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
