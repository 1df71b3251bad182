import numpy as np
import pytest

from ivem.assembly import build_transfers
from ivem.derham import (
    InterpolantRequest,
    check_commuting,
    check_exactness,
    element_averages,
    face_fluxes,
    interpolate,
    polynomial_fields,
)
from ivem.errors import InvalidArgumentError
from ivem.mesh import build_cut_mesh, plane_levelset, sphere_levelset


def test_request_validation():
    with pytest.raises(InvalidArgumentError):
        InterpolantRequest("x", lambda x: x)


def test_nodal_interpolation(flat_topo4):
    d = interpolate(InterpolantRequest("n", lambda x: x[:, 0]), flat_topo4)
    assert np.array_equal(d, flat_topo4.nodes[:, 0])


def test_edge_interpolation_of_gradient(flat_topo4):
    grad = lambda x: np.stack([x[:, 1], x[:, 0], np.zeros(len(x))], axis=1)  # noqa: E731
    d = interpolate(InterpolantRequest("e", grad), flat_topo4)
    p = flat_topo4.nodes
    u = p[:, 0] * p[:, 1]
    assert np.allclose(d, u[flat_topo4.edges[:, 1]] - u[flat_topo4.edges[:, 0]], atol=1e-15)


def test_stokes_for_rotation(sphere_topo4):
    tr = build_transfers(sphere_topo4)
    v = lambda x: np.stack([-x[:, 1], x[:, 0], np.zeros(len(x))], axis=1)  # noqa: E731
    curl = lambda x: np.tile([0.0, 0.0, 2.0], (len(x), 1))  # noqa: E731
    tris = sphere_topo4.nodes[sphere_topo4.faces]
    cr = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    assert np.allclose(face_fluxes(sphere_topo4, curl), cr[:, 2], atol=1e-15)
    assert np.allclose(tr.C @ interpolate(InterpolantRequest("e", v), sphere_topo4), cr[:, 2], atol=1e-14)


def test_element_averages_of_linear(sphere_topo4):
    avg = element_averages(sphere_topo4, lambda x: x[:, 0])
    cent = sphere_topo4.mesh.nodes[sphere_topo4.mesh.elements].mean(axis=1)
    assert np.allclose(avg, cent[:, 0], atol=1e-14)


@pytest.mark.parametrize("ls", [None, plane_levelset(0.05), sphere_levelset()], ids=["uncut", "flat", "sphere"])
@pytest.mark.parametrize("n", [2, 4])
def test_exactness(ls, n):
    topo = build_cut_mesh(n, ls)
    rep = check_exactness(topo)
    assert rep.passed, rep.lines()
    names = {c.name for c in rep.checks}
    assert {"rank G", "rank C", "rank D", "rank D = T"} <= names


def test_rank_limit_skips_dense_checks(sphere_topo8):
    rep = check_exactness(sphere_topo8, rank_limit=10)
    assert rep.passed
    assert all(not c.name.startswith("rank") for c in rep.checks)
    assert rep.csv_lines()[0] == "check,value,expected,passed"


def test_commuting_polynomial(sphere_topo4):
    res = check_commuting(sphere_topo4, *polynomial_fields())
    assert res.max() <= 1e-12


def test_commuting_constant_field(flat_topo4):
    u = lambda x: 2.0 + 0 * x[:, 0]  # noqa: E731
    z = lambda x: np.zeros((len(x), 3))  # noqa: E731
    c = lambda x: np.tile([1.0, -2.0, 0.5], (len(x), 1))  # noqa: E731
    res = check_commuting(flat_topo4, u, z, c, z, lambda x: np.zeros(len(x)))
    assert res.max() < 1e-14
