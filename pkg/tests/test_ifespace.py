import numpy as np
import pytest

from ivem.errors import InvalidArgumentError
from ivem.ifespace import (
    Coefficients,
    edge_ife,
    extend_constant,
    face_ife,
    ife_curl,
    ife_div,
    ife_eval,
    ife_grad,
    is_in_space,
    jump_matrix,
    jump_residuals,
    local_complex_check,
    nodal_ife,
    region_samples,
    tangent_frame,
)
from ivem.mesh import build_cut_mesh, cut_element_from_planes, cut_tetrahedron, plain_element, sphere_levelset

from conftest import REF_TET


def test_identity_ratio():
    n = np.array([0.2, -0.5, 0.7])
    n /= np.linalg.norm(n)
    for kind in ("e", "f"):
        assert np.allclose(jump_matrix(kind, n, 3.0, 3.0).matrix, np.eye(3), atol=1e-15)


def test_axis_normal_is_diagonal():
    M = jump_matrix("e", [1, 0, 0], 10.0, 1.0).matrix
    assert np.allclose(M, np.diag([10, 1, 1]), atol=1e-14)


def test_face_kind_eigenstructure():
    rng = np.random.default_rng(3)
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    M = jump_matrix("f", n, 0.37, 1.0).matrix
    w, V = np.linalg.eigh(M)
    assert np.allclose(w, [0.37, 0.37, 1.0])
    assert abs(abs(V[:, 2] @ n) - 1) < 1e-12


@pytest.mark.parametrize("ratio", [1e-3, 0.5, 7.0, 1e4])
def test_jump_matrix_properties(ratio):
    rng = np.random.default_rng(int(ratio * 1000) % 97)
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    Me = jump_matrix("e", n, ratio, 1.0).matrix
    Mf = jump_matrix("f", n, ratio, 1.0).matrix
    assert np.allclose(Me, Me.T) and np.all(np.linalg.eigvalsh(Me) > 0)
    assert np.allclose(Me @ n, ratio * n)
    t1, t2 = tangent_frame(n)
    assert np.allclose(Me @ t1, t1) and np.allclose(Mf @ t2, ratio * t2)
    assert np.allclose(Mf @ n, n)
    assert np.allclose(Me @ Mf, ratio * np.eye(3))
    assert np.linalg.cond(Me) == pytest.approx(max(ratio, 1 / ratio), rel=1e-9)


def test_jump_matrix_errors():
    with pytest.raises(InvalidArgumentError):
        jump_matrix("e", [0, 0, 0], 1.0, 2.0)
    with pytest.raises(InvalidArgumentError):
        jump_matrix("x", [1, 0, 0], 1.0, 2.0)
    with pytest.raises(InvalidArgumentError):
        jump_matrix("e", [1, 1, 0], 1.0, 2.0)
    with pytest.raises(InvalidArgumentError):
        Coefficients(beta_plus=-1.0)


def test_extend_single_flat_cut():
    cut = cut_tetrahedron(REF_TET, lambda x: x[:, 0] - 0.3)
    # region 0 is the '-' side; a seed e1 with weight ratio 1/10 jumps by 10 in the normal component
    pc = extend_constant(cut, "e", [10.0, 1.0], [1.0, 0, 0])
    assert np.allclose(pc.values, [[1, 0, 0], [10, 0, 0]])
    assert is_in_space(pc, cut)


def test_alternating_chain_collapses():
    cut = cut_element_from_planes(REF_TET, [((1, 1, 0), (0.2, 0.0, 0)), ((1, 1, 0), (0.5, 0.0, 0))])
    seed = np.array([0.3, -1.2, 0.8])
    pc = extend_constant(cut, "e", [4.0, 1.0, 4.0], seed)
    assert np.allclose(pc.values[2], seed, atol=1e-14)


def test_hodge_star(tilted_cut, coeff):
    rng = np.random.default_rng(0)
    w = coeff.beta(tilted_cut.region_signs)
    for _ in range(10):
        seed = rng.normal(size=3)
        e = extend_constant(tilted_cut, "e", w, seed)
        f = extend_constant(tilted_cut, "f", 1.0 / w, w[0] * seed)
        assert np.allclose(w[:, None] * e.values, f.values, rtol=1e-13, atol=1e-13)
        assert is_in_space(f, tilted_cut)


def test_edge_ife_without_rotation_is_constant(tilted_cut, coeff):
    f = edge_ife(tilted_cut, coeff, np.zeros(3), [1.0, 2.0, 3.0])
    x = region_samples(tilted_cut)[0]
    assert np.allclose(ife_eval(f, x, 0), [1.0, 2.0, 3.0])


def test_nodal_ife_across_plane():
    cut = cut_tetrahedron(REF_TET, lambda x: x[:, 0] - 0.3)
    co = Coefficients(beta_minus=1.0, beta_plus=10.0)
    f = nodal_ife(cut, co, [0.4, -0.2, 0.9], 0.5)
    rng = np.random.default_rng(1)
    yz = rng.random((100, 2)) * 0.35
    pts = np.column_stack([np.full(100, 0.3), yz])
    assert np.max(np.abs(ife_eval(f, pts, 0) - ife_eval(f, pts, 1))) < 1e-13
    n = cut.plane_normals[0]
    flux = [co.beta(s) * ife_grad(f, m) @ n for m, s in enumerate(cut.region_signs)]
    assert flux[0] == pytest.approx(flux[1], rel=1e-13)


def test_three_region_edge_tangential_continuity():
    cut = cut_element_from_planes(REF_TET, [((1, 0.2, 0), (0.15, 0, 0)), ((1, -0.1, 0.3), (0.45, 0, 0))])
    co = Coefficients(2.0, 30.0, 5.0, 0.5)
    f = edge_ife(cut, co, [0.3, -0.7, 1.1], [1.0, 0.5, -0.4])
    r = jump_residuals(f, co)
    assert len(r) == 2 and np.max(r) < 1e-12 * 30


def test_derivatives(tilted_cut, coeff):
    f = edge_ife(tilted_cut, coeff, [0, 0, 1.0], np.zeros(3))
    curl = ife_curl(f)
    assert np.allclose(curl.values[0], [0, 0, 2.0])
    assert is_in_space(curl, tilted_cut)
    g = nodal_ife(tilted_cut, coeff, [1.0, 2.0, 3.0])
    assert ife_grad(g) is g.vec
    assert ife_div(face_ife(tilted_cut, coeff, 0.0, [1.0, 0, 0])) == 0.0
    assert ife_div(face_ife(tilted_cut, coeff, 2.0, [1.0, 0, 0])) == 6.0
    with pytest.raises(InvalidArgumentError):
        ife_curl(g)
    with pytest.raises(InvalidArgumentError):
        ife_eval(g, [0, 0, 0], 5)


def test_local_complex_flat_high_contrast():
    cut = cut_tetrahedron(REF_TET, lambda x: x[:, 0] - 0.3)
    rep = local_complex_check(cut, Coefficients(1.0, 1000.0, 1.0, 1000.0), tol=1e-12)
    assert rep.passed, rep.lines()
    assert rep.dims == (4, 6, 4, 1)


def test_local_complex_uncut():
    rep = local_complex_check(plain_element(REF_TET), Coefficients())
    assert rep.passed and (rep.rank_grad, rep.rank_curl, rep.rank_div) == (3, 3, 1)


def test_local_complex_multi_cut():
    cut = cut_element_from_planes(REF_TET, [((1, 0.2, 0), (0.15, 0, 0)), ((1, -0.1, 0.3), (0.45, 0, 0))])
    rep = local_complex_check(cut, Coefficients(2.0, 30.0, 5.0, 0.5))
    assert rep.passed and rep.dims == (4, 6, 4, 1)


def test_local_complex_sphere_elements(sphere_topo4):
    co = Coefficients(1.0, 100.0, 1.0, 200.0)
    for cut in sphere_topo4.cuts[::15]:
        assert local_complex_check(cut, co).passed


def test_trace_inequality_bounded():
    # h^(1/2) ||c||_F / ||c||_K for c in P^e_0 stays bounded under refinement
    co = Coefficients(1.0, 10.0, 1.0, 10.0)
    rng = np.random.default_rng(0)
    worst = []
    for n in (4, 8):
        topo = build_cut_mesh(n, sphere_levelset())
        w = 0.0
        for cut in topo.cuts[::5]:
            pc = extend_constant(cut, "e", co.beta(cut.region_signs), rng.normal(size=3))
            tris = cut.tri_coords
            area = 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)
            face = np.sqrt(np.sum(area * np.sum(pc.values[cut.tri_region] ** 2, axis=1)))
            vol = np.sqrt(np.sum(cut.region_volumes * np.sum(pc.values**2, axis=1)))
            w = max(w, np.sqrt(cut.diameter) * face / vol)
        worst.append(w)
    assert worst[1] < 2.0 * worst[0]
