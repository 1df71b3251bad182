import math

import numpy as np
import pytest

from ivem.errors import DegenerateGeometryError, InvalidArgumentError
from ivem.mesh import (
    Box,
    build_background_mesh,
    build_cut_mesh,
    check_geometry,
    classify_and_cut,
    cut_element_from_planes,
    cut_tetrahedron,
    partition_residuals,
    plain_element,
    plane_levelset,
    sphere_levelset,
    write_vtk_mesh,
    write_vtk_triangles,
)

from conftest import REF_TET


def test_unit_cube_kuhn_counts():
    m = build_background_mesh(1, Box((0, 0, 0), (1, 1, 1)))
    assert (m.n_elements, m.n_nodes, len(m.edges), len(m.faces)) == (6, 8, 19, 18)
    assert m.euler_characteristic() == 1


@pytest.mark.parametrize("n", [2, 3, 5])
def test_background_mesh_invariants(n):
    m = build_background_mesh(n)
    assert m.n_elements == 6 * n**3
    vol = m.volumes()
    assert np.all(vol > 0)
    assert np.isclose(vol.sum(), m.box.volume, rtol=1e-13)
    assert m.euler_characteristic() == 1
    assert np.all(np.diff(m.edges, axis=1) > 0)
    assert np.all(np.diff(m.faces, axis=1) > 0)
    assert m.h == pytest.approx(2.0 / n)


def test_face_mothers_n2():
    m = build_background_mesh(2)
    counts = np.bincount(m.elem2face.ravel(), minlength=len(m.faces))
    assert set(counts) == {1, 2}
    bnd = m.boundary_face_mask()
    assert np.all(counts[bnd] == 1) and np.all(counts[~bnd] == 2)
    # boundary faces lie on the box surface
    c = m.nodes[m.faces[bnd]].mean(axis=1)
    assert np.all(np.isclose(np.abs(c), 1.0).any(axis=1))


def test_invalid_resolution():
    with pytest.raises(InvalidArgumentError):
        build_background_mesh(0)
    with pytest.raises(InvalidArgumentError):
        build_background_mesh(2.5)


def test_plane_cut_of_reference_tet():
    cut = cut_tetrahedron(REF_TET, lambda x: x[:, 0] - 0.05)
    assert len(cut.cut_points) == 3
    assert np.allclose([cp.point[0] for cp in cut.cut_points], 0.05)
    n, x0 = cut.plane_normals[0], cut.anchors[0]
    assert np.allclose(np.abs(n), [1, 0, 0])
    assert x0[0] == pytest.approx(0.05)
    # three-edge cut: 7 nodes, 15 edges, 10 triangular faces
    assert (len(cut.points), len(cut.edges), len(cut.boundary_tris)) == (7, 15, 10)


def test_four_point_cut_counts(quad_cut):
    assert len(quad_cut.cut_points) == 4
    assert (len(quad_cut.points), len(quad_cut.boundary_tris)) == (8, 12)
    assert quad_cut.n_regions == 2


def test_uncut_tet_is_plain():
    cut = cut_tetrahedron(REF_TET, lambda x: x[:, 0] + 5.0)
    assert not cut.is_interface
    assert len(cut.boundary_tris) == 4
    assert cut.region_volumes[0] == pytest.approx(1 / 6)


def test_region_volume_half_cut():
    cut = cut_tetrahedron(REF_TET, lambda x: x[:, 0] - 0.5)
    neg = cut.region_volumes[cut.region_signs < 0][0]
    pos = cut.region_volumes[cut.region_signs > 0][0]
    assert neg == pytest.approx(7 / 48, rel=1e-14)
    assert pos == pytest.approx(1 / 48, rel=1e-14)


def test_normal_points_into_plus_region(tilted_cut):
    n = tilted_cut.plane_normals[0]
    plus = tilted_cut.region_centroids[tilted_cut.region_signs > 0][0]
    assert (plus - tilted_cut.anchors[0]) @ n > 0


def test_four_coplanar_points_fit_exactly(quad_cut):
    ring = quad_cut.points[4:]
    d = (ring - quad_cut.anchors[0]) @ quad_cut.plane_normals[0]
    assert np.max(np.abs(d)) < 1e-15


@pytest.mark.parametrize("which", ["flat_cut", "quad_cut", "tilted_cut"])
def test_partition_identities(which, request):
    cut = request.getfixturevalue(which)
    a, v = partition_residuals(cut)
    assert a < 1e-12 and v < 1e-12
    # no triangle straddles the plane
    n, x0 = cut.plane_normals[0], cut.anchors[0]
    for tri, r in zip(cut.tri_coords, cut.tri_region):
        s = (tri - x0) @ n
        assert np.all(s <= 1e-14) if cut.region_signs[r] < 0 else np.all(s >= -1e-14)


def test_sphere_cut_point_counts():
    cm = classify_and_cut(build_background_mesh(10), sphere_levelset())
    assert len(cm.cuts) > 0
    assert all(len(c.cut_points) in (3, 4) for c in cm.cuts)
    # an element is interface iff its vertex signs differ
    s = cm.node_sign[cm.mesh.elements]
    assert np.array_equal(cm.interface, np.any(s != s[:, :1], axis=1))


def test_sphere_geometry_and_angles():
    rep = check_geometry(build_cut_mesh(6, sphere_levelset()))
    assert rep.passed()
    assert rep.max_angle < math.pi


def test_flat_interface_is_exact():
    topo = build_cut_mesh(10, plane_levelset(0.05))
    rep = check_geometry(topo, ((1, 0, 0), 0.05))
    assert rep.passed() and rep.plane_distance < 1e-14


def test_interface_distance_is_second_order():
    ls = sphere_levelset()
    ratios = []
    for n in (10, 20):
        topo = build_cut_mesh(n, ls)
        worst = 0.0
        for cut in topo.cuts:
            p = cut.gamma_tris[0].mean(axis=1)
            # distance from the plane patch centroid to the sphere
            worst = max(worst, float(np.max(np.abs(np.linalg.norm(p, axis=1) - math.pi / 5))))
        ratios.append(worst / topo.mesh.h**2)
    assert ratios[1] < 1.5 * ratios[0]


def test_snapping_vertex_on_interface():
    # x1 = 0 passes through mesh vertices when n is even
    cm = classify_and_cut(build_background_mesh(2), plane_levelset(0.0))
    assert cm.snapped.any()
    assert np.all(cm.node_sign != 0)


def test_zero_vertex_without_snapping():
    with pytest.raises(DegenerateGeometryError):
        cut_tetrahedron(REF_TET, lambda x: x[:, 0], snap_tol=0.0)


def test_bisection_matches_linear_on_plane():
    a = cut_tetrahedron(REF_TET, lambda x: x[:, 0] + x[:, 2] - 0.4, cut_rule="linear")
    b = cut_tetrahedron(REF_TET, lambda x: x[:, 0] + x[:, 2] - 0.4, cut_rule="bisection")
    assert np.allclose(a.points, b.points, atol=1e-12)


def test_uncut_topology_counts():
    topo = build_cut_mesh(2, None)
    assert topo.n_faces == 120
    assert topo.face_nodes.shape[1] == 3 and topo.face_edges.shape[1] == 3


def test_shared_faces_consistent():
    topo = build_cut_mesh(10, plane_levelset(0.05))
    counts = np.bincount(topo.face_row_ids, minlength=topo.n_faces)
    assert set(counts) <= {1, 2}
    sign_sum = np.bincount(topo.face_row_ids, weights=topo.face_row_sign, minlength=topo.n_faces)
    interior = counts == 2
    assert np.all(sign_sum[interior] == 0)
    assert np.all(counts[~interior] == 1) and np.all(topo.boundary_face == ~interior)
    # every face's edges are the node pairs of its nodes
    fe = np.sort(topo.edges[topo.face_edges].reshape(-1, 6), axis=1)
    fn = np.sort(np.repeat(topo.face_nodes, 2, axis=1), axis=1)
    assert np.array_equal(fe, fn)


def test_gather_lists_match_cut_elements(sphere_topo4):
    for cut in sphere_topo4.cuts[:20]:
        e = cut.element_id
        assert np.array_equal(sphere_topo4.elem_nodes(e), cut.node_ids)
        assert np.array_equal(sphere_topo4.elem_edges(e), cut.edge_ids)


def test_multi_cut_element():
    cut = cut_element_from_planes(REF_TET, [((1, 0, 0), (0.2, 0, 0)), ((1, 0, 0), (0.5, 0, 0))])
    assert cut.n_regions == 3
    assert list(cut.region_signs) == [1, -1, 1]
    a, v = partition_residuals(cut)
    assert a < 1e-12 and v < 1e-12


def test_plain_element_orientation():
    with pytest.raises(InvalidArgumentError):
        plain_element(REF_TET[[0, 2, 1, 3]])


def test_vtk_export(tmp_path, sphere_topo4):
    write_vtk_mesh(tmp_path / "m.vtk", sphere_topo4.mesh, {"interface": sphere_topo4.cutmesh.interface.astype(float)})
    write_vtk_triangles(tmp_path / "t.vtk", sphere_topo4)
    text = (tmp_path / "m.vtk").read_text()
    assert f"CELLS {sphere_topo4.n_elements}" in text
    assert "CELL_TYPES" in (tmp_path / "t.vtk").read_text()
