"""Background tetrahedral mesh, level-set cutting and the cut-mesh topology.

The background mesh is a Kuhn subdivision of a box into ``6 n^3`` tetrahedra.
Interface elements get an interface-fitted triangulation of their four faces
that uses only element vertices and cut points; the interface patch inside
each element is replaced by a plane (or a chain of planes for synthetic
multi-cut elements) which splits the element into polyhedral regions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ConformityError,
    DegenerateGeometryError,
    InvalidArgumentError,
    TopologyError,
)

LOCAL_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
# face i is opposite vertex i, listed counterclockwise seen from outside
OUTWARD_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


def _triple_parity(t: np.ndarray) -> np.ndarray:
    """+1 if the rows of ``t`` are an even permutation of their sorted order."""
    a, b, c = t[..., 0], t[..., 1], t[..., 2]
    return np.sign((b - a) * (c - a) * (c - b)).astype(np.int64)


# --------------------------------------------------------------------------
# background mesh
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float] = (-1.0, -1.0, -1.0)
    hi: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def lengths(self) -> np.ndarray:
        return np.asarray(self.hi, float) - np.asarray(self.lo, float)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @classmethod
    def cube(cls, half: float) -> "Box":
        return cls((-half,) * 3, (half,) * 3)


@dataclass
class BackgroundMesh:
    nodes: np.ndarray
    elements: np.ndarray
    edges: np.ndarray
    faces: np.ndarray
    elem2edge: np.ndarray
    elem2face: np.ndarray
    face2elem: np.ndarray
    box: Box
    n: int
    h: float

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def volumes(self) -> np.ndarray:
        p = self.nodes[self.elements]
        return np.linalg.det(p[:, 1:] - p[:, :1]) / 6.0

    def boundary_face_mask(self) -> np.ndarray:
        return self.face2elem[:, 1] < 0

    def euler_characteristic(self) -> int:
        return len(self.nodes) - len(self.edges) + len(self.faces) - len(self.elements)


def build_background_mesh(n: int, box: Box | None = None) -> BackgroundMesh:
    """Kuhn subdivision of ``box`` into ``n^3`` cubes of six tetrahedra each."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidArgumentError(f"mesh resolution must be a positive integer, got {n!r}")
    box = box or Box()
    n = int(n)
    lo = np.asarray(box.lo, float)
    hi = np.asarray(box.hi, float)
    if np.any(hi <= lo):
        raise InvalidArgumentError("box must have hi > lo on every axis")
    m = n + 1
    axes = [np.linspace(lo[d], hi[d], m) for d in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([X.ravel(order="F"), Y.ravel(order="F"), Z.ravel(order="F")], axis=1)

    I, J, K = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    base = (I + m * J + m * m * K).ravel(order="F")
    step = np.array([1, m, m * m])
    tets = []
    for perm in itertools.permutations(range(3)):
        v1 = base + step[perm[0]]
        v2 = v1 + step[perm[1]]
        v3 = v2 + step[perm[2]]
        tets.append(np.stack([base, v1, v2, v3], axis=1))
    elements = np.stack(tets, axis=1).reshape(-1, 4)
    p = nodes[elements]
    neg = np.linalg.det(p[:, 1:] - p[:, :1]) < 0
    elements[neg] = elements[neg][:, [0, 2, 1, 3]]

    nv = len(nodes)
    pairs = np.sort(elements[:, LOCAL_EDGES], axis=2)
    ekey = pairs[..., 0] * nv + pairs[..., 1]
    uniq, inv = np.unique(ekey.ravel(), return_inverse=True)
    edges = np.stack([uniq // nv, uniq % nv], axis=1)
    elem2edge = inv.reshape(-1, 6)

    tri = np.sort(elements[:, OUTWARD_FACES], axis=2)
    fkey = (tri[..., 0] * nv + tri[..., 1]) * nv + tri[..., 2]
    uniq, inv = np.unique(fkey.ravel(), return_inverse=True)
    faces = np.stack([uniq // (nv * nv), (uniq // nv) % nv, uniq % nv], axis=1)
    elem2face = inv.reshape(-1, 4)
    face2elem = _mothers(elem2face.ravel(), np.repeat(np.arange(len(elements)), 4), len(faces))

    h = float(np.max(hi - lo)) / n
    return BackgroundMesh(nodes, elements, edges, faces, elem2edge, elem2face, face2elem, box, n, h)


def _mothers(face_of_row: np.ndarray, elem_of_row: np.ndarray, nf: int) -> np.ndarray:
    order = np.argsort(face_of_row, kind="stable")
    fs = face_of_row[order]
    es = elem_of_row[order]
    first = np.r_[True, fs[1:] != fs[:-1]]
    out = np.full((nf, 2), -1, dtype=np.int64)
    out[fs[first], 0] = es[first]
    out[fs[~first], 1] = es[~first]
    counts = np.bincount(fs, minlength=nf)
    if np.any(counts > 2) or np.any(counts == 0):
        raise TopologyError("a face has no mother or more than two mothers")
    return out


# --------------------------------------------------------------------------
# level sets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LevelSet:
    """Interface description; ``phi`` maps (N,3) points to (N,) values.

    Omega^- is ``{phi < 0}`` and Omega^+ is ``{phi > 0}``.
    """

    phi: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    snap_tol: float = 1e-8
    name: str = "custom"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.phi(np.atleast_2d(np.asarray(x, float))), float)

    def with_snap_tol(self, snap_tol: float) -> "LevelSet":
        return LevelSet(self.phi, self.gradient, snap_tol, self.name)


def plane_levelset(offset: float = 0.05, normal: Sequence[float] = (1.0, 0.0, 0.0), snap_tol: float = 1e-8) -> LevelSet:
    nrm = np.asarray(normal, float)
    nrm = nrm / np.linalg.norm(nrm)
    return LevelSet(
        phi=lambda x: x @ nrm - offset,
        gradient=lambda x: np.broadcast_to(nrm, np.shape(x)).copy(),
        snap_tol=snap_tol,
        name=f"plane({offset:g})",
    )


def sphere_levelset(radius: float = math.pi / 5, center: Sequence[float] = (0.0, 0.0, 0.0), snap_tol: float = 1e-8) -> LevelSet:
    c = np.asarray(center, float)

    def grad(x):
        d = x - c
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    return LevelSet(
        phi=lambda x: np.linalg.norm(x - c, axis=-1) - radius,
        gradient=grad,
        snap_tol=snap_tol,
        name=f"sphere({radius:g})",
    )


def tori_components(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r2 = (math.pi / 5) ** 2
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    p1 = (np.sqrt((x1 + 0.3) ** 2 + x2**2) - 0.2) ** 2 + x3**2 - r2
    p2 = (np.sqrt((x1 - 0.3) ** 2 + x3**2) - 0.2) ** 2 + x2**2 - r2
    return p1, p2


def tori_levelset(snap_tol: float = 1e-8) -> LevelSet:
    """Two twisted tori, phi = min(phi1, phi2)."""

    def phi(x):
        p1, p2 = tori_components(x)
        return np.minimum(p1, p2)

    def grad(x):
        x = np.atleast_2d(x)
        x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
        r1 = np.sqrt((x1 + 0.3) ** 2 + x2**2)
        r2 = np.sqrt((x1 - 0.3) ** 2 + x3**2)
        g1 = np.stack([2 * (r1 - 0.2) * (x1 + 0.3) / r1, 2 * (r1 - 0.2) * x2 / r1, 2 * x3], axis=1)
        g2 = np.stack([2 * (r2 - 0.2) * (x1 - 0.3) / r2, 2 * x2, 2 * (r2 - 0.2) * x3 / r2], axis=1)
        p1, p2 = tori_components(x)
        return np.where((p1 <= p2)[:, None], g1, g2)

    return LevelSet(phi=phi, gradient=grad, snap_tol=snap_tol, name="tori")


# --------------------------------------------------------------------------
# cut elements
# --------------------------------------------------------------------------


@dataclass
class CutPoint:
    edge_id: int
    local_edge: int
    point: np.ndarray
    t: float
    node_id: int


@dataclass
class CutElement:
    """Geometry of one element together with its boundary triangulation.

    Local points are the 4 vertices followed by the cut points.  Regions are
    ordered so that plane ``m`` separates region ``m`` from region ``m+1`` and
    its normal points into region ``m+1``.  Single-cut elements put the
    ``-`` side first.
    """

    element_id: int
    vertices: np.ndarray
    vertex_ids: np.ndarray
    vertex_signs: np.ndarray
    cut_points: list[CutPoint] = field(default_factory=list)
    region_signs: np.ndarray | None = None
    points: np.ndarray | None = None
    node_ids: np.ndarray | None = None
    point_region: np.ndarray | None = None
    boundary_tris: np.ndarray | None = None
    tri_region: np.ndarray | None = None
    tri_face: np.ndarray | None = None
    connectors: list[tuple[int, int]] = field(default_factory=list)
    plane_normals: np.ndarray | None = None
    anchors: np.ndarray | None = None
    gamma_tris: list[np.ndarray] = field(default_factory=list)
    region_volumes: np.ndarray | None = None
    region_centroids: np.ndarray | None = None
    subtets: np.ndarray | None = None
    subtet_region: np.ndarray | None = None
    edges: np.ndarray | None = None
    tri_edges: np.ndarray | None = None
    tri_edge_sign: np.ndarray | None = None
    edge_ids: np.ndarray | None = None
    face_ids: np.ndarray | None = None
    face_sign: np.ndarray | None = None

    @property
    def n_regions(self) -> int:
        return len(self.region_signs)

    @property
    def is_interface(self) -> bool:
        return self.n_regions > 1

    @property
    def measure(self) -> float:
        v = self.vertices
        return float(np.linalg.det(v[1:] - v[0])) / 6.0

    @property
    def diameter(self) -> float:
        v = self.vertices
        return float(np.max(np.linalg.norm(v[LOCAL_EDGES[:, 0]] - v[LOCAL_EDGES[:, 1]], axis=1)))

    @property
    def tri_coords(self) -> np.ndarray:
        return self.points[self.boundary_tris]

    @property
    def signature(self) -> tuple[int, ...]:
        return (len(self.points), len(self.edges), len(self.boundary_tris), self.n_regions, len(self.subtets))

    def region_anchor(self, r: int) -> np.ndarray:
        return self.anchors[max(r - 1, 0)]

    def max_angle(self) -> float:
        return float(np.max(_triangle_angles(self.tri_coords)))


def _triangle_angles(t: np.ndarray) -> np.ndarray:
    out = []
    for k in range(3):
        a = t[:, (k + 1) % 3] - t[:, k]
        b = t[:, (k + 2) % 3] - t[:, k]
        cosang = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        out.append(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return np.stack(out, axis=1)


def triangulate_boundary(cut: CutElement) -> np.ndarray:
    """Split every face of a single-cut element into triangles.

    A face with two cut points becomes the triangle at its isolated vertex
    plus the remaining quadrilateral cut along its shorter diagonal; ties go
    to the diagonal through the lowest global node id.
    """
    if len(cut.cut_points) < 3:
        raise DegenerateGeometryError(
            f"element {cut.element_id} has {len(cut.cut_points)} cut points, need at least 3"
        )
    by_edge = {}
    pts = [np.asarray(v, float) for v in cut.vertices]
    ids = [int(i) for i in cut.vertex_ids]
    for cp in sorted(cut.cut_points, key=lambda c: c.local_edge):
        by_edge[cp.local_edge] = len(pts)
        pts.append(np.asarray(cp.point, float))
        ids.append(int(cp.node_id))
    edge_index = {(int(a), int(b)): k for k, (a, b) in enumerate(LOCAL_EDGES)}

    def cut_on(a, b):
        return by_edge.get(edge_index[(min(a, b), max(a, b))])

    tris, faces, connectors = [], [], []
    for fi, (a, b, c) in enumerate(OUTWARD_FACES):
        cyc = []
        for u, v in ((a, b), (b, c), (c, a)):
            cyc.append(int(u))
            q = cut_on(u, v)
            if q is not None:
                cyc.append(q)
        if len(cyc) == 3:
            tris.append(cyc)
            faces.append(fi)
            continue
        if len(cyc) != 5:
            raise DegenerateGeometryError(f"face {fi} of element {cut.element_id} has an odd number of cut points")
        # rotate so the isolated vertex (both neighbours are cut points) leads
        k = next(i for i in range(5) if cyc[i] < 4 and cyc[(i - 1) % 5] >= 4 and cyc[(i + 1) % 5] >= 4)
        A, P, B, C, Q = (cyc[(k + j) % 5] for j in range(5))
        tris.append([A, P, Q])
        d_pc = np.linalg.norm(pts[P] - pts[C])
        d_bq = np.linalg.norm(pts[B] - pts[Q])
        if abs(d_pc - d_bq) <= 1e-12 * max(d_pc, d_bq):
            lowest = min((P, B, C, Q), key=lambda i: ids[i])
            use_pc = lowest in (P, C)
        else:
            use_pc = d_pc < d_bq
        if use_pc:
            tris += [[P, B, C], [P, C, Q]]
        else:
            tris += [[P, B, Q], [B, C, Q]]
        faces += [fi, fi, fi]
        connectors.append((P, Q))

    cut.points = np.array(pts)
    cut.node_ids = np.array(ids, dtype=np.int64)
    cut.boundary_tris = np.array(tris, dtype=np.int64)
    cut.tri_face = np.array(faces, dtype=np.int64)
    cut.connectors = connectors
    # region 0 is the '-' side
    cut.region_signs = np.array([-1, 1])
    pr = np.full(len(pts), -1, dtype=np.int64)
    pr[:4] = np.where(np.asarray(cut.vertex_signs) < 0, 0, 1)
    cut.point_region = pr
    tri_region = []
    for t in cut.boundary_tris:
        r = [pr[i] for i in t if pr[i] >= 0]
        tri_region.append(r[0])
    cut.tri_region = np.array(tri_region, dtype=np.int64)
    return cut.boundary_tris


def _cycle(connectors: list[tuple[int, int]]) -> list[int]:
    nbr: dict[int, list[int]] = {}
    for a, b in connectors:
        nbr.setdefault(a, []).append(b)
        nbr.setdefault(b, []).append(a)
    if any(len(v) != 2 for v in nbr.values()):
        raise TopologyError("interface connectors do not form a simple cycle")
    start = min(nbr)
    order, prev, cur = [start], None, start
    while True:
        nxt = nbr[cur][0] if nbr[cur][0] != prev else nbr[cur][1]
        if nxt == start:
            break
        order.append(nxt)
        prev, cur = cur, nxt
    if len(order) != len(nbr):
        raise TopologyError("interface connectors form more than one cycle")
    return order


def _fan(anchor: np.ndarray, ring: np.ndarray, normal: np.ndarray) -> np.ndarray:
    k = len(ring)
    tris = np.stack([np.broadcast_to(anchor, (k, 3)), ring, np.roll(ring, -1, axis=0)], axis=1)
    cr = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    if np.sum(cr @ normal) < 0:
        tris = tris[:, [0, 2, 1]]
    return tris


def fit_interface_plane(cut: CutElement) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Plane through 3 cut points or least-squares plane through 4.

    The anchor is the cut-point centroid (which lies on the fitted plane) and
    the normal points from the ``-`` region into the ``+`` region, i.e. along
    grad phi.
    """
    ring_idx = _cycle(cut.connectors)
    ring = cut.points[ring_idx]
    if len(ring) < 3:
        raise DegenerateGeometryError("fewer than three cut points")
    centroid = ring.mean(axis=0)
    _, s, vt = np.linalg.svd(ring - centroid)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise DegenerateGeometryError(f"collinear cut points in element {cut.element_id}")
    normal = vt[2]
    plus = cut.vertices[np.asarray(cut.vertex_signs) > 0]
    if np.dot(plus.mean(axis=0) - centroid, normal) < 0:
        normal = -normal
    gamma = _fan(centroid, ring, normal)
    cut.plane_normals = normal[None, :]
    cut.anchors = centroid[None, :]
    cut.gamma_tris = [gamma]
    return [(normal, centroid, gamma)]


def region_volumes(cut: CutElement) -> np.ndarray:
    """Region volumes from the divergence theorem over each closed surface.

    Also fills the fan sub-tetrahedra used only for quadrature.
    """
    M = cut.n_regions
    scale = cut.diameter
    base = cut.vertices[0]
    coords = cut.tri_coords
    vols, cents, subtets, subreg = [], [], [], []
    for r in range(M):
        surf = [coords[cut.tri_region == r]]
        if r >= 1:
            surf.append(cut.gamma_tris[r - 1][:, [0, 2, 1]])
        if r < M - 1:
            surf.append(cut.gamma_tris[r])
        S = np.concatenate(surf, axis=0) - base
        cr = np.cross(S[:, 1] - S[:, 0], S[:, 2] - S[:, 0])
        flux = 0.5 * np.linalg.norm(cr.sum(axis=0))
        if flux > 1e-9 * scale**2:
            raise TopologyError(f"region {r} of element {cut.element_id} is not closed (flux {flux:.3e})")
        vol = float(np.einsum("ij,ij->i", S[:, 0], cr).sum() / 6.0)
        if vol <= 0:
            raise DegenerateGeometryError(f"region {r} of element {cut.element_id} has volume {vol:.3e}")
        c = S.reshape(-1, 3).mean(axis=0)
        st = np.concatenate([np.broadcast_to(c, (len(S), 1, 3)), S], axis=1)
        sv = np.linalg.det(st[:, 1:] - st[:, :1]) / 6.0
        vols.append(vol)
        cents.append((sv[:, None] * st.mean(axis=1)).sum(axis=0) / sv.sum() + base)
        subtets.append(st + base)
        subreg.append(np.full(len(st), r))
    cut.region_volumes = np.array(vols)
    cut.region_centroids = np.array(cents)
    cut.subtets = np.concatenate(subtets, axis=0)
    cut.subtet_region = np.concatenate(subreg)
    return cut.region_volumes


def _local_edges(cut: CutElement) -> None:
    tris = cut.boundary_tris
    a = tris.ravel()
    b = np.roll(tris, -1, axis=1).ravel()
    ga, gb = cut.node_ids[a], cut.node_ids[b]
    lo = np.where(ga < gb, a, b)
    hi = np.where(ga < gb, b, a)
    key = cut.node_ids[lo] * (int(cut.node_ids.max()) + 1) + cut.node_ids[hi]
    uniq, first, inv = np.unique(key, return_index=True, return_inverse=True)
    cut.edges = np.stack([lo[first], hi[first]], axis=1)
    cut.tri_edges = inv.reshape(tris.shape)
    cut.tri_edge_sign = np.where(ga < gb, 1, -1).reshape(tris.shape)
    if cut.edge_ids is None:
        cut.edge_ids = np.full(len(cut.edges), -1, dtype=np.int64)
    if cut.face_ids is None:
        cut.face_ids = np.full(len(tris), -1, dtype=np.int64)
        cut.face_sign = np.ones(len(tris), dtype=np.int64)


def make_cut_element(element_id, vertices, vertex_ids, vertex_signs, cut_points) -> CutElement:
    cut = CutElement(
        element_id=int(element_id),
        vertices=np.asarray(vertices, float),
        vertex_ids=np.asarray(vertex_ids, dtype=np.int64),
        vertex_signs=np.asarray(vertex_signs, dtype=np.int64),
        cut_points=list(cut_points),
    )
    triangulate_boundary(cut)
    fit_interface_plane(cut)
    region_volumes(cut)
    _local_edges(cut)
    return cut


def plain_element(vertices, vertex_ids=None, sign: int = 1, element_id: int = -1) -> CutElement:
    """A non-interface element in the same local format (one region)."""
    v = np.asarray(vertices, float)
    if np.linalg.det(v[1:] - v[0]) <= 0:
        raise InvalidArgumentError("vertices must be positively oriented")
    ids = np.arange(4) if vertex_ids is None else np.asarray(vertex_ids, dtype=np.int64)
    cut = CutElement(element_id, v, ids, np.full(4, sign))
    cut.points = v.copy()
    cut.node_ids = ids.copy()
    cut.point_region = np.zeros(4, dtype=np.int64)
    cut.boundary_tris = OUTWARD_FACES.copy()
    cut.tri_face = np.arange(4)
    cut.tri_region = np.zeros(4, dtype=np.int64)
    cut.region_signs = np.array([sign])
    cut.plane_normals = np.zeros((0, 3))
    cut.anchors = v.mean(axis=0)[None, :]
    cut.gamma_tris = []
    region_volumes(cut)
    _local_edges(cut)
    return cut


def cut_tetrahedron(vertices, levelset: LevelSet | Callable, cut_rule: str = "linear", snap_tol: float = 1e-8) -> CutElement:
    """Cut a standalone tetrahedron; returns a one-region element if uncut."""
    v = np.asarray(vertices, float)
    ls = levelset if isinstance(levelset, LevelSet) else LevelSet(levelset, snap_tol=snap_tol)
    h = float(np.max(np.linalg.norm(v[LOCAL_EDGES[:, 0]] - v[LOCAL_EDGES[:, 1]], axis=1)))
    phi, sign = _snap(ls(v), ls.snap_tol * h, ls.snap_tol)
    if np.all(sign == sign[0]):
        return plain_element(v, sign=int(sign[0]))
    a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    t = _edge_roots(ls, v[a], v[b], phi[a], phi[b], cut_rule)
    cps = []
    for k in range(6):
        if sign[a[k]] != sign[b[k]]:
            cps.append(CutPoint(k, k, v[a[k]] + t[k] * (v[b[k]] - v[a[k]]), float(t[k]), 4 + k))
    return make_cut_element(-1, v, np.arange(4), sign, cps)


def cut_element_from_planes(vertices, planes: Sequence[tuple[Sequence[float], Sequence[float]]], first_sign: int = 1, element_id: int = -1) -> CutElement:
    """Programmatic multi-cut element: ``planes`` is a list of (normal, point).

    The planes must not meet inside the element.  They are ordered so that
    normals point towards increasing region index; region signs alternate
    starting from ``first_sign``.
    """
    v = np.asarray(vertices, float)
    normals = np.array([np.asarray(n, float) / np.linalg.norm(n) for n, _ in planes])
    offsets = np.array([np.dot(nn, p) for nn, (_, p) in zip(normals, planes)])
    scale = float(np.max(np.abs(v - v.mean(axis=0))))
    tol = 1e-12 * scale

    def region_of(x):
        return int(np.sum(normals @ x - offsets > 0))

    pts = [p for p in v]
    ids = list(range(4))

    def add_point(x):
        for i, q in enumerate(pts):
            if np.linalg.norm(q - x) <= 1e-10 * scale:
                return i
        pts.append(x)
        ids.append(len(ids))
        return len(pts) - 1

    def split(poly, k):
        below, above = [], []
        n_ = len(poly)
        for i in range(n_):
            p, q = poly[i], poly[(i + 1) % n_]
            sp = normals[k] @ pts[p] - offsets[k]
            sq = normals[k] @ pts[q] - offsets[k]
            (above if sp > 0 else below).append(p)
            if (sp > tol and sq < -tol) or (sp < -tol and sq > tol):
                t = sp / (sp - sq)
                j = add_point(pts[p] + t * (pts[q] - pts[p]))
                below.append(j)
                above.append(j)
        return [x for x in (below, above) if len(x) >= 3]

    for k in range(len(planes)):
        if np.any(np.abs(normals[k] @ v.T - offsets[k]) <= tol):
            raise DegenerateGeometryError("a plane passes through an element vertex")

    tris, faces = [], []
    for fi, face in enumerate(OUTWARD_FACES):
        pieces = [list(int(i) for i in face)]
        for k in range(len(planes)):
            pieces = [q for p in pieces for q in split(p, k)]
        for poly in pieces:
            for j in range(1, len(poly) - 1):
                tris.append([poly[0], poly[j], poly[j + 1]])
                faces.append(fi)

    M = len(planes) + 1
    cut = CutElement(element_id, v, np.arange(4), np.zeros(4, dtype=np.int64))
    cut.points = np.array(pts)
    cut.node_ids = np.array(ids, dtype=np.int64)
    cut.boundary_tris = np.array(tris, dtype=np.int64)
    cut.tri_face = np.array(faces, dtype=np.int64)
    cut.tri_region = np.array([region_of(cut.points[t].mean(axis=0)) for t in cut.boundary_tris])
    vreg = np.array([region_of(x) for x in v])
    cut.region_signs = np.array([first_sign * (-1) ** r for r in range(M)])
    cut.vertex_signs = cut.region_signs[vreg]
    cut.point_region = np.full(len(pts), -1, dtype=np.int64)
    cut.point_region[:4] = vreg
    if set(np.unique(cut.tri_region)) != set(range(M)):
        raise DegenerateGeometryError("some plane does not cut the element")
    anchors, gammas = [], []
    for k in range(len(planes)):
        on = [i for i in range(4, len(pts)) if abs(normals[k] @ cut.points[i] - offsets[k]) <= 1e-9 * scale]
        ring = cut.points[on]
        c = ring.mean(axis=0)
        t1 = ring[0] - c
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(normals[k], t1)
        ang = np.arctan2((ring - c) @ t2, (ring - c) @ t1)
        ring = ring[np.argsort(ang)]
        anchors.append(c)
        gammas.append(_fan(c, ring, normals[k]))
    cut.plane_normals = normals
    cut.anchors = np.array(anchors)
    cut.gamma_tris = gammas
    region_volumes(cut)
    _local_edges(cut)
    return cut


# --------------------------------------------------------------------------
# classification of a whole mesh
# --------------------------------------------------------------------------


@dataclass
class CutMesh:
    mesh: BackgroundMesh
    levelset: LevelSet
    node_phi: np.ndarray
    node_sign: np.ndarray
    snapped: np.ndarray
    interface: np.ndarray
    edge_cut: np.ndarray
    cut_node: np.ndarray
    cut_param: np.ndarray
    cut_coords: np.ndarray
    cuts: list[CutElement]
    elem2cut: np.ndarray
    cut_rule: str

    @property
    def classification(self) -> np.ndarray:
        return self.interface

    def element_sign(self) -> np.ndarray:
        return self.node_sign[self.mesh.elements[:, 0]]


def _snap(phi: np.ndarray, tol: float, snap_tol: float) -> tuple[np.ndarray, np.ndarray]:
    phi = np.asarray(phi, float).copy()
    if not np.all(np.isfinite(phi)):
        raise DegenerateGeometryError("level set is not finite at some vertex")
    if snap_tol <= 0:
        if np.any(phi == 0):
            raise DegenerateGeometryError("level set vanishes at a vertex")
    else:
        small = np.abs(phi) < tol
        phi[small] = np.where(phi[small] < 0, -tol, tol)
    return phi, np.where(phi < 0, -1, 1)


def _edge_roots(ls: LevelSet, xa, xb, fa, fb, rule: str) -> np.ndarray:
    """Root parameter t in (0,1) along xa->xb of every sign-changing edge."""
    fa = np.asarray(fa, float)
    fb = np.asarray(fb, float)
    if rule == "linear":
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(np.sign(fa) != np.sign(fb), fa / (fa - fb), 0.5)
    if rule != "bisection":
        raise InvalidArgumentError(f"unknown cut rule {rule!r}")
    lo = np.zeros(len(fa))
    hi = np.ones(len(fa))
    flo, fhi = fa.copy(), fb.copy()
    d = xb - xa
    for _ in range(45):
        mid = 0.5 * (lo + hi)
        fm = ls(xa + mid[:, None] * d)
        left = np.sign(fm) == np.sign(flo)
        lo = np.where(left, mid, lo)
        flo = np.where(left, fm, flo)
        hi = np.where(left, hi, mid)
        fhi = np.where(left, fhi, fm)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = lo + (hi - lo) * flo / (flo - fhi)
    return np.where(np.isfinite(t), np.clip(t, lo, hi), 0.5 * (lo + hi))


def classify_and_cut(mesh: BackgroundMesh, ls: LevelSet, cut_rule: str = "linear") -> CutMesh:
    """Classify elements and build a CutElement for every interface element.

    ``cut_rule='linear'`` places the cut point at the root of the linear
    interpolant of phi along the edge, so all cut points of an element lie
    on one plane.  ``cut_rule='bisection'`` locates the root of phi itself.
    """
    phi, sign = _snap(ls(mesh.nodes), ls.snap_tol * mesh.h, ls.snap_tol)
    raw = ls(mesh.nodes)
    snapped = np.nonzero(phi != raw)[0]
    a, b = mesh.edges[:, 0], mesh.edges[:, 1]
    edge_cut = sign[a] != sign[b]
    cut_ids = np.nonzero(edge_cut)[0]
    cut_node = np.full(len(mesh.edges), -1, dtype=np.int64)
    cut_node[cut_ids] = mesh.n_nodes + np.arange(len(cut_ids))
    t = np.zeros(len(mesh.edges))
    xa, xb = mesh.nodes[a[cut_ids]], mesh.nodes[b[cut_ids]]
    t[cut_ids] = _edge_roots(ls, xa, xb, phi[a[cut_ids]], phi[b[cut_ids]], cut_rule)
    coords = xa + t[cut_ids, None] * (xb - xa)

    es = sign[mesh.elements]
    interface = np.any(es != es[:, :1], axis=1)
    cuts = []
    elem2cut = np.full(mesh.n_elements, -1, dtype=np.int64)
    for e in np.nonzero(interface)[0]:
        verts = mesh.elements[e]
        cps = []
        for k in range(6):
            ge = mesh.elem2edge[e, k]
            if edge_cut[ge]:
                ia, ib = verts[LOCAL_EDGES[k]]
                tt = t[ge] if ia < ib else 1.0 - t[ge]
                cps.append(CutPoint(int(ge), k, coords[cut_node[ge] - mesh.n_nodes], float(tt), int(cut_node[ge])))
        elem2cut[e] = len(cuts)
        cuts.append(make_cut_element(e, mesh.nodes[verts], verts, es[e], cps))
    return CutMesh(mesh, ls, phi, sign, snapped, interface, edge_cut, cut_node, t, coords, cuts, elem2cut, cut_rule)


# --------------------------------------------------------------------------
# global topology of the cut mesh
# --------------------------------------------------------------------------


@dataclass
class CutMeshTopology:
    cutmesh: CutMesh
    nodes: np.ndarray
    edges: np.ndarray
    faces: np.ndarray
    face_mothers: np.ndarray
    face2elem: np.ndarray
    face_nodes: np.ndarray
    face_edges: np.ndarray
    face_edge_sign: np.ndarray
    face_row_ids: np.ndarray
    face_row_sign: np.ndarray
    elem_node_ptr: np.ndarray
    elem_node_idx: np.ndarray
    elem_edge_ptr: np.ndarray
    elem_edge_idx: np.ndarray
    elem_face_ptr: np.ndarray
    elem_face_idx: np.ndarray
    tri_edges: np.ndarray
    plain_ids: np.ndarray
    plain_edges: np.ndarray
    plain_edge_sign: np.ndarray
    plain_faces: np.ndarray
    boundary_face: np.ndarray
    boundary_node: np.ndarray
    boundary_edge: np.ndarray

    @property
    def mesh(self) -> BackgroundMesh:
        return self.cutmesh.mesh

    @property
    def cuts(self) -> list[CutElement]:
        return self.cutmesh.cuts

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_elements(self) -> int:
        return self.mesh.n_elements

    def dof_counts(self) -> dict[str, int]:
        return {"node": self.n_nodes, "edge": self.n_edges, "face": self.n_faces, "element": self.n_elements}

    def elem_nodes(self, e: int) -> np.ndarray:
        return self.elem_node_idx[self.elem_node_ptr[e] : self.elem_node_ptr[e + 1]]

    def elem_edges(self, e: int) -> np.ndarray:
        return self.elem_edge_idx[self.elem_edge_ptr[e] : self.elem_edge_ptr[e + 1]]

    def elem_faces(self, e: int) -> np.ndarray:
        return self.elem_face_idx[self.elem_face_ptr[e] : self.elem_face_ptr[e + 1]]

    def interface_edges(self) -> np.ndarray:
        return np.unique(np.concatenate([c.edge_ids for c in self.cuts])) if self.cuts else np.zeros(0, np.int64)


def _csr(sizes: np.ndarray) -> np.ndarray:
    ptr = np.zeros(len(sizes) + 1, dtype=np.int64)
    np.cumsum(sizes, out=ptr[1:])
    return ptr


def build_topology(cm: CutMesh) -> CutMeshTopology:
    """Global node/edge/face numbering of the cut mesh plus face-row tables."""
    mesh = cm.mesh
    nb = mesh.n_nodes
    nodes = np.vstack([mesh.nodes, cm.cut_coords])
    nv = len(nodes)

    registry: dict[int, list[tuple[int, int, int]]] = {}
    for cut in cm.cuts:
        e = cut.element_id
        for fi in range(4):
            bgf = int(mesh.elem2face[e, fi])
            tris = cut.node_ids[cut.boundary_tris[cut.tri_face == fi]]
            tset = sorted(tuple(sorted(int(x) for x in t)) for t in tris)
            old = registry.get(bgf)
            if old is None:
                registry[bgf] = tset
            elif old != tset:
                raise ConformityError(f"face {bgf} is triangulated differently by its two mothers")

    nf0 = len(mesh.faces)
    count = np.ones(nf0, dtype=np.int64)
    regf = np.array(sorted(registry), dtype=np.int64)
    for f in regf:
        count[f] = len(registry[f])
    fptr = np.zeros(nf0 + 1, dtype=np.int64)
    np.cumsum(count, out=fptr[1:])
    faces = np.empty((fptr[-1], 3), dtype=np.int64)
    simple = np.ones(nf0, bool)
    simple[regf] = False
    faces[fptr[:-1][simple]] = mesh.faces[simple]
    tri_id: dict[tuple[int, int, int], int] = {}
    for f in regf:
        for j, t in enumerate(registry[f]):
            faces[fptr[f] + j] = t
            tri_id[t] = int(fptr[f] + j)

    pa = faces[:, [0, 1, 0]]
    pb = faces[:, [1, 2, 2]]
    ekey = pa * nv + pb
    uniq, inv = np.unique(ekey.ravel(), return_inverse=True)
    edges = np.stack([uniq // nv, uniq % nv], axis=1)
    tri_edges = inv.reshape(-1, 3)

    def edge_lookup(a, b):
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        k = np.searchsorted(uniq, lo * nv + hi)
        if np.any(k >= len(uniq)) or np.any(uniq[np.minimum(k, len(uniq) - 1)] != lo * nv + hi):
            raise TopologyError("edge missing from the global edge list")
        return k

    # non-interface elements
    T = mesh.n_elements
    plain = np.nonzero(~cm.interface)[0]
    el = mesh.elements[plain]
    plain_edges = edge_lookup(el[:, LOCAL_EDGES[:, 0]], el[:, LOCAL_EDGES[:, 1]])
    plain_edge_sign = np.where(el[:, LOCAL_EDGES[:, 0]] < el[:, LOCAL_EDGES[:, 1]], 1, -1)
    plain_faces = fptr[mesh.elem2face[plain]]

    # attach global ids to cut elements
    for cut in cm.cuts:
        gi = cut.node_ids
        cut.edge_ids = edge_lookup(gi[cut.edges[:, 0]], gi[cut.edges[:, 1]])
        g = gi[cut.boundary_tris]
        cut.face_ids = np.array([tri_id[tuple(sorted(int(x) for x in t))] for t in g], dtype=np.int64)
        cut.face_sign = _triple_parity(g)

    # per-element gather lists and face rows
    n_nodes = np.full(T, 4, dtype=np.int64)
    n_edges = np.full(T, 6, dtype=np.int64)
    n_faces = np.full(T, 4, dtype=np.int64)
    for cut in cm.cuts:
        e = cut.element_id
        n_nodes[e], n_edges[e], n_faces[e] = len(cut.points), len(cut.edges), len(cut.boundary_tris)
    nptr, eptr, fptr_e = (_csr(c) for c in (n_nodes, n_edges, n_faces))
    nidx = np.empty(nptr[-1], dtype=np.int64)
    eidx = np.empty(eptr[-1], dtype=np.int64)
    fidx = np.empty(fptr_e[-1], dtype=np.int64)
    nidx[(nptr[plain][:, None] + np.arange(4)).ravel()] = el.ravel()
    eidx[(eptr[plain][:, None] + np.arange(6)).ravel()] = plain_edges.ravel()
    fidx[(fptr_e[plain][:, None] + np.arange(4)).ravel()] = plain_faces.ravel()
    nrows = fptr_e[-1]
    row_nodes = np.empty((nrows, 3), dtype=np.int64)
    rows_plain = (fptr_e[plain][:, None] + np.arange(4)).ravel()
    row_nodes[rows_plain] = el[:, OUTWARD_FACES].reshape(-1, 3)
    for cut in cm.cuts:
        e = cut.element_id
        nidx[nptr[e] : nptr[e + 1]] = cut.node_ids
        eidx[eptr[e] : eptr[e + 1]] = cut.edge_ids
        fidx[fptr_e[e] : fptr_e[e + 1]] = cut.face_ids
        row_nodes[fptr_e[e] : fptr_e[e + 1]] = cut.node_ids[cut.boundary_tris]
    face2elem = np.repeat(np.arange(T), n_faces)
    row_ids = fidx
    row_sign = _triple_parity(row_nodes)
    face_mothers = _mothers(row_ids, face2elem, len(faces))
    row_edges = edge_lookup(row_nodes, np.roll(row_nodes, -1, axis=1))
    row_edge_sign = np.where(row_nodes < np.roll(row_nodes, -1, axis=1), 1, -1)

    bface = np.zeros(len(faces), bool)
    bg_b = np.nonzero(mesh.boundary_face_mask())[0]
    bface[np.concatenate([np.arange(fptr[f], fptr[f + 1]) for f in bg_b])] = True
    bnode = np.zeros(nv, bool)
    bnode[faces[bface].ravel()] = True
    bedge = np.zeros(len(edges), bool)
    bedge[tri_edges[bface].ravel()] = True

    topo = CutMeshTopology(
        cm, nodes, edges, faces, face_mothers, face2elem, row_nodes, row_edges, row_edge_sign,
        row_ids, row_sign, nptr, nidx, eptr, eidx, fptr_e, fidx, tri_edges, plain, plain_edges,
        plain_edge_sign, plain_faces, bface, bnode, bedge,
    )
    return topo


def build_cut_mesh(n: int, ls: LevelSet | None, box: Box | None = None, cut_rule: str = "linear") -> CutMeshTopology:
    """Background mesh, cut and topology in one call (``ls=None`` means no interface)."""
    mesh = build_background_mesh(n, box)
    if ls is None:
        ls = LevelSet(lambda x: np.ones(len(x)), name="none")
    return build_topology(classify_and_cut(mesh, ls, cut_rule))


# --------------------------------------------------------------------------
# batched element data for vectorized kernels
# --------------------------------------------------------------------------


@dataclass
class CutBatch:
    element_ids: np.ndarray
    pts: np.ndarray
    node_ids: np.ndarray
    tris: np.ndarray
    tri_region: np.ndarray
    edges: np.ndarray
    edge_ids: np.ndarray
    tri_edges: np.ndarray
    tri_edge_sign: np.ndarray
    face_ids: np.ndarray
    face_sign: np.ndarray
    region_signs: np.ndarray
    normals: np.ndarray
    anchors: np.ndarray
    volumes: np.ndarray
    centroids: np.ndarray
    subtets: np.ndarray
    subtet_region: np.ndarray
    diameter: np.ndarray
    measure: np.ndarray

    def __len__(self) -> int:
        return len(self.element_ids)

    @property
    def n_regions(self) -> int:
        return self.region_signs.shape[1]


def batch_elements(cuts: Sequence[CutElement]) -> list[CutBatch]:
    """Group elements of equal local structure and stack their arrays."""
    groups: dict[tuple, list[CutElement]] = {}
    for c in cuts:
        groups.setdefault(c.signature, []).append(c)
    out = []
    for _, cs in sorted(groups.items()):
        st = lambda name: np.stack([getattr(c, name) for c in cs])  # noqa: E731
        out.append(
            CutBatch(
                element_ids=np.array([c.element_id for c in cs]),
                pts=st("points"),
                node_ids=st("node_ids"),
                tris=st("boundary_tris"),
                tri_region=st("tri_region"),
                edges=st("edges"),
                edge_ids=st("edge_ids"),
                tri_edges=st("tri_edges"),
                tri_edge_sign=st("tri_edge_sign"),
                face_ids=st("face_ids"),
                face_sign=st("face_sign"),
                region_signs=st("region_signs"),
                normals=np.stack([c.plane_normals.reshape(-1, 3) for c in cs]),
                anchors=st("anchors"),
                volumes=st("region_volumes"),
                centroids=st("region_centroids"),
                subtets=st("subtets"),
                subtet_region=st("subtet_region"),
                diameter=np.array([c.diameter for c in cs]),
                measure=np.array([c.measure for c in cs]),
            )
        )
    return out


# --------------------------------------------------------------------------
# VTK output
# --------------------------------------------------------------------------


def write_vtk_mesh(path: str | Path, mesh: BackgroundMesh, cell_data: dict[str, np.ndarray] | None = None) -> None:
    """Legacy ASCII unstructured grid of the background tetrahedra."""
    lines = ["# vtk DataFile Version 3.0", "background mesh", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {mesh.n_nodes} double")
    lines += [f"{x:.16g} {y:.16g} {z:.16g}" for x, y, z in mesh.nodes]
    T = mesh.n_elements
    lines.append(f"CELLS {T} {5 * T}")
    lines += [f"4 {a} {b} {c} {d}" for a, b, c, d in mesh.elements]
    lines.append(f"CELL_TYPES {T}")
    lines += ["10"] * T
    if cell_data:
        lines.append(f"CELL_DATA {T}")
        for name, vals in cell_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{float(v):.16g}" for v in vals]
    Path(path).write_text("\n".join(lines) + "\n")


def write_vtk_triangles(path: str | Path, topo: CutMeshTopology) -> None:
    """Boundary-triangulation triangles of all interface elements."""
    rows = np.isin(topo.face2elem, [c.element_id for c in topo.cuts])
    tris = topo.face_nodes[rows]
    used, local = np.unique(tris, return_inverse=True)
    local = local.reshape(-1, 3)
    lines = ["# vtk DataFile Version 3.0", "interface boundary triangulation", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {len(used)} double")
    lines += [f"{x:.16g} {y:.16g} {z:.16g}" for x, y, z in topo.nodes[used]]
    lines.append(f"CELLS {len(local)} {4 * len(local)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in local]
    lines.append(f"CELL_TYPES {len(local)}")
    lines += ["5"] * len(local)
    lines.append(f"CELL_DATA {len(local)}")
    lines += ["SCALARS element int 1", "LOOKUP_TABLE default"]
    lines += [str(int(e)) for e in topo.face2elem[rows]]
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# geometry invariants
# --------------------------------------------------------------------------


@dataclass
class GeometryReport:
    n_cut: int
    area_residual: float
    volume_residual: float
    max_angle: float
    plane_distance: float | None = None

    def passed(self, tol: float = 1e-12) -> bool:
        ok = self.area_residual <= tol and self.volume_residual <= tol and self.max_angle < math.pi
        if self.plane_distance is not None:
            ok = ok and self.plane_distance <= tol
        return ok


def _areas(tris: np.ndarray) -> np.ndarray:
    return 0.5 * np.linalg.norm(np.cross(tris[..., 1, :] - tris[..., 0, :], tris[..., 2, :] - tris[..., 0, :]), axis=-1)


def partition_residuals(cut: CutElement) -> tuple[float, float]:
    """Relative misfit of the boundary-area and region-volume partitions."""
    face_area = _areas(cut.vertices[OUTWARD_FACES]).sum()
    area = abs(_areas(cut.tri_coords).sum() - face_area) / face_area
    vol = abs(float(np.sum(cut.region_volumes)) - abs(cut.measure)) / abs(cut.measure)
    return float(area), float(vol)


def check_geometry(topo: CutMeshTopology, plane: tuple[Sequence[float], float] | None = None) -> GeometryReport:
    """Partition identities on every cut element; ``plane=(normal, offset)`` adds the planar-exactness check.

    For a planar interface the distance is the largest ``|n.x - offset| / h``
    over the fitted-plane vertices and the tilt of the fitted normal.
    """
    area = vol = angle = 0.0
    dist = None
    if plane is not None:
        nrm = np.asarray(plane[0], float)
        nrm = nrm / np.linalg.norm(nrm)
        dist = 0.0
    h = topo.mesh.h
    for cut in topo.cuts:
        a, v = partition_residuals(cut)
        area, vol = max(area, a), max(vol, v)
        angle = max(angle, cut.max_angle())
        if plane is not None:
            for g, n_fit in zip(cut.gamma_tris, cut.plane_normals.reshape(-1, 3)):
                d = np.max(np.abs(g.reshape(-1, 3) @ nrm - plane[1])) / h
                tilt = np.linalg.norm(np.cross(n_fit, nrm))
                dist = max(dist, float(d), float(tilt))
    return GeometryReport(len(topo.cuts), area, vol, angle, dist)
