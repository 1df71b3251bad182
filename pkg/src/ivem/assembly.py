"""Local stabilized IVE forms, global assembly and DoF-level transfer matrices."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import InvalidArgumentError
from .ifespace import Coefficients
from .mesh import LOCAL_EDGES, CutElement, CutMeshTopology, batch_elements
from .projection import (
    BatchGeometry,
    curl_operators,
    h1_operators,
    value_operators,
)
from .quadrature import gauss_line, tet_points, tet_rule

# f(x, side) with x (N,3) and side (N,) in {-1, 0, +1}; side 0 means "decide from the level set"
Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SchemeConfig:
    coeff: Coefficients = field(default_factory=Coefficients)
    gamma: float = 1.0
    gamma0: float = 1.0
    gamma1: float = 1.0
    kind: str = "h1"
    value_variant: str = "constrained"
    quad_order: int = 2

    def __post_init__(self):
        for name in ("gamma", "gamma0", "gamma1"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidArgumentError(f"{name} must be positive, got {v!r}")
        if self.kind not in ("h1", "hcurl"):
            raise InvalidArgumentError(f"kind must be 'h1' or 'hcurl', got {self.kind!r}")


@dataclass
class LocalMatrices:
    consistency: np.ndarray
    stabilization: np.ndarray
    load: np.ndarray | None
    dofs: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return self.consistency + self.stabilization


# --------------------------------------------------------------------------
# classical P1 / ND0 kernels on whole tetrahedra
# --------------------------------------------------------------------------


def barycentric_gradients(verts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (T,4,3) of the barycentric coordinates and volumes (T,)."""
    E = verts[:, 1:] - verts[:, :1]
    vol = np.linalg.det(E) / 6.0
    Einv = np.linalg.inv(E)  # rows of inv(E)^T are grads of lambda_1..3
    g123 = np.transpose(Einv, (0, 2, 1))
    g = np.concatenate([-g123.sum(axis=1, keepdims=True), g123], axis=1)
    return g, vol


def p1_stiffness(verts: np.ndarray, weight: np.ndarray | float = 1.0) -> np.ndarray:
    g, vol = barycentric_gradients(verts)
    return (np.asarray(weight) * vol)[..., None, None] * np.einsum("tid,tjd->tij", g, g)


def p1_load(verts: np.ndarray, f: Field, side: np.ndarray, order: int = 2) -> np.ndarray:
    x, w = tet_points(verts, order)
    lam, _ = tet_rule(order)
    fx = np.asarray(f(x.reshape(-1, 3), np.repeat(side, x.shape[1])), float).reshape(w.shape)
    return np.einsum("tq,tq,qi->ti", w, fx, lam)


def nd0_matrices(verts: np.ndarray, sign: np.ndarray, alpha, beta) -> tuple[np.ndarray, np.ndarray]:
    """ND0 curl-curl and mass matrices (T,6,6) with global edge signs (T,6)."""
    g, vol = barycentric_gradients(verts)
    i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    curl = 2.0 * np.cross(g[:, i], g[:, j])
    K = (np.asarray(alpha) * vol)[..., None, None] * np.einsum("tad,tbd->tab", curl, curl)
    gg = np.einsum("tad,tbd->tab", g, g)
    mm = (np.eye(4) + 1.0) / 20.0
    M = (
        mm[i][:, i][None] * gg[:, j][:, :, j]
        - mm[i][:, j][None] * gg[:, j][:, :, i]
        - mm[j][:, i][None] * gg[:, i][:, :, j]
        + mm[j][:, j][None] * gg[:, i][:, :, i]
    )
    M = (np.asarray(beta) * vol)[..., None, None] * M
    s = sign[:, :, None] * sign[:, None, :]
    return K * s, M * s


def nd0_basis(verts: np.ndarray, sign: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """ND0 basis values (T,q,6,3) at barycentric points ``lam`` (q,4)."""
    g, _ = barycentric_gradients(verts)
    i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    w = lam[None, :, i, None] * g[:, None, j] - lam[None, :, j, None] * g[:, None, i]
    return w * sign[:, None, :, None]


def nd0_load(verts: np.ndarray, sign: np.ndarray, f: Field, side: np.ndarray, order: int = 2) -> np.ndarray:
    lam, _ = tet_rule(order)
    x, w = tet_points(verts, order)
    fx = np.asarray(f(x.reshape(-1, 3), np.repeat(side, x.shape[1])), float).reshape(w.shape + (3,))
    return np.einsum("tq,tqd,tqkd->tk", w, fx, nd0_basis(verts, sign, lam))


# --------------------------------------------------------------------------
# single-element local forms
# --------------------------------------------------------------------------


def _single(cut: CutElement):
    batch = batch_elements([cut])[0]
    return batch, BatchGeometry(batch)


def _plain_edges(cut: CutElement) -> tuple[np.ndarray, np.ndarray]:
    """Position of each local edge in LOCAL_EDGES and its orientation sign."""
    lut = {(int(a), int(b)): k for k, (a, b) in enumerate(LOCAL_EDGES)}
    perm, sign = [], []
    for a, b in cut.edges:
        if (a, b) in lut:
            perm.append(lut[(a, b)])
            sign.append(1.0)
        else:
            perm.append(lut[(b, a)])
            sign.append(-1.0)
    return np.array(perm), np.array(sign)


def _plain_nd0(cut: CutElement, cfg: SchemeConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    perm, sign = _plain_edges(cut)
    s = np.ones((1, 6))
    s[0, perm] = sign
    side = cut.region_signs[0]
    K, M = nd0_matrices(cut.vertices[None], s, cfg.coeff.alpha(side), cfg.coeff.beta(side))
    return K[0][np.ix_(perm, perm)], M[0][np.ix_(perm, perm)], s


def local_h1(cut: CutElement, cfg: SchemeConfig, f: Field | None = None) -> LocalMatrices:
    if not cut.is_interface:
        side = cut.region_signs[0]
        K = p1_stiffness(cut.vertices[None], cfg.coeff.beta(side))[0]
        load = p1_load(cut.vertices[None], f, np.array([side]), cfg.quad_order)[0] if f is not None else None
        return LocalMatrices(K, np.zeros_like(K), load, cut.node_ids)
    batch, geom = _single(cut)
    ops = h1_operators(batch, cfg.coeff, geom)
    load = ops.load(batch, f, cfg.quad_order)[0] if f is not None else None
    return LocalMatrices(ops.consistency[0], cfg.gamma * ops.stab_unit[0], load, cut.node_ids)


def local_curl_stiff(cut: CutElement, cfg: SchemeConfig) -> LocalMatrices:
    if not cut.is_interface:
        K = _plain_nd0(cut, cfg)[0]
        return LocalMatrices(K, np.zeros_like(K), None, cut.edge_ids)
    batch, geom = _single(cut)
    ops = curl_operators(batch, cfg.coeff, "alpha", geom)
    return LocalMatrices(ops.consistency[0], cfg.gamma1 * ops.stab_unit[0], None, cut.edge_ids)


def local_curl_mass(cut: CutElement, cfg: SchemeConfig) -> LocalMatrices:
    if not cut.is_interface:
        M = _plain_nd0(cut, cfg)[1]
        return LocalMatrices(M, np.zeros_like(M), None, cut.edge_ids)
    batch, geom = _single(cut)
    ops = value_operators(batch, cfg.coeff, cfg.value_variant, geom)
    return LocalMatrices(ops.consistency[0], cfg.gamma0 * ops.stab_unit[0], None, cut.edge_ids)


def local_load(cut: CutElement, f: Field, cfg: SchemeConfig) -> np.ndarray:
    if not cut.is_interface:
        side = np.array([cut.region_signs[0]])
        if cfg.kind == "h1":
            return p1_load(cut.vertices[None], f, side, cfg.quad_order)[0]
        perm, _ = _plain_edges(cut)
        s = _plain_nd0(cut, cfg)[2]
        return nd0_load(cut.vertices[None], s, f, side, cfg.quad_order)[0][perm]
    batch, geom = _single(cut)
    if cfg.kind == "h1":
        return h1_operators(batch, cfg.coeff, geom).load(batch, f, cfg.quad_order)[0]
    return value_operators(batch, cfg.coeff, cfg.value_variant, geom).load(batch, f, cfg.quad_order)[0]


# --------------------------------------------------------------------------
# global assembly
# --------------------------------------------------------------------------


@dataclass
class LinearSystem:
    A: sp.csr_matrix
    b: np.ndarray
    free: np.ndarray
    g: np.ndarray
    dof_kind: str
    A_free: sp.csr_matrix
    b_free: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.A.shape[0]

    @property
    def free_ids(self) -> np.ndarray:
        return np.nonzero(self.free)[0]

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        x = self.g.copy()
        x[self.free] = x_free
        return x

    def dump(self, prefix: str | Path) -> None:
        """MatrixMarket matrix and plain-text right-hand side."""
        prefix = str(prefix)
        scipy.io.mmwrite(prefix + "_A.mtx", self.A_free)
        np.savetxt(prefix + "_b.txt", self.b_free)


class _Triplets:
    def __init__(self):
        self.r, self.c, self.v = [], [], []

    def add(self, dofs: np.ndarray, mats: np.ndarray) -> None:
        k = dofs.shape[1]
        self.r.append(np.repeat(dofs, k, axis=1).ravel())
        self.c.append(np.tile(dofs, (1, k)).ravel())
        self.v.append(mats.ravel())

    def matrix(self, n: int) -> sp.csr_matrix:
        if not self.r:
            return sp.csr_matrix((n, n))
        A = sp.coo_matrix((np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))), shape=(n, n)).tocsr()
        A.sum_duplicates()
        # duplicate summation order differs between (i,j) and (j,i); restore exact symmetry
        A = (0.5 * (A + A.T)).tocsr()
        A.eliminate_zeros()
        return A


def _plain_side(topo: CutMeshTopology) -> np.ndarray:
    cm = topo.cutmesh
    return cm.node_sign[cm.mesh.elements[topo.plain_ids, 0]]


def h1_matrices(topo: CutMeshTopology, coeff: Coefficients, gamma: float = 1.0, f: Field | None = None, quad_order: int = 2):
    """Global H1 stiffness, optional load, and the lumped beta-mass diagonal."""
    mesh = topo.mesh
    n = topo.n_nodes
    trip = _Triplets()
    b = np.zeros(n)
    lumped = np.zeros(n)
    side = _plain_side(topo)
    verts = mesh.nodes[mesh.elements[topo.plain_ids]]
    dofs = mesh.elements[topo.plain_ids]
    beta = coeff.beta(side)
    trip.add(dofs, p1_stiffness(verts, beta))
    vol = np.linalg.det(verts[:, 1:] - verts[:, :1]) / 6.0
    np.add.at(lumped, dofs.ravel(), np.repeat(beta * vol / 4.0, 4))
    if f is not None:
        np.add.at(b, dofs.ravel(), p1_load(verts, f, side, quad_order).ravel())
    for batch in batch_elements(topo.cuts):
        geom = BatchGeometry(batch)
        ops = h1_operators(batch, coeff, geom)
        trip.add(batch.node_ids, ops.consistency + gamma * ops.stab_unit)
        wv = np.einsum("bt,btkp->bp", geom.area / 3.0, geom.Ntri) / geom.boundary_area[:, None]
        mass = np.einsum("bm,bm->b", ops.weights, batch.volumes)
        np.add.at(lumped, batch.node_ids.ravel(), (mass[:, None] * wv).ravel())
        if f is not None:
            np.add.at(b, batch.node_ids.ravel(), ops.load(batch, f, quad_order).ravel())
    return trip.matrix(n), b, lumped


def hcurl_matrices(topo: CutMeshTopology, cfg: SchemeConfig, f: Field | None = None):
    """Global H(curl) stiffness (curl-curl + mass) and optional load."""
    mesh = topo.mesh
    n = topo.n_edges
    trip = _Triplets()
    b = np.zeros(n)
    side = _plain_side(topo)
    verts = mesh.nodes[mesh.elements[topo.plain_ids]]
    K, M = nd0_matrices(verts, topo.plain_edge_sign, cfg.coeff.alpha(side), cfg.coeff.beta(side))
    trip.add(topo.plain_edges, K + M)
    if f is not None:
        np.add.at(b, topo.plain_edges.ravel(), nd0_load(verts, topo.plain_edge_sign, f, side, cfg.quad_order).ravel())
    for batch in batch_elements(topo.cuts):
        geom = BatchGeometry(batch)
        c = curl_operators(batch, cfg.coeff, "alpha", geom)
        v = value_operators(batch, cfg.coeff, cfg.value_variant, geom)
        local = c.consistency + cfg.gamma1 * c.stab_unit + v.consistency + cfg.gamma0 * v.stab_unit
        trip.add(batch.edge_ids, local)
        if f is not None:
            np.add.at(b, batch.edge_ids.ravel(), v.load(batch, f, cfg.quad_order).ravel())
    return trip.matrix(n), b


def node_sides(topo: CutMeshTopology) -> np.ndarray:
    """Sign of each node's side; cut points get 0 (value continuous there)."""
    s = np.zeros(topo.n_nodes, dtype=np.int64)
    s[: topo.mesh.n_nodes] = topo.cutmesh.node_sign
    return s


def edge_sides(topo: CutMeshTopology) -> np.ndarray:
    ns = node_sides(topo)
    a, b = ns[topo.edges[:, 0]], ns[topo.edges[:, 1]]
    return np.where(a != 0, a, b)


def edge_moments(topo: CutMeshTopology, u: Field, edges: np.ndarray | None = None, n_gauss: int = 3) -> np.ndarray:
    """int_e u.t ds over global edges (oriented low to high) by Gauss rule."""
    idx = np.arange(topo.n_edges) if edges is None else np.asarray(edges)
    a = topo.nodes[topo.edges[idx, 0]]
    d = topo.nodes[topo.edges[idx, 1]] - a
    t, w = gauss_line(n_gauss)
    x = a[:, None, :] + t[None, :, None] * d[:, None, :]
    side = np.repeat(edge_sides(topo)[idx], len(t))
    ux = np.asarray(u(x.reshape(-1, 3), side), float).reshape(x.shape)
    return np.einsum("q,eqd,ed->e", w, ux, d)


def _eliminate(A: sp.csr_matrix, b: np.ndarray, fixed: np.ndarray, g: np.ndarray, kind: str) -> LinearSystem:
    free = ~fixed
    A = A.tocsr()
    Af = A[free][:, free].tocsr()
    bf = b[free] - A[free][:, fixed] @ g[fixed]
    return LinearSystem(A, b, free, g, kind, Af, bf)


def assemble_h1(topo: CutMeshTopology, cfg: SchemeConfig, f: Field, exact: Field | None) -> LinearSystem:
    A, b, _ = h1_matrices(topo, cfg.coeff, cfg.gamma, f, cfg.quad_order)
    fixed = topo.boundary_node.copy()
    g = np.zeros(topo.n_nodes)
    if exact is not None:
        g[fixed] = exact(topo.nodes[fixed], node_sides(topo)[fixed])
    return _eliminate(A, b, fixed, g, "node")


def assemble_hcurl(topo: CutMeshTopology, cfg: SchemeConfig, f: Field, exact: Field | None) -> LinearSystem:
    A, b = hcurl_matrices(topo, cfg, f)
    fixed = topo.boundary_edge.copy()
    g = np.zeros(topo.n_edges)
    if exact is not None:
        g[fixed] = edge_moments(topo, exact, np.nonzero(fixed)[0])
    return _eliminate(A, b, fixed, g, "edge")


def assemble(topo: CutMeshTopology, cfg: SchemeConfig, f: Field, dirichlet: Field | None) -> LinearSystem:
    if cfg.kind == "h1":
        return assemble_h1(topo, cfg, f, dirichlet)
    return assemble_hcurl(topo, cfg, f, dirichlet)


# --------------------------------------------------------------------------
# transfers and incidences
# --------------------------------------------------------------------------


@dataclass
class TransferOperators:
    G: sp.csr_matrix
    P_n2e: sp.csr_matrix
    C: sp.csr_matrix
    D: sp.csr_matrix


def build_transfers(topo: CutMeshTopology) -> TransferOperators:
    NV, NE, NF, NT = topo.n_nodes, topo.n_edges, topo.n_faces, topo.n_elements
    e = np.arange(NE)
    a, b = topo.edges[:, 0], topo.edges[:, 1]
    G = sp.csr_matrix(
        (np.r_[-np.ones(NE), np.ones(NE)], (np.r_[e, e], np.r_[a, b])), shape=(NE, NV), dtype=np.int64
    )
    d = topo.nodes[b] - topo.nodes[a]
    rows = np.tile(np.r_[e, e], 3)
    cols = np.concatenate([np.r_[a, b] + k * NV for k in range(3)])
    vals = np.concatenate([np.r_[d[:, k], d[:, k]] / 2.0 for k in range(3)])
    P = sp.csr_matrix((vals, (rows, cols)), shape=(NE, 3 * NV))
    f = np.arange(NF)
    C = sp.csr_matrix(
        (np.tile([1, 1, -1], NF), (np.repeat(f, 3), topo.tri_edges.ravel())), shape=(NF, NE), dtype=np.int64
    )
    D = sp.csr_matrix((topo.face_row_sign, (topo.face2elem, topo.face_row_ids)), shape=(NT, NF), dtype=np.int64)
    return TransferOperators(G, P, C, D)
