"""Computable weighted projections of IVE functions from their boundary DoFs.

Every projection solves a 3x3 weighted Gram system against a boundary
integral that only needs the piecewise-linear (nodal), lowest-order edge
(edge) or piecewise-constant (face) trace on the boundary triangulation.
All kernels work on a :class:`~ivem.mesh.CutBatch` so that thousands of
elements with the same local structure are handled by a few einsums.

Local DoF conventions: nodal values at ``cut.points``; edge moments
``int_e v.t`` along ``cut.edges`` (from lower to higher global node id);
face fluxes ``int_F v.n`` for ``cut.boundary_tris`` with ``n`` the
ascending-node orientation, so the outward flux is ``face_sign * dof``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .ifespace import (
    Coefficients,
    IFEFunction,
    PiecewiseConstant,
    chain,
    edge_ife,
    extend_constant,
    face_ife,
    ife_eval,
    jump_matrices,
    nodal_ife,
)
from .mesh import CutBatch, CutElement, batch_elements
from .quadrature import MIDPOINT_LAMBDA as MID_LAMBDA
from .quadrature import tet_points


def _skew(d: np.ndarray) -> np.ndarray:
    """Matrices [d]_x with [d]_x y = d x y for stacked vectors (...,3)."""
    z = np.zeros(d.shape[:-1])
    return np.stack(
        [
            np.stack([z, -d[..., 2], d[..., 1]], -1),
            np.stack([d[..., 2], z, -d[..., 0]], -1),
            np.stack([-d[..., 1], d[..., 0], z], -1),
        ],
        -2,
    )


def _onehot(idx: np.ndarray, n: int) -> np.ndarray:
    return (idx[..., None] == np.arange(n)).astype(float)


class BatchGeometry:
    """Per-triangle geometric quantities of a batch."""

    def __init__(self, batch: CutBatch):
        self.batch = batch
        B = len(batch)
        P = batch.pts.shape[1]
        ne = batch.edges.shape[1]
        M = batch.n_regions
        X = batch.pts[np.arange(B)[:, None, None], batch.tris]
        cr = np.cross(X[:, :, 1] - X[:, :, 0], X[:, :, 2] - X[:, :, 0])
        cn2 = np.einsum("btd,btd->bt", cr, cr)
        self.X = X
        self.cr = cr
        self.area = 0.5 * np.sqrt(cn2)
        self.nrm = cr / np.sqrt(cn2)[..., None]
        # surface gradients of the barycentric coordinates
        self.g = np.stack(
            [np.cross(cr, X[:, :, (k + 2) % 3] - X[:, :, (k + 1) % 3]) / cn2[..., None] for k in range(3)], axis=2
        )
        self.centroid = X.mean(axis=2)
        self.Ntri = _onehot(batch.tris, P)
        self.Etri = _onehot(batch.tri_edges, ne) * batch.tri_edge_sign[..., None]
        self.Rtri = _onehot(batch.tri_region, M)
        self.Rsub = _onehot(batch.subtet_region, M)
        self.tangential = np.eye(3) - self.nrm[..., :, None] * self.nrm[..., None, :]
        # region anchors and plane anchors
        self.region_anchor = batch.anchors[:, np.maximum(np.arange(M) - 1, 0)]
        self.plane_anchor = batch.anchors[:, : M - 1]
        # outward flux factor per face row and boundary measure
        self.boundary_area = self.area.sum(axis=1)

    def per_tri(self, arr: np.ndarray) -> np.ndarray:
        """Select a per-region array (B,M,...) onto triangles (B,nt,...)."""
        return np.einsum("btm,bm...->bt...", self.Rtri, arr)

    @cached_property
    def midpoints(self) -> np.ndarray:
        return np.einsum("qk,btkd->btqd", MID_LAMBDA, self.X)

    @cached_property
    def psi_mid(self) -> np.ndarray:
        """Whitney edge functions of each triangle at its edge midpoints, (B,nt,q,j,3).

        Edge ``j`` runs from local vertex ``j`` to ``j+1``.
        """
        g = self.g
        out = np.empty(g.shape[:2] + (3, 3, 3))
        for j in range(3):
            j1 = (j + 1) % 3
            out[:, :, :, j] = MID_LAMBDA[None, None, :, j, None] * g[:, :, None, j1] - MID_LAMBDA[None, None, :, j1, None] * g[:, :, None, j]
        return out

    @cached_property
    def psi_int(self) -> np.ndarray:
        """Integrals of the Whitney edge functions over each triangle, (B,nt,j,3)."""
        g = self.g
        return (self.area / 3.0)[..., None, None] * (g[:, :, [1, 2, 0]] - g)


def gram(weights: np.ndarray, volumes: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Batched Gram matrix sum_m w_m |K_m| Q_m^T Q_m."""
    return np.einsum("bm,bm,bmki,bmkj->bij", weights, volumes, Q, Q)


def gram_matrix(cut: CutElement, kind: str, weights) -> np.ndarray:
    """Gram matrix of the seeds e_l extended through ``cut``, weight per region."""
    w = np.asarray(weights, float)[None]
    Q = chain(kind, cut.plane_normals.reshape(1, -1, 3), w)
    return gram(w, cut.region_volumes[None], Q)[0]


def seed_chain(kind: str, batch: CutBatch, w: np.ndarray) -> np.ndarray:
    """Jump-matrix chain re-based so the seed is the value on the largest region.

    Seeding in a tiny region makes the Gram matrix scale like the squared
    coefficient ratio; seeding in the dominant region keeps it well scaled.
    """
    Q = chain(kind, batch.normals, w)
    k = np.argmax(batch.volumes, axis=1)
    Qk = Q[np.arange(len(k)), k]
    return Q @ np.linalg.inv(Qk)[:, None]


def _offsets(Q: np.ndarray, scale: np.ndarray, plane_anchor: np.ndarray, region_anchor: np.ndarray) -> np.ndarray:
    """Scalar-offset chain o_{m+1} = o_m + scale_m Q_m^T (X_m - x_m), shape (B,M,3)."""
    B, M = Q.shape[:2]
    o = np.zeros((B, M, 3))
    for m in range(M - 1):
        o[:, m + 1] = o[:, m] + scale[:, m, None] * np.einsum("bki,bk->bi", Q[:, m], plane_anchor[:, m] - region_anchor[:, m])
    return o


# --------------------------------------------------------------------------
# H1: gradient projection, lift, stabilization
# --------------------------------------------------------------------------


@dataclass
class H1Operators:
    Q: np.ndarray  # (B,M,3,3) P^e(beta) chain
    weights: np.ndarray  # (B,M) beta per region
    gram: np.ndarray  # (B,3,3)
    rhs: np.ndarray  # (B,3,P)
    S: np.ndarray  # (B,3,P) region-0 seed of the projected gradient
    offsets: np.ndarray  # (B,M,3) lift offsets per unit seed
    region_anchor: np.ndarray  # (B,M,3)
    lift_const: np.ndarray  # (B,P) constant of the lift
    consistency: np.ndarray  # (B,P,P)
    stab_unit: np.ndarray  # (B,P,P) stabilization without gamma

    def stiffness(self, gamma: float) -> np.ndarray:
        return self.consistency + gamma * self.stab_unit

    def load(self, batch: CutBatch, f, quad_order: int = 2) -> np.ndarray:
        """int_K f * lift(phi_p) for every local nodal basis function, (B,P)."""
        F0, F1 = region_moments(batch, f, quad_order, scalar=True)
        mom = np.einsum("bmki,bmk->bmi", self.Q, F1 - self.region_anchor * F0[..., None]) + self.offsets * F0[..., None]
        return np.einsum("bmi,bip->bp", mom, self.S) + self.lift_const * F0.sum(axis=1)[:, None]


def h1_operators(batch: CutBatch, coeff: Coefficients, geom: BatchGeometry | None = None) -> H1Operators:
    geom = geom or BatchGeometry(batch)
    w = coeff.beta(batch.region_signs).astype(float)
    Q = seed_chain("e", batch, w)
    G = gram(w, batch.volumes, Q)
    Qt, wt = geom.per_tri(Q), geom.per_tri(w)
    vec = wt[..., None] * np.einsum("btki,btk->bti", Qt, geom.cr) / 6.0
    Bm = np.einsum("bti,btkp->bip", vec, geom.Ntri)
    S = np.linalg.solve(G, Bm)
    o = _offsets(Q, np.ones_like(w), geom.plane_anchor, geom.region_anchor)
    L = np.einsum("btki,btk->bti", Qt, geom.centroid - geom.per_tri(geom.region_anchor)) + geom.per_tri(o)
    wv = np.einsum("bt,btkp->bp", geom.area / 3.0, geom.Ntri)
    C = (wv - np.einsum("bt,bti,bip->bp", geom.area, L, S)) / geom.boundary_area[:, None]
    Gtr = np.einsum("btkd,btkp->btdp", geom.g, geom.Ntri)
    D = Gtr - np.einsum("btde,btef,bfp->btdp", geom.tangential, Qt, S)
    stab = batch.diameter[:, None, None] * np.einsum("bt,btdp,btdq->bpq", geom.area, D, D)
    cons = np.einsum("bip,bij,bjq->bpq", S, G, S)
    return H1Operators(Q, w, G, Bm, S, o, geom.region_anchor, C, cons, stab)


# --------------------------------------------------------------------------
# H(curl): curl projection, value projection, stabilizations
# --------------------------------------------------------------------------


@dataclass
class CurlOperators:
    Q: np.ndarray  # (B,M,3,3) P^f chain
    weights: np.ndarray
    gram: np.ndarray
    rhs: np.ndarray  # (B,3,ne)
    S: np.ndarray  # (B,3,ne)
    consistency: np.ndarray
    stab_unit: np.ndarray


def curl_operators(batch: CutBatch, coeff: Coefficients, weight: str = "alpha", geom: BatchGeometry | None = None) -> CurlOperators:
    """Projection of curl v onto P^f(weight) from the edge moments."""
    geom = geom or BatchGeometry(batch)
    w = coeff.value(weight, batch.region_signs).astype(float)
    Q = seed_chain("f", batch, w)
    G = gram(w, batch.volumes, Q)
    Qt, wt = geom.per_tri(Q), geom.per_tri(w)
    # int_K curl v . q = int_dK (n x v) . q for q with continuous tangential part
    nxpsi = np.cross(geom.nrm[:, :, None, :], geom.psi_int)
    vec = wt[..., None, None] * np.einsum("btki,btjk->btji", Qt, nxpsi)
    Bc = np.einsum("btji,btjq->biq", vec, geom.Etri)
    S = np.linalg.solve(G, Bc)
    rot = geom.Etri.sum(axis=2) / geom.area[..., None]
    D = rot - np.einsum("btd,btde,beq->btq", geom.nrm, Qt, S)
    stab = batch.diameter[:, None, None] * np.einsum("bt,btq,btr->bqr", geom.area, D, D)
    cons = np.einsum("bip,bij,bjq->bpq", S, G, S)
    return CurlOperators(Q, w, G, Bc, S, cons, stab)


@dataclass
class ValueOperators:
    Q: np.ndarray  # (B,M,3,3) P^e(beta) chain
    weights: np.ndarray
    gram: np.ndarray
    rhs: np.ndarray  # (B,3,ne)
    S: np.ndarray  # (B,3,ne)
    consistency: np.ndarray
    stab_unit: np.ndarray

    def load(self, batch: CutBatch, f, quad_order: int = 2) -> np.ndarray:
        """int_K f . Pi v for every local edge basis function, (B,ne)."""
        F = region_moments(batch, f, quad_order, scalar=False)
        return np.einsum("bmk,bmki,biq->bq", F, self.Q, self.S)


def _potential_matrices(batch: CutBatch, geom: BatchGeometry, w: np.ndarray, Q: np.ndarray):
    """Region matrices of w_l = (w Q e_l / 2) x (x - x_m) + Xi_m (continuous tangential part).

    Returns A (B,M,3,3) with w_l(x) = (-[x - x_m]_x A_m + Xi_m) e_l, and Xi.
    """
    B, M = w.shape
    A = 0.5 * w[..., None, None] * Q
    Me = jump_matrices("e", batch.normals, w[:, :-1] / w[:, 1:])
    Xi = np.zeros((B, M, 3, 3))
    for m in range(M - 1):
        d = geom.plane_anchor[:, m] - geom.region_anchor[:, m]
        Xi[:, m + 1] = Me[:, m] @ (Xi[:, m] - _skew(d) @ A[:, m])
    return A, Xi


def value_operators(
    batch: CutBatch,
    coeff: Coefficients,
    variant: str = "constrained",
    geom: BatchGeometry | None = None,
) -> ValueOperators:
    """Projection of v onto P^e(beta) from the edge moments.

    ``variant='constrained'`` assumes int_K curl v . w = 0 for the potential
    ``w`` of the test constant.  ``variant='full'`` adds that volume term with
    curl v replaced by its projection onto P^f(beta).
    """
    geom = geom or BatchGeometry(batch)
    w = coeff.beta(batch.region_signs).astype(float)
    Q = seed_chain("e", batch, w)
    G = gram(w, batch.volumes, Q)
    A, Xi = _potential_matrices(batch, geom, w, Q)
    At, Xit = geom.per_tri(A), geom.per_tri(Xi)
    d = geom.midpoints - geom.per_tri(geom.region_anchor)[:, :, None, :]
    W = -np.einsum("btqde,btel->btqdl", _skew(d), At) + Xit[:, :, None]
    nxpsi = np.cross(geom.nrm[:, :, None, None, :], geom.psi_mid)
    vec = -np.einsum("bt,btqjd,btqdl->btjl", geom.area / 3.0, nxpsi, W)
    Bv = np.einsum("btjl,btjq->blq", vec, geom.Etri)
    if variant == "full":
        cb = curl_operators(batch, coeff, "beta", geom)
        dc = batch.centroids - geom.region_anchor
        Wc = -np.einsum("bmde,bmel->bmdl", _skew(dc), A) + Xi
        Bv = Bv + np.einsum("bm,bmdl,bmde,beq->blq", batch.volumes, Wc, cb.Q, cb.S)
    elif variant != "constrained":
        raise ValueError(f"unknown variant {variant!r}")
    S = np.linalg.solve(G, Bv)
    trace = np.einsum("btqjd,btjp->btqdp", geom.psi_mid, geom.Etri)
    proj = np.einsum("btde,btef,bfp->btdp", geom.tangential, geom.per_tri(Q), S)
    D = trace - proj[:, :, None]
    stab = np.einsum("bt,btqdp,btqdr->bpr", geom.area / 3.0, D, D)
    cons = np.einsum("bip,bij,bjq->bpq", S, G, S)
    return ValueOperators(Q, w, G, Bv, S, cons, stab)


# --------------------------------------------------------------------------
# H(div): divergence and value projection
# --------------------------------------------------------------------------


@dataclass
class FaceOperators:
    Q: np.ndarray
    weights: np.ndarray
    gram: np.ndarray
    div: np.ndarray  # (B,nt) divergence row
    rhs: np.ndarray  # (B,3,nt)
    S: np.ndarray  # (B,3,nt)


def face_operators(batch: CutBatch, coeff: Coefficients, geom: BatchGeometry | None = None) -> FaceOperators:
    geom = geom or BatchGeometry(batch)
    w = coeff.alpha(batch.region_signs).astype(float)
    Q = seed_chain("f", batch, w)
    G = gram(w, batch.volumes, Q)
    div = batch.face_sign / batch.measure[:, None]
    # psi_l = (w Q e_l).(x - x_m) + o_m,l is continuous with grad psi_l = w Q e_l
    o = _offsets(Q, w, geom.plane_anchor, geom.region_anchor)
    int_psi = np.einsum(
        "bm,bmki,bmk->bi", batch.volumes * w, Q, batch.centroids - geom.region_anchor
    ) + np.einsum("bm,bmi->bi", batch.volumes, o)
    psi_c = geom.per_tri(w)[..., None] * np.einsum(
        "btki,btk->bti", geom.per_tri(Q), geom.centroid - geom.per_tri(geom.region_anchor)
    ) + geom.per_tri(o)
    Rf = -int_psi[:, :, None] * div[:, None, :] + np.einsum("bti,bt->bit", psi_c, batch.face_sign.astype(float))
    S = np.linalg.solve(G, Rf)
    return FaceOperators(Q, w, G, div, Rf, S)


# --------------------------------------------------------------------------
# region quadrature
# --------------------------------------------------------------------------


def region_moments(batch: CutBatch, f, quad_order: int = 2, scalar: bool = True):
    """Moments of ``f(x, side)`` over each region by fan sub-tetrahedra.

    Scalar f: returns (F0 (B,M), F1 (B,M,3)) with F0 = int f, F1 = int f x.
    Vector f: returns F (B,M,3) = int f.
    """
    x, wq = tet_points(batch.subtets, quad_order)
    side = np.broadcast_to(np.take_along_axis(batch.region_signs, batch.subtet_region, axis=1)[..., None], wq.shape)
    fx = np.asarray(f(x.reshape(-1, 3), side.reshape(-1)), float)
    M = batch.n_regions
    R = _onehot(batch.subtet_region, M)
    if scalar:
        fx = fx.reshape(wq.shape)
        F0 = np.einsum("bsq,bsq,bsm->bm", wq, fx, R)
        F1 = np.einsum("bsq,bsq,bsqd,bsm->bmd", wq, fx, x, R)
        return F0, F1
    fx = fx.reshape(wq.shape + (3,))
    return np.einsum("bsq,bsqd,bsm->bmd", wq, fx, R)


# --------------------------------------------------------------------------
# single-element interface
# --------------------------------------------------------------------------


@dataclass
class ProjectionResult:
    constant_part: PiecewiseConstant
    lifted: IFEFunction | None
    gram_condition: float
    scalar: float | None = None


def _single(cut: CutElement) -> tuple[CutBatch, BatchGeometry]:
    batch = batch_elements([cut])[0]
    return batch, BatchGeometry(batch)


def _result(kind: str, Q: np.ndarray, w: np.ndarray, G: np.ndarray, seed: np.ndarray) -> ProjectionResult:
    return ProjectionResult(PiecewiseConstant(kind, Q[0] @ seed, w[0]), None, float(np.linalg.cond(G[0])))


def project_h1_gradient(cut: CutElement, dofs, coeff: Coefficients) -> ProjectionResult:
    batch, geom = _single(cut)
    ops = h1_operators(batch, coeff, geom)
    return _result("e", ops.Q, ops.weights, ops.gram, ops.S[0] @ np.asarray(dofs, float))


def lift_h1(cut: CutElement, grad: ProjectionResult, dofs, coeff: Coefficients | None = None) -> IFEFunction:
    """IFE function with gradient ``grad`` and the boundary average of ``dofs``."""
    b0 = grad.constant_part.values[0]
    w = grad.constant_part.weights
    f = nodal_ife(cut, _beta_only(cut, w), b0)
    v = np.asarray(dofs, float)
    tris = cut.boundary_tris
    X = cut.points[tris]
    area = 0.5 * np.linalg.norm(np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]), axis=1)
    target = np.sum(area * v[tris].mean(axis=1))
    own = sum(a * ife_eval(f, x.mean(axis=0), r) for a, x, r in zip(area, X, cut.tri_region))
    f.scalar = float((target - own) / area.sum())
    return f


def _beta_only(cut: CutElement, w: np.ndarray) -> Coefficients:
    signs = cut.region_signs
    bm = w[signs < 0][0] if np.any(signs < 0) else w[0]
    bp = w[signs > 0][0] if np.any(signs > 0) else w[0]
    return Coefficients(1.0, 1.0, float(bm), float(bp))


def project_curl(cut: CutElement, dofs, coeff: Coefficients, weight: str = "alpha") -> ProjectionResult:
    batch, geom = _single(cut)
    ops = curl_operators(batch, coeff, weight, geom)
    return _result("f", ops.Q, ops.weights, ops.gram, ops.S[0] @ np.asarray(dofs, float))


def project_value_edge(cut: CutElement, dofs, coeff: Coefficients, variant: str = "constrained") -> ProjectionResult:
    batch, geom = _single(cut)
    ops = value_operators(batch, coeff, variant, geom)
    return _result("e", ops.Q, ops.weights, ops.gram, ops.S[0] @ np.asarray(dofs, float))


def div_const(cut: CutElement, dofs) -> float:
    """Constant divergence from face fluxes (ascending-node orientation)."""
    return float(np.sum(cut.face_sign * np.asarray(dofs, float)) / cut.measure)


def project_value_face(cut: CutElement, dofs, coeff: Coefficients) -> ProjectionResult:
    batch, geom = _single(cut)
    ops = face_operators(batch, coeff, geom)
    res = _result("f", ops.Q, ops.weights, ops.gram, ops.S[0] @ np.asarray(dofs, float))
    res.scalar = div_const(cut, dofs)
    return res


# --------------------------------------------------------------------------
# local DoFs of given functions
# --------------------------------------------------------------------------


def _edge_region(cut: CutElement) -> np.ndarray:
    reg = np.empty(len(cut.edges), dtype=np.int64)
    reg[cut.tri_edges.ravel()] = np.repeat(cut.tri_region, 3)
    return reg


def local_dofs(cut: CutElement, space: str, field) -> np.ndarray:
    """Local DoFs of ``field``, either an IFEFunction or ``callable(x, region)``.

    Nodal values and edge moments assume the field is linear on each
    boundary entity (exact for IFE traces); use the global interpolation for
    general smooth fields.
    """
    if isinstance(field, IFEFunction):
        ev = lambda x, r: ife_eval(field, x, r)  # noqa: E731
    else:
        ev = field
    if space == "n":
        reg = np.zeros(len(cut.points), dtype=np.int64)
        reg[cut.boundary_tris.ravel()] = np.repeat(cut.tri_region, 3)
        return np.array([float(ev(p, r)) for p, r in zip(cut.points, reg)])
    if space == "e":
        reg = _edge_region(cut)
        a, b = cut.points[cut.edges[:, 0]], cut.points[cut.edges[:, 1]]
        return np.array([ev(0.5 * (p + q), r) @ (q - p) for p, q, r in zip(a, b, reg)])
    if space == "f":
        X = cut.points[cut.boundary_tris]
        cr = np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0])
        out = np.array([ev(x.mean(axis=0), r) @ c / 2 for x, c, r in zip(X, cr, cut.tri_region)])
        return out * cut.face_sign
    raise ValueError(f"unknown space {space!r}")


# --------------------------------------------------------------------------
# randomized reproduction and orthogonality checks
# --------------------------------------------------------------------------


def _tri_geometry(cut: CutElement):
    X = cut.points[cut.boundary_tris]
    cr = np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0])
    area = 0.5 * np.linalg.norm(cr, axis=1)
    return X, cr / (2.0 * area[:, None]), area


def _basis_values(cut: CutElement, kind: str, w: np.ndarray) -> np.ndarray:
    """(3, M, 3): region values of the three basis elements of P^kind(w)."""
    return np.stack([extend_constant(cut, kind, w, e).values for e in np.eye(3)])


def h1_orthogonality_residual(cut: CutElement, dofs, coeff: Coefficients) -> float:
    """(beta (Pi grad v - grad v), q) for the basis q of P^e(beta), via boundary quadrature."""
    v = np.asarray(dofs, float)
    w = coeff.value("beta", cut.region_signs).astype(float)
    P = project_h1_gradient(cut, v, coeff).constant_part.values
    q = _basis_values(cut, "e", w)
    lhs = np.einsum("m,m,md,jmd->j", w, cut.region_volumes, P, q)
    _, nrm, area = _tri_geometry(cut)
    reg = cut.tri_region
    vbar = v[cut.boundary_tris].mean(axis=1)
    rhs = np.einsum("t,t,jtd,td->j", area * vbar, w[reg], q[:, reg], nrm)
    return float(np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(rhs))))


def curl_orthogonality_residual(cut: CutElement, dofs, coeff: Coefficients) -> float:
    """(alpha (Pi curl v - curl v), q) for the basis q of P^f(alpha), via Whitney traces."""
    v = np.asarray(dofs, float)
    w = coeff.value("alpha", cut.region_signs).astype(float)
    P = project_curl(cut, v, coeff).constant_part.values
    q = _basis_values(cut, "f", w)
    lhs = np.einsum("m,m,md,jmd->j", w, cut.region_volumes, P, q)
    lookup = {(int(a), int(b)): k for k, (a, b) in enumerate(cut.edges)}
    X, nrm, area = _tri_geometry(cut)
    rhs = np.zeros(3)
    for t, tri in enumerate(cut.boundary_tris):
        # gradients of the barycentric coordinates of the triangle
        g = np.stack([np.cross(nrm[t], X[t, (i + 2) % 3] - X[t, (i + 1) % 3]) for i in range(3)]) / (2.0 * area[t])
        p = w[cut.tri_region[t]] * q[:, cut.tri_region[t]]  # (3 basis, 3)
        c = np.cross(p, nrm[t])
        for i, j in ((0, 1), (1, 2), (2, 0)):
            a, b = int(tri[i]), int(tri[j])
            k = lookup.get((a, b))
            s = 1.0
            if k is None:
                k, s = lookup[(b, a)], -1.0
            rhs += s * v[k] * area[t] / 3.0 * (c @ (g[j] - g[i]))
    return float(np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(rhs))))


@dataclass
class ProjectionSuiteReport:
    n_tests: int
    reproduction: dict
    orthogonality: dict
    repro_tol: float
    orth_tol: float

    @property
    def max_reproduction(self) -> float:
        return max(self.reproduction.values())

    @property
    def max_orthogonality(self) -> float:
        return max(self.orthogonality.values())

    @property
    def passed(self) -> bool:
        return self.max_reproduction <= self.repro_tol and self.max_orthogonality <= self.orth_tol

    def lines(self) -> list[str]:
        out = [f"{self.n_tests} randomized element tests"]
        for k, v in self.reproduction.items():
            out.append(f"{'PASS' if v <= self.repro_tol else 'FAIL'} reproduction {k}: {v:.3e} (tol {self.repro_tol:g})")
        for k, v in self.orthogonality.items():
            out.append(f"{'PASS' if v <= self.orth_tol else 'FAIL'} orthogonality {k}: {v:.3e} (tol {self.orth_tol:g})")
        return out


def _rel(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def random_coefficients(rng: np.random.Generator, max_ratio: float = 1e3) -> Coefficients:
    vals = 10.0 ** rng.uniform(0.0, np.log10(max_ratio), size=4)
    return Coefficients(*vals)


def projection_suite(
    cuts: list[CutElement], n_tests: int = 1000, seed: int = 0, repro_tol: float = 1e-11, orth_tol: float = 1e-10
) -> ProjectionSuiteReport:
    """Random (element, coefficients, IFE function) draws for every projection.

    Reproduction feeds the DoFs of an IFE function of the target space and
    compares with its exact constant part.  Orthogonality uses random DoF
    vectors and an independent boundary quadrature of the right-hand side.
    """
    rng = np.random.default_rng(seed)
    keys = ("grad", "lift", "curl", "value", "value_full", "face", "div")
    rep = dict.fromkeys(keys, 0.0)
    orth = {"grad": 0.0, "curl": 0.0}
    for _ in range(n_tests):
        cut = cuts[int(rng.integers(len(cuts)))]
        co = random_coefficients(rng)
        b0, a0 = rng.normal(size=3), rng.normal(size=3)
        c0 = float(rng.normal())

        f = nodal_ife(cut, co, b0, c0)
        d = local_dofs(cut, "n", f)
        r = project_h1_gradient(cut, d, co)
        rep["grad"] = max(rep["grad"], _rel(r.constant_part.values, f.vec.values))
        L = lift_h1(cut, r, d)
        rep["lift"] = max(rep["lift"], abs(L.scalar - f.scalar) / max(1.0, abs(f.scalar)))

        fe = edge_ife(cut, co, a0, b0)
        r = project_curl(cut, local_dofs(cut, "e", fe), co)
        rep["curl"] = max(rep["curl"], _rel(r.constant_part.values, 2.0 * fe.vec.values))

        fe0 = edge_ife(cut, co, np.zeros(3), b0)
        d = local_dofs(cut, "e", fe0)
        for key, variant in (("value", "constrained"), ("value_full", "full")):
            r = project_value_edge(cut, d, co, variant)
            rep[key] = max(rep[key], _rel(r.constant_part.values, fe0.vec2.values))

        ff = face_ife(cut, co, 0.0, a0)
        r = project_value_face(cut, local_dofs(cut, "f", ff), co)
        rep["face"] = max(rep["face"], _rel(r.constant_part.values, ff.vec.values))
        ff = face_ife(cut, co, c0, a0)
        rep["div"] = max(rep["div"], abs(div_const(cut, local_dofs(cut, "f", ff)) - 3.0 * c0) / max(1.0, abs(c0)))

        orth["grad"] = max(orth["grad"], h1_orthogonality_residual(cut, rng.normal(size=len(cut.points)), co))
        orth["curl"] = max(orth["curl"], curl_orthogonality_residual(cut, rng.normal(size=len(cut.edges)), co))
    return ProjectionSuiteReport(n_tests, rep, orth, repro_tol, orth_tol)
