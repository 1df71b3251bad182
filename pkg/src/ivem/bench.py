"""Benchmark catalog, error evaluation, convergence and preconditioner studies."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import sympy as sym

from .assembly import (
    SchemeConfig,
    assemble,
    barycentric_gradients,
    build_transfers,
    h1_matrices,
    nd0_basis,
    node_sides,
)
from .errors import DivergenceError, InvalidArgumentError
from .ifespace import Coefficients
from .mesh import (
    LOCAL_EDGES,
    Box,
    CutMeshTopology,
    LevelSet,
    batch_elements,
    build_cut_mesh,
    plane_levelset,
    sphere_levelset,
    tori_levelset,
)
from .projection import BatchGeometry, curl_operators, h1_operators, value_operators
from .quadrature import tet_points, tet_rule
from .solver import (
    AuxConfig,
    SmootherConfig,
    aux_solver,
    block_diag_preconditioner,
    build_hx,
    cg,
    condition_estimate,
    jacobi_preconditioner,
)

log = logging.getLogger(__name__)

X1, X2, X3 = sym.symbols("x1 x2 x3", real=True)
XS = (X1, X2, X3)
SPHERE_RADIUS = math.pi / 5


def _lambdify_scalar(expr) -> Callable[[np.ndarray], np.ndarray]:
    fn = sym.lambdify(XS, expr, "numpy")

    def f(x):
        x = np.atleast_2d(x)
        return np.broadcast_to(np.asarray(fn(x[:, 0], x[:, 1], x[:, 2]), float), (len(x),)).copy()

    return f


def _lambdify_vector(exprs) -> Callable[[np.ndarray], np.ndarray]:
    fns = [_lambdify_scalar(e) for e in exprs]
    return lambda x: np.stack([fn(x) for fn in fns], axis=-1)


def _grad(e):
    return [sym.diff(e, v) for v in XS]


def _curl(v):
    return [
        sym.diff(v[2], X2) - sym.diff(v[1], X3),
        sym.diff(v[0], X3) - sym.diff(v[2], X1),
        sym.diff(v[1], X1) - sym.diff(v[0], X2),
    ]


def _div(v):
    return sum(sym.diff(v[k], XS[k]) for k in range(3))


@dataclass
class Benchmark:
    """Piecewise-smooth exact solution with its derived source.

    All fields take ``(x, side)``; ``side`` is -1/+1 per point, or 0 to
    decide from the level set.
    """

    name: str
    kind: str
    levelset: LevelSet
    box: Box
    coeff: Coefficients
    pieces: dict[int, dict[str, Callable]]
    params: dict = field(default_factory=dict)
    exprs: dict = field(default_factory=dict)

    def _side(self, x: np.ndarray, side) -> np.ndarray:
        s = np.broadcast_to(np.asarray(side if side is not None else 0), (len(x),))
        if np.any(s == 0):
            phi = self.levelset(x)
            s = np.where(s == 0, np.where(phi < 0, -1, 1), s)
        return s

    def _eval(self, key: str, x, side) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        s = self._side(x, side)
        vm = self.pieces[-1][key](x)
        vp = self.pieces[1][key](x)
        mask = s < 0
        if vm.ndim == 2:
            mask = mask[:, None]
        return np.where(mask, vm, vp)

    def u(self, x, side=None) -> np.ndarray:
        return self._eval("u", x, side)

    def du(self, x, side=None) -> np.ndarray:
        """Gradient (H1) or curl (H(curl)) of the exact solution."""
        return self._eval("du", x, side)

    def f(self, x, side=None) -> np.ndarray:
        return self._eval("f", x, side)

    def flux(self, x, side=None) -> np.ndarray:
        """beta grad u (H1) or alpha curl u (H(curl))."""
        return self._eval("flux", x, side)


def _make(name, kind, ls, box, coeff, u_by_side: dict, params=None) -> Benchmark:
    pieces, exprs = {}, {}
    for s, u in u_by_side.items():
        al = coeff.alpha_minus if s < 0 else coeff.alpha_plus
        be = coeff.beta_minus if s < 0 else coeff.beta_plus
        if kind == "h1":
            g = _grad(u)
            f = -_div([be * gi for gi in g])
            pieces[s] = {
                "u": _lambdify_scalar(u),
                "du": _lambdify_vector(g),
                "f": _lambdify_scalar(f),
                "flux": _lambdify_vector([be * gi for gi in g]),
            }
        else:
            c = _curl(u)
            cc = _curl([al * ci for ci in c])
            f = [cc[k] + be * u[k] for k in range(3)]
            pieces[s] = {
                "u": _lambdify_vector(u),
                "du": _lambdify_vector(c),
                "f": _lambdify_vector(f),
                "flux": _lambdify_vector([al * ci for ci in c]),
            }
        exprs[s] = u
    return Benchmark(name, kind, ls, box, coeff, pieces, dict(params or {}), exprs)


def h1_sphere(beta_minus: float = 1.0, beta_plus: float = 10.0, radius: float = SPHERE_RADIUS) -> Benchmark:
    s = X1**2 + X2**2 + X3**2 - radius**2
    u = {-1: sym.exp(s / beta_minus), 1: sym.sin(s / beta_plus) + 1}
    coeff = Coefficients(1.0, 1.0, beta_minus, beta_plus)
    return _make("h1-sphere", "h1", sphere_levelset(radius), Box(), coeff, u, dict(radius=radius))


def _tori_exprs():
    r2 = SPHERE_RADIUS**2
    p1 = (sym.sqrt((X1 + sym.Rational(3, 10)) ** 2 + X2**2) - sym.Rational(1, 5)) ** 2 + X3**2 - r2
    p2 = (sym.sqrt((X1 - sym.Rational(3, 10)) ** 2 + X3**2) - sym.Rational(1, 5)) ** 2 + X2**2 - r2
    return p1, p2


def h1_tori(beta_minus: float = 1.0, beta_plus: float = 10.0) -> Benchmark:
    p1, p2 = _tori_exprs()
    u = {-1: sym.Integer(1), 1: sym.cos(p1 * p2)}
    coeff = Coefficients(1.0, 1.0, beta_minus, beta_plus)
    return _make("h1-tori", "h1", tori_levelset(), Box.cube(1.3), coeff, u)


def hcurl_sphere(
    alpha=(1.0, 100.0), beta=(1.0, 200.0), radius: float = SPHERE_RADIUS, r2_sq: float = 3.3, n2: float = 1.0
) -> Benchmark:
    """Sphere field with n1 = n2 (r2^2 - r^2) so that alpha curl u x n is continuous."""
    n1 = n2 * (r2_sq - radius**2)
    R1 = radius**2 - (X1**2 + X2**2 + X3**2)
    R2 = r2_sq - (X1**2 + X2**2 + X3**2)
    w = [X2 - X3, X3 - X1, X1 - X2]
    xs = [X1, X2, X3]
    u = {
        -1: [xs[k] / beta[0] + n1 * R1 * w[k] / alpha[0] for k in range(3)],
        1: [xs[k] / beta[1] + n2 * R1 * R2 * w[k] / alpha[1] for k in range(3)],
    }
    coeff = Coefficients(alpha[0], alpha[1], beta[0], beta[1])
    return _make("hcurl-sphere", "hcurl", sphere_levelset(radius), Box(), coeff, u, dict(n1=n1, n2=n2, r2_sq=r2_sq, radius=radius))


def _grad_sin_field(fexpr, alpha, beta):
    g = _grad(fexpr)
    return {
        s: [g[0] / beta[i], g[1] / beta[i], g[2] / beta[i] + sym.sin(fexpr) / alpha[i]]
        for i, s in enumerate((-1, 1))
    }


def hcurl_tori(alpha=(1.0, 10.0), beta=(1.0, 10.0)) -> Benchmark:
    """u = grad(f)/beta + sin(f) e3/alpha with f vanishing on both tori."""
    p1, p2 = _tori_exprs()
    fexpr = p1 * p2 * ((X1 + sym.Rational(3, 10)) ** 2 + X2**2) * ((X1 - sym.Rational(3, 10)) ** 2 + X3**2)
    coeff = Coefficients(alpha[0], alpha[1], beta[0], beta[1])
    return _make("hcurl-tori", "hcurl", tori_levelset(), Box.cube(1.3), coeff, _grad_sin_field(fexpr, alpha, beta))


def flat_offset(r: float) -> float:
    return 5.0 * 10.0 ** (-2.0 - r)


def hcurl_flat(r: float = 0.0, alpha=(1.0, 10.0), beta=(1.0, 10.0)) -> Benchmark:
    c = flat_offset(r)
    fexpr = (X1 - c) * sym.cos(X2) * sym.cos(X3)
    coeff = Coefficients(alpha[0], alpha[1], beta[0], beta[1])
    return _make("hcurl-flat", "hcurl", plane_levelset(c), Box(), coeff, _grad_sin_field(fexpr, alpha, beta), dict(r=r, offset=c))


def h1_flat(r: float = 0.0, beta=(1.0, 10.0)) -> Benchmark:
    c = flat_offset(r)
    fexpr = (X1 - c) * sym.cos(X2) * sym.cos(X3)
    u = {-1: fexpr / beta[0] + 1, 1: fexpr / beta[1] + 1}
    coeff = Coefficients(1.0, 1.0, beta[0], beta[1])
    return _make("h1-flat", "h1", plane_levelset(c), Box(), coeff, u, dict(r=r, offset=c))


def h1_patch(offset: float = 0.05, beta=(1.0, 10.0), b_plus=(0.3, 0.7, -0.2), const: float = 1.0) -> Benchmark:
    """Piecewise linear solution whose gradient lies in P^e(beta) across x1 = offset."""
    bp = list(b_plus)
    bm = [beta[1] / beta[0] * bp[0], bp[1], bp[2]]
    xs = [X1 - offset, X2, X3]
    u = {-1: sum(bm[k] * xs[k] for k in range(3)) + const, 1: sum(bp[k] * xs[k] for k in range(3)) + const}
    coeff = Coefficients(1.0, 1.0, beta[0], beta[1])
    return _make("h1-patch", "h1", plane_levelset(offset), Box(), coeff, u, dict(offset=offset))


def hcurl_patch(offset: float = 0.05, alpha=(1.0, 100.0), beta=(1.0, 200.0), b_plus=(0.4, 0.7, -0.2)) -> Benchmark:
    """Piecewise constant solution in P^e(beta) across x1 = offset."""
    bp = list(b_plus)
    bm = [beta[1] / beta[0] * bp[0], bp[1], bp[2]]
    u = {-1: [sym.Float(v) for v in bm], 1: [sym.Float(v) for v in bp]}
    coeff = Coefficients(alpha[0], alpha[1], beta[0], beta[1])
    return _make("hcurl-patch", "hcurl", plane_levelset(offset), Box(), coeff, u, dict(offset=offset))


CATALOG: dict[str, Callable[..., Benchmark]] = {
    "h1-sphere": h1_sphere,
    "h1-tori": h1_tori,
    "h1-flat": h1_flat,
    "h1-patch": h1_patch,
    "hcurl-sphere": hcurl_sphere,
    "hcurl-tori": hcurl_tori,
    "hcurl-flat": hcurl_flat,
    "hcurl-patch": hcurl_patch,
}


def get_benchmark(name: str, **params) -> Benchmark:
    if name not in CATALOG:
        raise InvalidArgumentError(f"unknown problem {name!r}; choose from {', '.join(CATALOG)}")
    return CATALOG[name](**params)


# --------------------------------------------------------------------------
# self-checks of the exact solutions
# --------------------------------------------------------------------------


def interface_samples(bench: Benchmark, n: int = 200, seed: int = 0) -> np.ndarray:
    """Points on the exact interface found by bisection along random rays."""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(bench.box.lo), np.asarray(bench.box.hi)
    pts = []
    while len(pts) < n:
        a = lo + (hi - lo) * rng.random(3)
        b = lo + (hi - lo) * rng.random(3)
        fa, fb = bench.levelset(a)[0], bench.levelset(b)[0]
        if fa * fb >= 0:
            continue
        for _ in range(200):
            m = 0.5 * (a + b)
            fm = bench.levelset(m)[0]
            if fm * fa > 0:
                a, fa = m, fm
            else:
                b = m
            if np.linalg.norm(b - a) < 1e-15:
                break
        pts.append(0.5 * (a + b))
    return np.array(pts)


def _normals(bench: Benchmark, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    if bench.levelset.gradient is not None:
        g = np.asarray(bench.levelset.gradient(x), float)
        return g / np.linalg.norm(g, axis=1, keepdims=True)
    g = np.stack([(bench.levelset(x + h * e) - bench.levelset(x - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def jump_check(bench: Benchmark, n: int = 200) -> dict[str, float]:
    """Largest jumps of the interface conditions at sampled interface points."""
    x = interface_samples(bench, n)
    nrm = _normals(bench, x)
    m, p = -np.ones(len(x)), np.ones(len(x))
    um, up = bench.u(x, m), bench.u(x, p)
    qm, qp = bench.flux(x, m), bench.flux(x, p)
    if bench.kind == "h1":
        return {
            "value": float(np.max(np.abs(um - up))),
            "flux": float(np.max(np.abs(np.sum((qm - qp) * nrm, axis=1)))),
        }
    bm, bp = bench.coeff.beta_minus, bench.coeff.beta_plus
    return {
        "tangential": float(np.max(np.linalg.norm(np.cross(um - up, nrm), axis=1))),
        "curl_tangential": float(np.max(np.linalg.norm(np.cross(qm - qp, nrm), axis=1))),
        "normal": float(np.max(np.abs(np.sum((bm * um - bp * up) * nrm, axis=1)))),
    }


def residual_check(bench: Benchmark, n: int = 50, h: float = 1e-5, seed: int = 1) -> float:
    """Relative finite-difference PDE residual at random points away from the interface."""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(bench.box.lo), np.asarray(bench.box.hi)
    x = lo + (hi - lo) * (0.05 + 0.9 * rng.random((4 * n, 3)))
    phi = bench.levelset(x)
    x = x[np.abs(phi) > 0.05][:n]
    side = np.where(bench.levelset(x) < 0, -1, 1)
    E = np.eye(3)

    def d(fn, k):
        return (fn(x + h * E[k], side) - fn(x - h * E[k], side)) / (2 * h)

    if bench.kind == "h1":
        lhs = -sum(d(bench.flux, k)[:, k] for k in range(3))
        f = bench.f(x, side)
    else:
        J = np.stack([d(bench.flux, k) for k in range(3)], axis=2)  # J[:, i, k] = d q_i / d x_k
        curl = np.stack([J[:, 2, 1] - J[:, 1, 2], J[:, 0, 2] - J[:, 2, 0], J[:, 1, 0] - J[:, 0, 1]], axis=1)
        beta = np.where(side < 0, bench.coeff.beta_minus, bench.coeff.beta_plus)[:, None]
        lhs = curl + beta * bench.u(x, side)
        f = bench.f(x, side)
    return float(np.max(np.abs(lhs - f)) / max(1.0, np.max(np.abs(f))))


# --------------------------------------------------------------------------
# errors
# --------------------------------------------------------------------------


@dataclass
class ErrorReport:
    n: int
    h: float
    dof_total: int
    dof_interface: int
    err_L2: float
    err_Linf: float
    err_energy: float
    iters: int = 0
    seconds: float = 0.0

    def row(self) -> list:
        return [self.n, self.h, self.dof_total, self.dof_interface, self.err_L2, self.err_Linf, self.err_energy, self.iters, self.seconds]


CSV_CONVERGE = ["n", "h", "dof_total", "dof_interface", "err_L2", "err_Linf", "err_energy", "iters", "seconds"]
CSV_PRECOND = ["r", "l", "n", "iters", "cond_est", "seconds"]


def _plain_quadrature(topo: CutMeshTopology, order: int):
    mesh = topo.mesh
    verts = mesh.nodes[mesh.elements[topo.plain_ids]]
    side = topo.cutmesh.node_sign[mesh.elements[topo.plain_ids, 0]]
    x, w = tet_points(verts, order)
    return verts, side, x, w


def interface_dof_count(topo: CutMeshTopology, kind: str) -> int:
    if not topo.cuts:
        return 0
    if kind == "h1":
        return int(len(np.unique(np.concatenate([c.node_ids for c in topo.cuts]))))
    return int(len(topo.interface_edges()))


def compute_errors(topo: CutMeshTopology, uh: np.ndarray, bench: Benchmark, order: int = 3) -> ErrorReport:
    """L2, Linf (nodal, H1 only) and energy-seminorm errors.

    Non-interface elements use the exact P1/ND0 reconstruction; interface
    elements use the computable projections on each region.
    """
    mesh = topo.mesh
    uh = np.asarray(uh, float)
    verts, side, x, w = _plain_quadrature(topo, order)
    lam, _ = tet_rule(order)
    sq = np.repeat(side, x.shape[1])
    xf = x.reshape(-1, 3)
    if bench.kind == "h1":
        dofs = mesh.elements[topo.plain_ids]
        g, _ = barycentric_gradients(verts)
        vals = np.einsum("qi,ti->tq", lam, uh[dofs])
        grads = np.einsum("tid,ti->td", g, uh[dofs])
        e0 = np.sum(w * (bench.u(xf, sq).reshape(w.shape) - vals) ** 2)
        e1 = np.sum(w[..., None] * (bench.du(xf, sq).reshape(x.shape) - grads[:, None]) ** 2)
    else:
        g, _ = barycentric_gradients(verts)
        basis = nd0_basis(verts, topo.plain_edge_sign, lam)
        coef = uh[topo.plain_edges]
        vals = np.einsum("tqkd,tk->tqd", basis, coef)
        i, j = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
        curls = np.einsum("tkd,tk->td", 2.0 * np.cross(g[:, i], g[:, j]) * topo.plain_edge_sign[..., None], coef)
        e0 = np.sum(w[..., None] * (bench.u(xf, sq).reshape(x.shape) - vals) ** 2)
        e1 = np.sum(w[..., None] * (bench.du(xf, sq).reshape(x.shape) - curls[:, None]) ** 2)

    for batch in batch_elements(topo.cuts):
        geom = BatchGeometry(batch)
        xq, wq = tet_points(batch.subtets, order)
        reg = batch.subtet_region
        sgn = np.take_along_axis(batch.region_signs, reg, axis=1)
        sq = np.repeat(sgn[..., None], xq.shape[2], axis=2).reshape(-1)
        xf = xq.reshape(-1, 3)
        bi = np.arange(len(batch))[:, None]
        if bench.kind == "h1":
            ops = h1_operators(batch, bench.coeff, geom)
            v = uh[batch.node_ids]
            seed = np.einsum("bip,bp->bi", ops.S, v)
            c = np.einsum("bp,bp->b", ops.lift_const, v)
            grad = np.einsum("bmij,bj->bmi", ops.Q, seed)[bi, reg]  # (B,NS,3)
            off = np.einsum("bmi,bi->bm", ops.offsets, seed)[bi, reg]
            anc = geom.region_anchor[bi, reg]
            vals = np.einsum("bsd,bsqd->bsq", grad, xq - anc[:, :, None]) + (off + c[:, None])[..., None]
            e0 += np.sum(wq * (bench.u(xf, sq).reshape(wq.shape) - vals) ** 2)
            e1 += np.sum(wq[..., None] * (bench.du(xf, sq).reshape(xq.shape) - grad[:, :, None]) ** 2)
        else:
            v = uh[batch.edge_ids]
            co = curl_operators(batch, bench.coeff, "alpha", geom)
            vo = value_operators(batch, bench.coeff, "constrained", geom)
            cv = np.einsum("bmij,bjq,bq->bmi", co.Q, co.S, v)[bi, reg]
            vv = np.einsum("bmij,bjq,bq->bmi", vo.Q, vo.S, v)[bi, reg]
            e0 += np.sum(wq[..., None] * (bench.u(xf, sq).reshape(xq.shape) - vv[:, :, None]) ** 2)
            e1 += np.sum(wq[..., None] * (bench.du(xf, sq).reshape(xq.shape) - cv[:, :, None]) ** 2)

    if bench.kind == "h1":
        linf = float(np.max(np.abs(bench.u(topo.nodes, node_sides(topo)) - uh)))
        ndof = topo.n_nodes
    else:
        linf = float("nan")
        ndof = topo.n_edges
    return ErrorReport(mesh.n, mesh.h, ndof, interface_dof_count(topo, bench.kind), float(np.sqrt(e0)), linf, float(np.sqrt(e1)))


# --------------------------------------------------------------------------
# solving
# --------------------------------------------------------------------------


@dataclass
class RunConfig:
    gamma: float = 1.0
    gamma0: float = 1.0
    gamma1: float = 1.0
    rel_tol: float = 1e-8
    snap_tol: float = 1e-8
    backend: str = "direct"
    l: int = 1
    max_iter: int | None = None
    cut_rule: str = "linear"

    def scheme(self, bench: Benchmark) -> SchemeConfig:
        return SchemeConfig(bench.coeff, self.gamma, self.gamma0, self.gamma1, bench.kind)


@dataclass
class SolveResult:
    topo: CutMeshTopology
    system: object
    uh: np.ndarray
    iterations: int
    converged: bool
    residuals: list
    seconds: float


def build_mesh_for(bench: Benchmark, n: int, cfg: RunConfig | None = None) -> CutMeshTopology:
    cfg = cfg or RunConfig()
    return build_cut_mesh(n, bench.levelset.with_snap_tol(cfg.snap_tol), bench.box, cfg.cut_rule)


def hcurl_preconditioner(topo, system, coeff: Coefficients, method: str = "hx", l: int = 1, backend: str = "direct", gamma: float = 1.0):
    """Preconditioner for the free H(curl) block.

    'hx' is HX with the D_l block smoother, 'bd' is LU on D_l plus Jacobi,
    'diag' is plain Jacobi and 'none' gives unpreconditioned CG.
    """
    A = system.A_free
    if method == "none":
        return None
    if method == "diag":
        return jacobi_preconditioner(A)
    if method == "bd":
        return block_diag_preconditioner(A, topo, system.free_ids, max(l, 1))
    if method != "hx":
        raise InvalidArgumentError(f"unknown preconditioner {method!r}")
    # scalar auxiliary operator: alpha-weighted IVE stiffness plus lumped beta mass
    K, _, lumped = h1_matrices(topo, Coefficients(1.0, 1.0, coeff.alpha_minus, coeff.alpha_plus), gamma)
    lumped_beta = h1_matrices(topo, Coefficients(1.0, 1.0, coeff.beta_minus, coeff.beta_plus), gamma)[2]
    Avec = K + sp.diags(lumped_beta)
    return build_hx(A, topo, system.free_ids, Avec, build_transfers(topo), SmootherConfig(l=l), AuxConfig(backend))


def solve_benchmark(bench: Benchmark, n: int, cfg: RunConfig | None = None, topo=None, precond: str | None = None) -> SolveResult:
    cfg = cfg or RunConfig()
    topo = topo or build_mesh_for(bench, n, cfg)
    system = assemble(topo, cfg.scheme(bench), bench.f, bench.u)
    t0 = time.perf_counter()
    if bench.kind == "h1":
        M = aux_solver(system.A_free, "amg" if cfg.backend == "amg" else "direct") if (precond or "aux") != "none" else None
    else:
        M = hcurl_preconditioner(topo, system, bench.coeff, precond or "hx", cfg.l, cfg.backend, cfg.gamma)
    res = cg(system.A_free, system.b_free, M, cfg.rel_tol, cfg.max_iter)
    secs = time.perf_counter() - t0
    if not res.converged:
        log.warning("CG stopped after %d iterations at relative residual %.3e", res.iterations, res.residuals[-1])
    return SolveResult(topo, system, system.expand(res.x), res.iterations, res.converged, res.residuals, secs)


def fit_slope(h, err) -> float:
    """Least-squares slope of log(err) against log(h); nan if any error is zero."""
    h, err = np.asarray(h, float), np.asarray(err, float)
    if len(h) < 2 or np.any(err <= 0) or not np.all(np.isfinite(err)):
        return float("nan")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


@dataclass
class ConvergenceTable:
    reports: list[ErrorReport]
    slopes: dict[str, float]

    def csv_lines(self) -> list[str]:
        out = [",".join(CSV_CONVERGE)]
        for r in self.reports:
            out.append(",".join(_fmt(v) for v in r.row()))
        out.append("slope," + ",".join(f"{k}={_fmt(v)}" for k, v in self.slopes.items()))
        return out


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    return f"{float(v):.10e}"


def run_convergence(bench: Benchmark, n_list, cfg: RunConfig | None = None, exact_tol: float = 1e-10) -> ConvergenceTable:
    """Solve on every n; slopes from the finest ceil(k/2) levels."""
    cfg = cfg or RunConfig()
    reports = []
    for n in n_list:
        t0 = time.perf_counter()
        sr = solve_benchmark(bench, n, cfg)
        if not sr.converged:
            raise DivergenceError(f"solver did not converge for n={n}")
        rep = compute_errors(sr.topo, sr.uh, bench)
        rep.iters = sr.iterations
        rep.seconds = time.perf_counter() - t0
        log.info("n=%d L2=%.3e Linf=%.3e energy=%.3e iters=%d", n, rep.err_L2, rep.err_Linf, rep.err_energy, rep.iters)
        reports.append(rep)
    k = math.ceil(len(reports) / 2)
    fine = reports[-k:] if len(reports) > 1 else reports
    if len(fine) < 2 and len(reports) >= 2:
        fine = reports[-2:]
    slopes = {}
    for key in ("err_L2", "err_Linf", "err_energy"):
        vals = [getattr(r, key) for r in fine]
        if all(np.isnan(v) for v in vals):
            continue
        if all(v <= exact_tol for v in vals):
            slopes[key] = float("inf")  # exact reproduction
        else:
            slopes[key] = fit_slope([r.h for r in fine], vals)
    return ConvergenceTable(reports, slopes)


@dataclass
class PrecondRow:
    r: float
    l: int
    n: int
    iters: int
    cond_est: float
    seconds: float

    def row(self) -> list:
        return [self.r, self.l, self.n, self.iters, self.cond_est, self.seconds]


def run_precond_study(r_list, l_list, n: int = 12, cfg: RunConfig | None = None, cond_iters: int = 3000) -> list[PrecondRow]:
    """Flat-interface family: HX(l) iteration counts and condition estimates."""
    cfg = cfg or RunConfig()
    rows = []
    for r in r_list:
        bench = hcurl_flat(r)
        topo = build_mesh_for(bench, n, cfg)
        system = assemble(topo, cfg.scheme(bench), bench.f, bench.u)
        kappa = condition_estimate(system.A_free, cond_iters)
        for l in l_list:
            t0 = time.perf_counter()
            M = hcurl_preconditioner(topo, system, bench.coeff, "hx", l, cfg.backend, cfg.gamma)
            res = cg(system.A_free, system.b_free, M, cfg.rel_tol, cfg.max_iter)
            rows.append(PrecondRow(r, l, n, res.iterations, kappa, time.perf_counter() - t0))
            log.info("r=%s l=%d iters=%d cond=%.3e", r, l, res.iterations, kappa)
    return rows


def precond_csv_lines(rows: list[PrecondRow]) -> list[str]:
    out = [",".join(CSV_PRECOND)]
    for row in rows:
        out.append(",".join(_fmt(v) if not isinstance(v, float) or k in (4, 5) else f"{v:g}" for k, v in enumerate(row.row())))
    return out
