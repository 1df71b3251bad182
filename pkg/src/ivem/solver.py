"""Conjugate gradients, the block interface smoother and the HX preconditioner."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, DivergenceError, InvalidArgumentError

log = logging.getLogger(__name__)

Operator = Callable[[np.ndarray], np.ndarray]


# --------------------------------------------------------------------------
# CG / PCG
# --------------------------------------------------------------------------


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residuals: list[float]
    converged: bool
    alphas: list[float] = field(default_factory=list)
    betas: list[float] = field(default_factory=list)

    def condition_estimate(self) -> float:
        return lanczos_condition(self.alphas, self.betas)


def cg(
    A,
    b: np.ndarray,
    precond: Operator | None = None,
    rel_tol: float = 1e-8,
    max_iter: int | None = None,
    x0: np.ndarray | None = None,
) -> CGResult:
    """Preconditioned CG; stops when sqrt(r.z) <= rel_tol * sqrt(r0.z0)."""
    b = np.asarray(b, float)
    n = len(b)
    if max_iter is None:
        max_iter = max(10, int(10 * math.sqrt(n)))
    M = precond if precond is not None else (lambda r: r.copy())
    x = np.zeros(n) if x0 is None else np.array(x0, float)
    r = b - A @ x
    z = M(r)
    rz = float(r @ z)
    if not np.isfinite(rz):
        raise DivergenceError("non-finite residual at start")
    if rz < 0:
        raise DivergenceError("preconditioner is not positive")
    res0 = math.sqrt(rz)
    hist = [1.0]
    if res0 == 0.0:
        return CGResult(x, 0, hist, True)
    p = z.copy()
    alphas, betas = [], []
    it = 0
    converged = False
    while it < max_iter:
        Ap = A @ p
        pAp = float(p @ Ap)
        if not np.isfinite(pAp) or pAp <= 0:
            if not np.isfinite(pAp):
                raise DivergenceError(f"non-finite curvature at iteration {it}")
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = M(r)
        rz_new = float(r @ z)
        if not np.isfinite(rz_new):
            raise DivergenceError(f"non-finite residual at iteration {it}")
        it += 1
        alphas.append(alpha)
        rel = math.sqrt(max(rz_new, 0.0)) / res0
        hist.append(rel)
        if rel <= rel_tol:
            converged = True
            break
        beta = rz_new / rz
        betas.append(beta)
        p = z + beta * p
        rz = rz_new
    return CGResult(x, it, hist, converged, alphas, betas)


def lanczos_matrix(alphas, betas) -> np.ndarray:
    k = len(alphas)
    a = np.asarray(alphas, float)
    bt = np.asarray(betas[: k - 1], float)
    d = 1.0 / a
    d[1:] += bt / a[:-1]
    off = np.sqrt(bt) / a[:-1]
    return np.diag(d) + np.diag(off, 1) + np.diag(off, -1)


def lanczos_condition(alphas, betas) -> float:
    """Ratio of extreme Ritz values of the Lanczos matrix built from CG coefficients."""
    if len(alphas) == 0:
        return 1.0
    ev = np.linalg.eigvalsh(lanczos_matrix(alphas, betas))
    return float(ev[-1] / ev[0]) if ev[0] > 0 else float("inf")


def condition_estimate(A, max_iter: int = 3000, seed: int = 0) -> float:
    """CG-Lanczos estimate of cond(A) from an unpreconditioned run."""
    rng = np.random.default_rng(seed)
    b = rng.standard_normal(A.shape[0])
    res = cg(A, b, None, rel_tol=1e-14, max_iter=max_iter)
    return res.condition_estimate()


# --------------------------------------------------------------------------
# smoothers
# --------------------------------------------------------------------------


class SymmetricGS:
    """Symmetric Gauss-Seidel as a fixed linear operator (``sweeps`` iterations from zero)."""

    def __init__(self, A: sp.spmatrix, sweeps: int = 1):
        A = sp.csc_matrix(A)
        self.A = A.tocsr()
        self.sweeps = int(sweeps)
        self.d = A.diagonal()
        if np.any(self.d <= 0):
            raise ConfigurationError("Gauss-Seidel needs a positive diagonal")
        opts = dict(permc_spec="NATURAL", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))
        self.lower = spla.splu(sp.tril(A, format="csc"), **opts)
        self.upper = spla.splu(sp.triu(A, format="csc"), **opts)

    def sweep(self, r: np.ndarray) -> np.ndarray:
        return self.upper.solve(self.d * self.lower.solve(r))

    def __call__(self, r: np.ndarray) -> np.ndarray:
        x = self.sweep(r)
        for _ in range(self.sweeps - 1):
            x += self.sweep(r - self.A @ x)
        return x


class Jacobi:
    def __init__(self, A: sp.spmatrix, sweeps: int = 1, omega: float = 1.0):
        self.inv = omega / sp.csr_matrix(A).diagonal()
        self.A = sp.csr_matrix(A)
        self.sweeps = int(sweeps)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        x = self.inv * r
        for _ in range(self.sweeps - 1):
            x += self.inv * (r - self.A @ x)
        return x


def _inner(A: sp.spmatrix, kind: str, sweeps: int) -> Operator:
    if A.shape[0] == 0:
        return lambda r: np.zeros(0)
    if kind in ("gs", "gauss-seidel"):
        return SymmetricGS(A, sweeps)
    if kind == "jacobi":
        return Jacobi(A, sweeps)
    raise ConfigurationError(f"unknown inner smoother {kind!r}")


@dataclass
class SmootherConfig:
    l: int = 1
    inner: str = "gs"
    sweeps: int = 1

    def __post_init__(self):
        if self.l < 0:
            raise InvalidArgumentError("expansion width l must be non-negative")


def interface_edge_set(topo, l: int) -> np.ndarray:
    """Global edge ids of D_l: edges of interface elements grown by node adjacency."""
    if l <= 0 or not topo.cuts:
        return np.zeros(0, dtype=np.int64)
    D = topo.interface_edges()
    for _ in range(l - 1):
        touched = np.zeros(topo.n_nodes, bool)
        touched[topo.edges[D].ravel()] = True
        D = np.nonzero(touched[topo.edges[:, 0]] | touched[topo.edges[:, 1]])[0]
    return D


class BlockSmoother:
    """Direct solve on the D_l block, symmetric inner smoother elsewhere."""

    def __init__(self, A: sp.spmatrix, block: np.ndarray, inner: str = "gs", sweeps: int = 1):
        A = sp.csr_matrix(A)
        n = A.shape[0]
        mask = np.zeros(n, bool)
        mask[block] = True
        self.I = np.nonzero(mask)[0]
        self.N = np.nonzero(~mask)[0]
        self.lu = spla.splu(A[self.I][:, self.I].tocsc()) if len(self.I) else None
        self.rest = _inner(A[self.N][:, self.N], inner, sweeps)
        self.n = n

    @property
    def block_size(self) -> int:
        return len(self.I)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        z = np.zeros(self.n)
        if self.lu is not None:
            z[self.I] = self.lu.solve(r[self.I])
        if len(self.N):
            z[self.N] = self.rest(r[self.N])
        return z


def build_interface_block(topo, A: sp.spmatrix, l: int, free_ids: np.ndarray | None = None, inner: str = "gs", sweeps: int = 1):
    """D_l restricted to the free DoFs (local numbering) and the block smoother."""
    n_glob = topo.n_edges
    free_ids = np.arange(n_glob) if free_ids is None else np.asarray(free_ids)
    g2f = np.full(n_glob, -1, dtype=np.int64)
    g2f[free_ids] = np.arange(len(free_ids))
    D = g2f[interface_edge_set(topo, l)]
    D = D[D >= 0]
    return D, BlockSmoother(A, D, inner, sweeps)


# --------------------------------------------------------------------------
# auxiliary solvers
# --------------------------------------------------------------------------


def aux_solver(A: sp.spmatrix, backend: str = "direct", sweeps: int = 3) -> Operator:
    """A fixed symmetric positive approximation of A^{-1}."""
    A = sp.csr_matrix(A)
    if A.shape[0] == 0:
        return lambda r: np.zeros(0)
    if backend == "direct":
        try:
            lu = spla.splu(A.tocsc())
        except RuntimeError as exc:  # singular factor
            raise ConfigurationError(f"auxiliary factorization failed: {exc}") from exc
        return lu.solve
    if backend == "gs":
        return SymmetricGS(A, sweeps)
    if backend == "amg":
        try:
            import pyamg
        except ImportError as exc:
            raise ConfigurationError("the amg backend needs pyamg") from exc
        ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric")
        return lambda r: ml.solve(r, x0=np.zeros_like(r), maxiter=1, cycle="V", tol=1e-300)
    raise ConfigurationError(f"unknown auxiliary backend {backend!r}")


# --------------------------------------------------------------------------
# HX preconditioner
# --------------------------------------------------------------------------


@dataclass
class HXPreconditioner:
    smoother: BlockSmoother
    P: sp.csr_matrix
    G: sp.csr_matrix
    A_vec_scalar: sp.csr_matrix
    A_grad: sp.csr_matrix
    solve_vec: Operator
    solve_grad: Operator
    block: np.ndarray
    use_vec: bool = True
    use_grad: bool = True

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return hx_apply(self, r)

    def components(self, r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = self.smoother(r)
        nv = self.A_vec_scalar.shape[0]
        rv = self.P.T @ r
        zv = np.concatenate([self.solve_vec(rv[k * nv : (k + 1) * nv]) for k in range(3)]) if nv else rv
        v = self.P @ zv
        g = self.G @ self.solve_grad(self.G.T @ r)
        return s, v, g


def hx_apply(pre: HXPreconditioner, r: np.ndarray) -> np.ndarray:
    if len(r) != pre.P.shape[0]:
        raise InvalidArgumentError("residual has the wrong length")
    s, v, g = pre.components(r)
    z = s
    if pre.use_vec:
        z = z + v
    if pre.use_grad:
        z = z + g
    return z


@dataclass
class AuxConfig:
    backend: str = "direct"
    sweeps: int = 3


def build_hx(
    A_free: sp.spmatrix,
    topo,
    free_edges: np.ndarray,
    A_vec_full: sp.spmatrix,
    transfers,
    cfg: SmootherConfig | None = None,
    aux: AuxConfig | None = None,
) -> HXPreconditioner:
    """HX preconditioner on the free edge DoFs.

    ``A_vec_full`` is the scalar nodal operator (alpha-weighted stiffness plus
    lumped beta mass) on all nodes; it is restricted to interior nodes and
    used for each Cartesian component.
    """
    cfg = cfg or SmootherConfig()
    aux = aux or AuxConfig()
    A = sp.csr_matrix(A_free)
    interior = np.nonzero(~topo.boundary_node)[0]
    nv_all = topo.n_nodes
    G = transfers.G.tocsr()[free_edges][:, interior].astype(float).tocsr()
    vec_cols = np.concatenate([interior + k * nv_all for k in range(3)])
    P = transfers.P_n2e.tocsr()[free_edges][:, vec_cols].tocsr()
    Av = sp.csr_matrix(A_vec_full)[interior][:, interior].tocsr()
    Ag = (G.T @ A @ G).tocsr()
    D, smoother = build_interface_block(topo, A, cfg.l, free_edges, cfg.inner, cfg.sweeps)
    return HXPreconditioner(
        smoother, P, G, Av, Ag, aux_solver(Av, aux.backend, aux.sweeps), aux_solver(Ag, aux.backend, aux.sweeps), D
    )


def jacobi_preconditioner(A: sp.spmatrix) -> Operator:
    inv = 1.0 / sp.csr_matrix(A).diagonal()
    return lambda r: inv * r


def block_diag_preconditioner(A: sp.spmatrix, topo, free_edges: np.ndarray, l: int = 1) -> Operator:
    """LU on D_l plus Jacobi elsewhere."""
    _, sm = build_interface_block(topo, A, l, free_edges, inner="jacobi", sweeps=1)
    return sm
