"""Piecewise-constant jump spaces and the local IFE spaces built on them.

On an interface element with regions ``0..M-1`` separated by planes
``(n_m, X_m)`` a piecewise constant ``c`` of kind ``e`` or ``f`` is fixed by
its value on region 0 through ``c_{m+1} = M_m c_m``.  ``M_m`` is built from
the ratio ``w_m / w_{m+1}`` of the weight coefficient on both sides:

* kind ``e``: ``M = I + (r - 1) n n^T``  (tangential part continuous,
  ``w v.n`` continuous);
* kind ``f``: ``M = r I + (1 - r) n n^T``  (normal part continuous,
  ``w v x n`` continuous).

The IFE spaces are

* nodal  ``v = b.(x - x_m) + c``          with ``b`` in P^e(beta),
* edge   ``v = a x (x - x_m) + b``        with ``a`` in P^f(alpha), ``b`` in P^e(beta),
* face   ``v = c (x - x_m) + a``          with ``a`` in P^f(alpha),

plus accumulated offsets on regions beyond the first plane so that the
jump conditions hold on every plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .mesh import CutElement

KINDS = ("e", "f")


@dataclass(frozen=True)
class Coefficients:
    alpha_minus: float = 1.0
    alpha_plus: float = 1.0
    beta_minus: float = 1.0
    beta_plus: float = 1.0

    def __post_init__(self):
        for name in ("alpha_minus", "alpha_plus", "beta_minus", "beta_plus"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidArgumentError(f"{name} must be positive, got {v!r}")

    def value(self, name: str, sign) -> np.ndarray:
        """Coefficient ``name`` ('alpha' or 'beta') on the side(s) ``sign``."""
        if name not in ("alpha", "beta"):
            raise InvalidArgumentError(f"unknown coefficient {name!r}")
        lo, hi = getattr(self, name + "_minus"), getattr(self, name + "_plus")
        return np.where(np.asarray(sign) < 0, lo, hi)

    def alpha(self, sign) -> np.ndarray:
        return self.value("alpha", sign)

    def beta(self, sign) -> np.ndarray:
        return self.value("beta", sign)


@dataclass(frozen=True)
class JumpMatrix:
    kind: str
    normal: np.ndarray
    ratio: float
    matrix: np.ndarray


def tangent_frame(normal) -> tuple[np.ndarray, np.ndarray]:
    n = np.asarray(normal, float)
    axis = np.zeros(3)
    axis[np.argmin(np.abs(n))] = 1.0
    t1 = axis - np.dot(axis, n) * n
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def _unit(normal) -> np.ndarray:
    n = np.asarray(normal, float)
    nn = np.linalg.norm(n)
    if nn == 0 or not np.isfinite(nn):
        raise InvalidArgumentError("normal must be a nonzero finite vector")
    if abs(nn - 1.0) > 1e-12:
        raise InvalidArgumentError(f"normal must have unit length, got |n| = {nn!r}")
    return n


def jump_matrix(kind: str, normal, c_from: float, c_to: float) -> JumpMatrix:
    """Matrix taking the value on the ``c_from`` side to the ``c_to`` side."""
    if kind not in KINDS:
        raise InvalidArgumentError(f"kind must be 'e' or 'f', got {kind!r}")
    if not (c_from > 0 and c_to > 0):
        raise InvalidArgumentError("coefficients must be positive")
    n = _unit(normal)
    r = c_from / c_to
    t1, t2 = tangent_frame(n)
    T = np.column_stack([n, t1, t2])
    d = np.array([r, 1.0, 1.0]) if kind == "e" else np.array([1.0, r, r])
    return JumpMatrix(kind, n, r, (T * d) @ T.T)


def jump_matrices(kind: str, normals: np.ndarray, ratios: np.ndarray) -> np.ndarray:
    """Closed-form jump matrices for stacked normals (...,3) and ratios (...)."""
    nn = normals[..., :, None] * normals[..., None, :]
    r = np.asarray(ratios, float)[..., None, None]
    eye = np.eye(3)
    if kind == "e":
        return eye + (r - 1.0) * nn
    if kind == "f":
        return r * eye + (1.0 - r) * nn
    raise InvalidArgumentError(f"kind must be 'e' or 'f', got {kind!r}")


def chain(kind: str, normals: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Accumulated maps ``Q_m`` with ``c_m = Q_m c_0``; batched over leading axes.

    ``normals`` is (..., M-1, 3) and ``weights`` is (..., M).
    """
    w = np.asarray(weights, float)
    M = w.shape[-1]
    Ms = jump_matrices(kind, normals, w[..., :-1] / w[..., 1:])
    Q = np.empty(w.shape + (3, 3))
    Q[..., 0, :, :] = np.eye(3)
    for m in range(M - 1):
        Q[..., m + 1, :, :] = Ms[..., m, :, :] @ Q[..., m, :, :]
    return Q


def region_weights(cut: CutElement, coeff: Coefficients, name: str) -> np.ndarray:
    return coeff.value(name, cut.region_signs).astype(float)


def region_anchors(cut: CutElement) -> np.ndarray:
    """Anchor used by each region: region m >= 1 uses plane m-1, region 0 uses plane 0."""
    M = cut.n_regions
    return cut.anchors[np.maximum(np.arange(M) - 1, 0)]


@dataclass
class PiecewiseConstant:
    kind: str
    values: np.ndarray
    weights: np.ndarray

    @property
    def n_regions(self) -> int:
        return len(self.values)


def extend_constant(cut: CutElement, kind: str, weights, seed) -> PiecewiseConstant:
    """Extend ``seed`` (value on region 0) through all planes of ``cut``."""
    w = np.asarray(weights, float)
    if w.shape != (cut.n_regions,):
        raise InvalidArgumentError("one weight per region is required")
    Q = chain(kind, cut.plane_normals.reshape(-1, 3), w)
    return PiecewiseConstant(kind, Q @ np.asarray(seed, float), w)


def is_in_space(pc: PiecewiseConstant, cut: CutElement, tol: float = 1e-12) -> bool:
    """Check the kind's continuity conditions on every plane."""
    scale = max(1.0, float(np.max(np.abs(pc.values))) * float(np.max(pc.weights)))
    for m, n in enumerate(cut.plane_normals.reshape(-1, 3)):
        u, v = pc.values[m], pc.values[m + 1]
        wu, wv = pc.weights[m], pc.weights[m + 1]
        if pc.kind == "e":
            bad = np.linalg.norm(np.cross(u - v, n)) + abs(wu * (u @ n) - wv * (v @ n))
        else:
            bad = abs((u - v) @ n) + np.linalg.norm(np.cross(wu * u - wv * v, n))
        if bad > tol * scale:
            return False
    return True


# --------------------------------------------------------------------------
# IFE functions
# --------------------------------------------------------------------------


@dataclass
class IFEFunction:
    """One IFE function on one element.

    space 'n': ``vec`` is the P^e(beta) gradient, ``scalar`` the constant.
    space 'e': ``vec`` is the P^f(alpha) rotation part, ``vec2`` the P^e(beta) constant.
    space 'f': ``scalar`` is the divergence part, ``vec`` the P^f(alpha) constant.
    ``offsets`` holds the per-region scalar (n) or vector (e, f) offsets.
    """

    space: str
    cut: CutElement
    vec: PiecewiseConstant | None = None
    vec2: PiecewiseConstant | None = None
    scalar: float = 0.0
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def eval(self, x, region: int) -> np.ndarray:
        return ife_eval(self, x, region)


def _planes(cut: CutElement) -> tuple[np.ndarray, np.ndarray]:
    return cut.plane_normals.reshape(-1, 3), cut.anchors


def nodal_ife(cut: CutElement, coeff: Coefficients, b0, c: float = 0.0) -> IFEFunction:
    b = extend_constant(cut, "e", region_weights(cut, coeff, "beta"), b0)
    anc = region_anchors(cut)
    off = np.zeros(cut.n_regions)
    for m in range(cut.n_regions - 1):
        off[m + 1] = off[m] + b.values[m] @ (cut.anchors[m] - anc[m])
    return IFEFunction("n", cut, vec=b, scalar=float(c), offsets=off)


def edge_ife(cut: CutElement, coeff: Coefficients, a0, b0) -> IFEFunction:
    a = extend_constant(cut, "f", region_weights(cut, coeff, "alpha"), a0)
    wb = region_weights(cut, coeff, "beta")
    b = extend_constant(cut, "e", wb, b0)
    normals, X = _planes(cut)
    anc = region_anchors(cut)
    xi = np.zeros((cut.n_regions, 3))
    for m in range(cut.n_regions - 1):
        Me = jump_matrices("e", normals[m], wb[m] / wb[m + 1])
        xi[m + 1] = Me @ (xi[m] + np.cross(a.values[m], X[m] - anc[m]))
    return IFEFunction("e", cut, vec=a, vec2=b, offsets=xi)


def face_ife(cut: CutElement, coeff: Coefficients, c: float, a0) -> IFEFunction:
    wa = region_weights(cut, coeff, "alpha")
    a = extend_constant(cut, "f", wa, a0)
    normals, X = _planes(cut)
    anc = region_anchors(cut)
    eta = np.zeros((cut.n_regions, 3))
    for m in range(cut.n_regions - 1):
        Mf = jump_matrices("f", normals[m], wa[m] / wa[m + 1])
        eta[m + 1] = Mf @ (eta[m] + c * (X[m] - anc[m]))
    return IFEFunction("f", cut, vec=a, scalar=float(c), offsets=eta)


def ife_eval(f: IFEFunction, x, region: int) -> np.ndarray:
    """Evaluate on ``region`` at points ``x`` (3,) or (N,3)."""
    M = f.cut.n_regions
    if not 0 <= region < M:
        raise InvalidArgumentError(f"region {region} out of range 0..{M - 1}")
    x = np.asarray(x, float)
    d = x - region_anchors(f.cut)[region]
    if f.space == "n":
        return d @ f.vec.values[region] + f.scalar + f.offsets[region]
    if f.space == "e":
        a = np.broadcast_to(f.vec.values[region], d.shape)
        return np.cross(a, d) + f.vec2.values[region] + f.offsets[region]
    if f.space == "f":
        return f.scalar * d + f.vec.values[region] + f.offsets[region]
    raise InvalidArgumentError(f"unknown space {f.space!r}")


def ife_grad(f: IFEFunction, region: int | None = None):
    if f.space != "n":
        raise InvalidArgumentError("grad is defined on the nodal space")
    return f.vec if region is None else f.vec.values[region]


def ife_curl(f: IFEFunction, region: int | None = None):
    if f.space != "e":
        raise InvalidArgumentError("curl is defined on the edge space")
    pc = PiecewiseConstant("f", 2.0 * f.vec.values, f.vec.weights)
    return pc if region is None else pc.values[region]


def ife_div(f: IFEFunction, region: int | None = None) -> float:
    if f.space != "f":
        raise InvalidArgumentError("div is defined on the face space")
    return 3.0 * f.scalar


def nodal_basis(cut: CutElement, coeff: Coefficients) -> list[IFEFunction]:
    eye = np.eye(3)
    return [nodal_ife(cut, coeff, eye[i]) for i in range(3)] + [nodal_ife(cut, coeff, np.zeros(3), 1.0)]


def edge_basis(cut: CutElement, coeff: Coefficients) -> list[IFEFunction]:
    eye, z = np.eye(3), np.zeros(3)
    return [edge_ife(cut, coeff, eye[i], z) for i in range(3)] + [edge_ife(cut, coeff, z, eye[i]) for i in range(3)]


def face_basis(cut: CutElement, coeff: Coefficients) -> list[IFEFunction]:
    eye = np.eye(3)
    return [face_ife(cut, coeff, 1.0, np.zeros(3))] + [face_ife(cut, coeff, 0.0, eye[i]) for i in range(3)]


# --------------------------------------------------------------------------
# jump-condition and exact-sequence checks
# --------------------------------------------------------------------------


def plane_points(cut: CutElement, m: int) -> np.ndarray:
    """Sample points on plane ``m`` inside the element (triangle centroids and vertices)."""
    g = cut.gamma_tris[m]
    lam = np.array([[1, 1, 1], [4, 1, 1], [1, 4, 1], [1, 1, 4], [2, 2, 0.5]]) / np.array([[3], [6], [6], [6], [4.5]])
    return np.einsum("ql,tld->tqd", lam, g).reshape(-1, 3)


def jump_residuals(f: IFEFunction, coeff: Coefficients) -> np.ndarray:
    """Largest violation of the space's interface conditions on each plane."""
    cut = f.cut
    normals, X = _planes(cut)
    wb = region_weights(cut, coeff, "beta")
    wa = region_weights(cut, coeff, "alpha")
    out = []
    for m in range(cut.n_regions - 1):
        n = normals[m]
        p = plane_points(cut, m)
        u, v = ife_eval(f, p, m), ife_eval(f, p, m + 1)
        if f.space == "n":
            r = max(np.max(np.abs(u - v)), abs(wb[m] * f.vec.values[m] @ n - wb[m + 1] * f.vec.values[m + 1] @ n))
        elif f.space == "e":
            ca, cb = 2 * f.vec.values[m], 2 * f.vec.values[m + 1]
            um, vm = ife_eval(f, X[m], m), ife_eval(f, X[m], m + 1)
            r = max(
                np.max(np.abs(np.cross(u - v, n))),
                abs(wb[m] * um @ n - wb[m + 1] * vm @ n),
                np.linalg.norm(np.cross(wa[m] * ca - wa[m + 1] * cb, n)),
                abs((ca - cb) @ n),
            )
        else:
            um, vm = ife_eval(f, X[m], m), ife_eval(f, X[m], m + 1)
            r = max(np.max(np.abs((u - v) @ n)), np.linalg.norm(np.cross(wa[m] * um - wa[m + 1] * vm, n)))
        out.append(r)
    return np.array(out)


def region_samples(cut: CutElement, per_subtet: int = 2, rng=None) -> list[np.ndarray]:
    """Interior points of each region taken from its fan sub-tetrahedra."""
    rng = np.random.default_rng(0) if rng is None else rng
    out = []
    for m in range(cut.n_regions):
        st = cut.subtets[cut.subtet_region == m]
        lam = rng.dirichlet(np.ones(4), size=(len(st), per_subtet)) * 0.8 + 0.05
        out.append(np.einsum("tql,tld->tqd", lam, st).reshape(-1, 3))
    return out


@dataclass
class ComplexReport:
    dims: tuple[int, int, int, int]
    rank_grad: int
    rank_curl: int
    rank_div: int
    grad_in_edge: float
    curl_of_grad: float
    curl_in_face: float
    div_of_curl: float
    fd_error: float
    jump_error: float
    passed: bool

    def lines(self) -> list[str]:
        return [
            f"dims n/e/f/const = {self.dims}",
            f"rank grad/curl/div = {self.rank_grad}/{self.rank_curl}/{self.rank_div}",
            f"grad(S^n) in S^e residual = {self.grad_in_edge:.2e}",
            f"curl(S^e) in S^f residual = {self.curl_in_face:.2e}",
            f"curl grad = {self.curl_of_grad:.2e}, div curl = {self.div_of_curl:.2e}",
            f"finite-difference check = {self.fd_error:.2e}, jump conditions = {self.jump_error:.2e}",
        ]


def _sample_matrix(funcs: list[IFEFunction], pts: list[np.ndarray]) -> np.ndarray:
    cols = []
    for f in funcs:
        cols.append(np.concatenate([np.atleast_1d(ife_eval(f, p, m)).ravel() for m, p in enumerate(pts)]))
    return np.column_stack(cols)


def _rank(A: np.ndarray, tol: float = 1e-10) -> int:
    s = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(s > tol * max(s[0], 1e-300))) if len(s) else 0


def _fd_derivative(f: IFEFunction, x: np.ndarray, m: int, h: float, op: str) -> np.ndarray:
    J = np.zeros((len(x), 3, 3)) if f.space != "n" else np.zeros((len(x), 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        d = (ife_eval(f, x + e, m) - ife_eval(f, x - e, m)) / (2 * h)
        if f.space == "n":
            J[:, k] = d
        else:
            J[:, :, k] = d
    if op == "grad":
        return J
    if op == "curl":
        return np.stack([J[:, 2, 1] - J[:, 1, 2], J[:, 0, 2] - J[:, 2, 0], J[:, 1, 0] - J[:, 0, 1]], axis=1)
    return np.trace(J, axis1=1, axis2=2)


def local_complex_check(cut: CutElement, coeff: Coefficients, tol: float = 1e-10) -> ComplexReport:
    """Verify grad S^n in ker curl of S^e, curl S^e in ker div of S^f and the ranks."""
    nb, eb, fb = nodal_basis(cut, coeff), edge_basis(cut, coeff), face_basis(cut, coeff)
    pts = region_samples(cut)
    N, E, F = _sample_matrix(nb, pts), _sample_matrix(eb, pts), _sample_matrix(fb, pts)
    dims = (_rank(N), _rank(E), _rank(F), 1)

    # grad of nodal functions as edge functions with zero rotation part
    grads = [edge_ife(cut, coeff, np.zeros(3), ife_grad(f).values[0]) for f in nb]
    Gv = np.column_stack(
        [np.concatenate([np.broadcast_to(ife_grad(f, m), p.shape).ravel() for m, p in enumerate(pts)]) for f in nb]
    )
    scale = max(1.0, np.max(np.abs(Gv)))
    grad_in_edge = float(np.max(np.abs(_sample_matrix(grads, pts) - Gv))) / scale
    coef, *_ = np.linalg.lstsq(E, Gv, rcond=None)
    grad_in_edge = max(grad_in_edge, float(np.max(np.abs(E @ coef - Gv))) / scale)
    curl_of_grad = max(float(np.max(np.abs(ife_curl(g).values))) for g in grads)

    Cv = np.column_stack(
        [np.concatenate([np.broadcast_to(ife_curl(f, m), p.shape).ravel() for m, p in enumerate(pts)]) for f in eb]
    )
    scale = max(1.0, np.max(np.abs(Cv)))
    coef, *_ = np.linalg.lstsq(F, Cv, rcond=None)
    curl_in_face = float(np.max(np.abs(F @ coef - Cv))) / scale
    div_of_curl = float(np.max(np.abs(coef[0]))) * 3.0

    rank_grad = _rank(Gv)
    rank_curl = _rank(Cv)
    rank_div = _rank(np.array([[ife_div(f) for f in fb]]))

    # finite differences only cross-check the analytic derivatives
    h = 1e-6 * cut.diameter
    fd = 0.0
    for m, p in enumerate(pts):
        for f in nb:
            fd = max(fd, np.max(np.abs(_fd_derivative(f, p, m, h, "grad") - ife_grad(f, m))))
        for f in eb:
            fd = max(fd, np.max(np.abs(_fd_derivative(f, p, m, h, "curl") - ife_curl(f, m))))
        for f in fb:
            fd = max(fd, np.max(np.abs(_fd_derivative(f, p, m, h, "div") - ife_div(f, m))))
    wmax = max(coeff.alpha_minus, coeff.alpha_plus, coeff.beta_minus, coeff.beta_plus)
    wmin = min(coeff.alpha_minus, coeff.alpha_plus, coeff.beta_minus, coeff.beta_plus)
    fd /= max(1.0, wmax / wmin)

    jump = 0.0
    for f in nb + eb + fb:
        r = jump_residuals(f, coeff)
        jump = max(jump, float(np.max(r)) if len(r) else 0.0)
    jump /= max(1.0, wmax / wmin)

    passed = (
        dims == (4, 6, 4, 1)
        and (rank_grad, rank_curl, rank_div) == (3, 3, 1)
        and max(grad_in_edge, curl_in_face, curl_of_grad, div_of_curl, jump) <= tol
        and fd <= 1e-5
    )
    return ComplexReport(dims, rank_grad, rank_curl, rank_div, grad_in_edge, curl_of_grad, curl_in_face, div_of_curl, fd, jump, passed)
