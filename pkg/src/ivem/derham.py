"""Interpolation onto the IVE spaces and checks of the discrete de Rham complex."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import TransferOperators, build_transfers, edge_moments
from .errors import InvalidArgumentError
from .mesh import CutMeshTopology
from .quadrature import tet_points, tri_points

RANK_LIMIT = 5000


@dataclass
class InterpolantRequest:
    """``target`` is one of 'n', 'e', 'f', '0'; ``field`` maps (N,3) points to values."""

    target: str
    field: Callable[[np.ndarray], np.ndarray]
    order: int = 3

    def __post_init__(self):
        if self.target not in ("n", "e", "f", "0"):
            raise InvalidArgumentError(f"unknown interpolation target {self.target!r}")


def _call(fn, x: np.ndarray) -> np.ndarray:
    return np.asarray(fn(x), float)


def face_fluxes(topo: CutMeshTopology, fn, order: int = 3) -> np.ndarray:
    """int_F u.n over every global face; n follows the sorted node order."""
    tris = topo.nodes[topo.faces]
    x, w = tri_points(tris, order)
    cr = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    nrm = cr / np.linalg.norm(cr, axis=1, keepdims=True)
    ux = _call(fn, x.reshape(-1, 3)).reshape(x.shape)
    return np.einsum("fq,fqd,fd->f", w, ux, nrm)


def element_averages(topo: CutMeshTopology, fn, order: int = 3) -> np.ndarray:
    """Average of a scalar field over every background element (whole K, also when cut)."""
    mesh = topo.mesh
    out = np.zeros(mesh.n_elements)
    verts = mesh.nodes[mesh.elements[topo.plain_ids]]
    x, w = tet_points(verts, order)
    out[topo.plain_ids] = np.einsum("tq,tq->t", w, _call(fn, x.reshape(-1, 3)).reshape(w.shape)) / w.sum(axis=1)
    for cut in topo.cuts:
        x, w = tet_points(cut.subtets, order)
        out[cut.element_id] = np.sum(w * _call(fn, x.reshape(-1, 3)).reshape(w.shape)) / np.sum(w)
    return out


def interpolate(req: InterpolantRequest, topo: CutMeshTopology) -> np.ndarray:
    if req.target == "n":
        return _call(req.field, topo.nodes)
    if req.target == "e":
        return edge_moments(topo, lambda x, s: req.field(x))
    if req.target == "f":
        return face_fluxes(topo, req.field, req.order)
    return element_averages(topo, req.field, req.order)


def element_volumes(topo: CutMeshTopology) -> np.ndarray:
    return np.abs(topo.mesh.volumes())


@dataclass
class ComplexCheck:
    name: str
    value: float
    expected: float
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: got {self.value:g}, expected {self.expected:g}"


@dataclass
class DeRhamReport:
    counts: dict[str, int]
    checks: list[ComplexCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        head = "counts: " + ", ".join(f"{k}={v}" for k, v in self.counts.items())
        return [head] + [c.line() for c in self.checks]

    def csv_lines(self) -> list[str]:
        return ["check,value,expected,passed"] + [f"{c.name},{c.value:g},{c.expected:g},{int(c.passed)}" for c in self.checks]


def _rank(M) -> int:
    A = M.toarray().astype(float)
    if min(A.shape) == 0:
        return 0
    return int(np.linalg.matrix_rank(A))


def check_exactness(topo: CutMeshTopology, transfers: TransferOperators | None = None, rank_limit: int = RANK_LIMIT) -> DeRhamReport:
    """C G = 0, D C = 0 and, on small meshes, the Euler rank identities."""
    tr = transfers or build_transfers(topo)
    nv, ne, nf, nt = topo.n_nodes, topo.n_edges, topo.n_faces, topo.n_elements
    rep = DeRhamReport({"V": nv, "E": ne, "F": nf, "T": nt})
    cg = abs(tr.C @ tr.G).max() if ne else 0
    dc = abs(tr.D @ tr.C).max() if nf else 0
    rep.checks.append(ComplexCheck("max|C G|", float(cg), 0, cg == 0))
    rep.checks.append(ComplexCheck("max|D C|", float(dc), 0, dc == 0))
    chi = nv - ne + nf - nt
    rep.checks.append(ComplexCheck("V-E+F-T", chi, 1, chi == 1))
    if max(nv, ne, nf) <= rank_limit:
        rg, rc, rd = _rank(tr.G), _rank(tr.C), _rank(tr.D)
        for name, got, want in (
            ("rank G", rg, nv - 1),
            ("rank C", rc, ne - nv + 1),
            ("rank D", rd, nf - ne + nv - 1),
            ("rank D = T", rd, nt),
        ):
            rep.checks.append(ComplexCheck(name, got, want, got == want))
    return rep


@dataclass
class CommutingResiduals:
    grad: float
    curl: float
    div: float

    def max(self) -> float:
        return max(self.grad, self.curl, self.div)


def check_commuting(
    topo: CutMeshTopology,
    u: Callable,
    grad_u: Callable,
    v: Callable,
    curl_v: Callable,
    div_v: Callable,
    transfers: TransferOperators | None = None,
    order: int = 3,
) -> CommutingResiduals:
    """Max residuals of G I^n u - I^e grad u, C I^e v - I^f curl v, D I^f v - |K| Pi0 div v."""
    tr = transfers or build_transfers(topo)
    In = interpolate(InterpolantRequest("n", u), topo)
    Ie_g = interpolate(InterpolantRequest("e", grad_u), topo)
    Ie = interpolate(InterpolantRequest("e", v), topo)
    If_c = interpolate(InterpolantRequest("f", curl_v, order), topo)
    If = interpolate(InterpolantRequest("f", v, order), topo)
    P0 = interpolate(InterpolantRequest("0", div_v, order), topo)
    r1 = np.max(np.abs(tr.G @ In - Ie_g), initial=0.0)
    r2 = np.max(np.abs(tr.C @ Ie - If_c), initial=0.0)
    r3 = np.max(np.abs(tr.D @ If - element_volumes(topo) * P0), initial=0.0)
    return CommutingResiduals(float(r1), float(r2), float(r3))


def polynomial_fields():
    """Cubic scalar and vector test fields with their exact derivatives."""

    def u(x):
        return x[:, 0] ** 2 * x[:, 1] - 0.5 * x[:, 2] ** 3 + x[:, 0] * x[:, 2] + 1.0

    def grad_u(x):
        return np.stack([2 * x[:, 0] * x[:, 1] + x[:, 2], x[:, 0] ** 2, -1.5 * x[:, 2] ** 2 + x[:, 0]], axis=1)

    def v(x):
        a, b, c = x[:, 0], x[:, 1], x[:, 2]
        return np.stack([b * c**2, a**2 * c - b, a * b + c**3], axis=1)

    def curl_v(x):
        a, b, c = x[:, 0], x[:, 1], x[:, 2]
        return np.stack([a - a**2, 2 * b * c - b, 2 * a * c - c**2], axis=1)

    def div_v(x):
        return -1.0 + 3.0 * x[:, 2] ** 2

    return u, grad_u, v, curl_v, div_v
