"""Simplex quadrature built from collapsed Gauss-Jacobi products."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


def _jacobi01(n: int, a: int) -> tuple[np.ndarray, np.ndarray]:
    # rule on [0,1] for weight (1-u)^a
    t, w = roots_jacobi(n, a, 0) if a > 0 else roots_legendre(n)
    return (1.0 + t) / 2.0, w / 2.0 ** (a + 1)


@lru_cache(maxsize=None)
def tet_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points (q,4) and weights summing to one, exact to degree 2n-1."""
    u, wu = _jacobi01(n, 2)
    v, wv = _jacobi01(n, 1)
    s, ws = _jacobi01(n, 0)
    U, V, S = np.meshgrid(u, v, s, indexing="ij")
    W = (wu[:, None, None] * wv[None, :, None] * ws[None, None, :]).ravel()
    x = U.ravel()
    y = (V * (1.0 - U)).ravel()
    z = (S * (1.0 - U) * (1.0 - V)).ravel()
    lam = np.stack([1.0 - x - y - z, x, y, z], axis=1)
    return lam, 6.0 * W


@lru_cache(maxsize=None)
def tri_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points (q,3) and weights summing to one, exact to degree 2n-1."""
    u, wu = _jacobi01(n, 1)
    s, ws = _jacobi01(n, 0)
    U, S = np.meshgrid(u, s, indexing="ij")
    W = (wu[:, None] * ws[None, :]).ravel()
    x = U.ravel()
    y = (S * (1.0 - U)).ravel()
    lam = np.stack([1.0 - x - y, x, y], axis=1)
    return lam, 2.0 * W


def gauss_line(n: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Points in [0,1] and weights summing to one."""
    t, w = roots_legendre(n)
    return (1.0 + t) / 2.0, w / 2.0


# edge-midpoint rule, exact for quadratics on a triangle
MIDPOINT_LAMBDA = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


def tet_points(tets: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Map the rule onto tetrahedra given as (..., 4, 3) coordinates.

    Returns points (..., q, 3) and weights (..., q) scaled by the signed volume.
    """
    lam, w = tet_rule(n)
    pts = np.einsum("qa,...ad->...qd", lam, tets)
    e = tets[..., 1:, :] - tets[..., :1, :]
    vol = np.linalg.det(e) / 6.0
    return pts, vol[..., None] * w


def tri_points(tris: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Map the rule onto triangles (..., 3, 3); weights carry the area."""
    lam, w = tri_rule(n)
    pts = np.einsum("qa,...ad->...qd", lam, tris)
    cr = np.cross(tris[..., 1, :] - tris[..., 0, :], tris[..., 2, :] - tris[..., 0, :])
    area = 0.5 * np.linalg.norm(cr, axis=-1)
    return pts, area[..., None] * w
