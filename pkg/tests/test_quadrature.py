import math

import numpy as np
import pytest

from ivem.quadrature import gauss_line, tet_points, tet_rule, tri_points, tri_rule


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_tet_rule_exact_monomials(n):
    lam, w = tet_rule(n)
    x = lam[:, 1:]
    assert w.sum() == pytest.approx(1.0)
    for a in range(n + 1):
        for b in range(n + 1 - a):
            c = n - a - b
            exact = math.factorial(a) * math.factorial(b) * math.factorial(c) / math.factorial(a + b + c + 3)
            assert w @ (x[:, 0] ** a * x[:, 1] ** b * x[:, 2] ** c) / 6 == pytest.approx(exact, rel=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_tri_rule_exact_monomials(n):
    lam, w = tri_rule(n)
    x = lam[:, 1:]
    for a in range(n + 1):
        b = n - a
        exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
        assert w @ (x[:, 0] ** a * x[:, 1] ** b) / 2 == pytest.approx(exact, rel=1e-12)


def test_gauss_line_degree_five():
    t, w = gauss_line(3)
    assert w.sum() == pytest.approx(1.0)
    assert w @ t**5 == pytest.approx(1 / 6)


def test_mapped_points():
    tets = np.array([[[0, 0, 0], [2, 0, 0], [0, 2, 0], [0, 0, 2]]], float)
    x, w = tet_points(tets, 2)
    assert w.sum() == pytest.approx(8 / 6)
    assert np.allclose((w[..., None] * x).sum(axis=1) / w.sum(), 0.5)
    tris = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 1]]], float)
    x, w = tri_points(tris, 2)
    assert w.sum() == pytest.approx(0.5 * math.sqrt(2))
