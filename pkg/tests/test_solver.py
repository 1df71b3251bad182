import numpy as np
import pytest
import scipy.sparse as sp

from ivem import bench
from ivem.assembly import SchemeConfig, assemble
from ivem.errors import ConfigurationError, DivergenceError, InvalidArgumentError
from ivem.mesh import build_cut_mesh, plane_levelset
from ivem.solver import (
    SmootherConfig,
    SymmetricGS,
    aux_solver,
    build_interface_block,
    cg,
    condition_estimate,
    hx_apply,
    interface_edge_set,
    lanczos_condition,
)


def lap1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()


def test_identity_one_iteration():
    b = np.arange(1.0, 11.0)
    res = cg(sp.identity(10), b)
    assert res.iterations == 1 and res.converged
    assert np.allclose(res.x, b)


def test_laplacian_with_and_without_exact_preconditioner():
    A = lap1d(100)
    b = np.ones(100)
    plain = cg(A, b, rel_tol=1e-10, max_iter=500)
    assert plain.converged and 40 <= plain.iterations <= 100
    exact = cg(A, b, aux_solver(A, "direct"), rel_tol=1e-10)
    assert exact.iterations == 1


def test_random_spd_matches_dense():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(50, 50))
    A = B @ B.T + 50 * np.eye(50)
    b = rng.normal(size=50)
    res = cg(A, b, rel_tol=1e-12)
    x = np.linalg.solve(A, b)
    assert np.linalg.norm(res.x - x) <= 1e-10 * np.linalg.norm(x)


def test_cg_zero_rhs_and_nonfinite():
    res = cg(sp.identity(5), np.zeros(5))
    assert res.iterations == 0 and res.converged
    with pytest.raises(DivergenceError):
        cg(sp.identity(3), np.array([1.0, np.nan, 0.0]))


def test_max_iter_reported_not_raised():
    res = cg(lap1d(200), np.ones(200), max_iter=3)
    assert not res.converged and res.iterations == 3


def test_lanczos_condition_of_diagonal():
    d = np.linspace(1.0, 1000.0, 60)
    A = sp.diags(d)
    res = cg(A, np.ones(60), rel_tol=1e-14, max_iter=200)
    assert res.condition_estimate() == pytest.approx(1000.0, rel=1e-6)
    assert condition_estimate(A) == pytest.approx(1000.0, rel=1e-6)
    assert lanczos_condition([], []) == 1.0


def test_gauss_seidel_monotone_and_symmetric():
    A = lap1d(40) + sp.identity(40) * 0.1
    b = np.random.default_rng(1).normal(size=40)
    res = [np.linalg.norm(b - A @ SymmetricGS(A, k)(b)) for k in (1, 2, 4, 8)]
    assert all(r1 > r2 for r1, r2 in zip(res, res[1:]))
    S = SymmetricGS(A, 2)
    M = np.column_stack([S(e) for e in np.eye(40)])
    assert np.allclose(M, M.T, atol=1e-13)


def test_aux_backends():
    A = lap1d(30) + 0.5 * sp.identity(30)
    b = np.ones(30)
    assert np.allclose(A @ aux_solver(A, "direct")(b), b)
    with pytest.raises(ConfigurationError):
        aux_solver(A, "cholmod")
    sols = [cg(A, b, aux_solver(A, k), rel_tol=1e-12).x for k in ("direct", "gs")]
    assert np.allclose(sols[0], sols[1], rtol=1e-9)


def test_amg_backend_if_available():
    pytest.importorskip("pyamg")
    A = lap1d(200) + 0.01 * sp.identity(200)
    res = cg(A, np.ones(200), aux_solver(A, "amg"), rel_tol=1e-10)
    assert res.converged and res.iterations < 30


def test_smoother_config():
    with pytest.raises(InvalidArgumentError):
        SmootherConfig(l=-1)


def test_interface_block_sizes():
    fractions = []
    for n in (6, 10):
        topo = build_cut_mesh(n, plane_levelset(0.05))
        D1 = interface_edge_set(topo, 1)
        D2 = interface_edge_set(topo, 2)
        assert set(D1) <= set(D2)
        assert set(D1) == set(topo.interface_edges())
        fractions.append(len(D1) / topo.n_edges)
    assert fractions[1] < fractions[0]
    assert len(interface_edge_set(build_cut_mesh(3, None), 1)) == 0


def test_full_block_is_direct_solve():
    b = bench.hcurl_flat(0)
    sr = bench.solve_benchmark(b, 4, bench.RunConfig())
    A = sr.system.A_free
    D, sm = build_interface_block(sr.topo, A, 100, sr.system.free_ids)
    assert len(D) == A.shape[0]
    res = cg(A, sr.system.b_free, sm, rel_tol=1e-10)
    assert res.iterations == 1


@pytest.fixture(scope="module")
def hx_setup():
    b = bench.hcurl_sphere()
    topo = bench.build_mesh_for(b, 6)
    sys = assemble(topo, SchemeConfig(b.coeff, kind="hcurl"), b.f, b.u)
    pre = bench.hcurl_preconditioner(topo, sys, b.coeff, "hx", 1)
    return b, topo, sys, pre


def test_hx_linear_symmetric_positive(hx_setup):
    _, _, sys, pre = hx_setup
    n = sys.A_free.shape[0]
    rng = np.random.default_rng(2)
    assert np.all(hx_apply(pre, np.zeros(n)) == 0)
    for _ in range(100):
        u, v = rng.normal(size=n), rng.normal(size=n)
        lhs, rhs = pre(u) @ v, u @ pre(v)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)
        assert pre(u) @ u > 0
    with pytest.raises(InvalidArgumentError):
        hx_apply(pre, np.zeros(n + 1))


def test_hx_agrees_with_unpreconditioned(hx_setup):
    _, _, sys, pre = hx_setup
    tol = 1e-10
    a = cg(sys.A_free, sys.b_free, pre, tol)
    b = cg(sys.A_free, sys.b_free, None, tol, max_iter=20000)
    assert a.converged and b.converged
    assert a.iterations < b.iterations
    assert np.linalg.norm(a.x - b.x) <= 10 * 1e-8 * np.linalg.norm(b.x)


def test_gradient_branch_matches_galerkin(hx_setup):
    _, topo, sys, pre = hx_setup
    Ag = pre.A_grad
    assert abs(Ag - Ag.T).max() <= 1e-12 * abs(Ag).max()
    G = pre.G
    assert np.allclose((G.T @ sys.A_free @ G).toarray(), Ag.toarray())


def test_hx_uncut_mesh_independent():
    b = bench.hcurl_patch(alpha=(1.0, 1.0), beta=(1.0, 1.0))
    its = []
    for n in (8, 12, 16):
        sr = bench.solve_benchmark(b, n, bench.RunConfig(), topo=build_cut_mesh(n, None))
        assert sr.converged
        its.append(sr.iterations)
    assert max(its) <= 60


def test_preconditioner_methods(hx_setup):
    b, topo, sys, _ = hx_setup
    counts = {}
    for m in ("hx", "bd", "diag"):
        M = bench.hcurl_preconditioner(topo, sys, b.coeff, m, 1)
        counts[m] = cg(sys.A_free, sys.b_free, M, 1e-8, 5000).iterations
    assert counts["hx"] <= counts["bd"] <= counts["diag"]
    with pytest.raises(InvalidArgumentError):
        bench.hcurl_preconditioner(topo, sys, b.coeff, "ilu", 1)
    assert bench.hcurl_preconditioner(topo, sys, b.coeff, "none", 1) is None
