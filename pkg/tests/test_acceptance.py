"""Acceptance criteria 1-9; each test records one PASS/FAIL line for the summary."""

import math
import time

import numpy as np
import pytest

import conftest
from ivem import bench
from ivem.assembly import build_transfers
from ivem.derham import check_commuting, check_exactness, polynomial_fields
from ivem.mesh import build_cut_mesh, check_geometry, plane_levelset, sphere_levelset
from ivem.projection import projection_suite

H1_WINDOWS = {"err_L2": (1.7, 2.3), "err_Linf": (1.6, 2.4), "err_energy": (0.7, 1.3)}
HCURL_WINDOWS = {"err_L2": (0.7, 1.3), "err_energy": (0.7, 1.3)}

_MESHES: dict = {}


def record(k: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)


def mesh_for(b: bench.Benchmark, n: int):
    key = (b.levelset.name, tuple(b.box.lo), tuple(b.box.hi), n)
    if key not in _MESHES:
        _MESHES[key] = bench.build_mesh_for(b, n)
    return _MESHES[key]


def benchmark_runs():
    """(benchmark, n) pairs used by the convergence and preconditioner criteria."""
    runs = [(bench.h1_sphere(1, 10), n) for n in (8, 16, 24, 32)]
    runs += [(bench.hcurl_sphere(), n) for n in (8, 12, 16, 24)]
    runs += [(bench.hcurl_flat(r), 12) for r in range(5)]
    runs += [(bench.h1_patch(), 8), (bench.hcurl_patch(), 8)]
    runs += [(bench.hcurl_tori(), n) for n in (8, 16)]
    return runs


def _slope_check(table, windows):
    ok = True
    parts = []
    for key, (lo, hi) in windows.items():
        s = table.slopes[key]
        good = lo <= s <= hi
        ok &= good
        parts.append(f"{key} {s:.3f} in [{lo}, {hi}]")
    return ok, "; ".join(parts)


@pytest.mark.parametrize("k,beta", [(1, (1.0, 10.0)), (2, (1.0, 100.0))], ids=["c1-beta10", "c2-beta100"])
def test_h1_sphere_convergence(k, beta):
    t0 = time.perf_counter()
    table = bench.run_convergence(bench.h1_sphere(*beta), [8, 16, 24, 32], bench.RunConfig(rel_tol=1e-10))
    ok, detail = _slope_check(table, H1_WINDOWS)
    record(k, ok, f"H1 sphere beta={beta}: {detail} ({time.perf_counter() - t0:.0f}s)")
    assert ok, detail


def test_hcurl_sphere_convergence():
    t0 = time.perf_counter()
    table = bench.run_convergence(bench.hcurl_sphere(), [8, 12, 16, 24], bench.RunConfig(rel_tol=1e-10))
    ok, detail = _slope_check(table, HCURL_WINDOWS)
    errs = ", ".join(f"n={r.n}: {r.err_L2:.3e}/{r.err_energy:.3e}" for r in table.reports)
    record(3, ok, f"H(curl) sphere: {detail}; L2/curl errors {errs} ({time.perf_counter() - t0:.0f}s)")
    assert ok, detail


def test_patch_reproduction():
    cfg = bench.RunConfig(rel_tol=1e-13)
    worst = {}
    for b in (bench.h1_patch(), bench.hcurl_patch()):
        sr = bench.solve_benchmark(b, 8, cfg)
        rep = bench.compute_errors(sr.topo, sr.uh, b)
        errs = [rep.err_L2, rep.err_energy] + ([rep.err_Linf] if b.kind == "h1" else [])
        worst[b.name] = max(errs)
    ok = max(worst.values()) <= 1e-8
    record(4, ok, "patch max errors " + ", ".join(f"{k} {v:.2e}" for k, v in worst.items()) + " (tol 1e-8)")
    assert ok


def test_small_cut_robustness():
    rows = bench.run_precond_study(range(5), [0, 2], n=12)
    it2 = [r.iters for r in rows if r.l == 2]
    it0_r4 = next(r.iters for r in rows if r.l == 0 and r.r == 4)
    cond = [r.cond_est for r in rows if r.l == 2]
    spread = max(it2) / min(it2)
    checks = {
        "spread": spread <= 1.25,
        "l0/l2": it0_r4 >= 1.5 * it2[-1],
        "monotone": all(a < b for a, b in zip(cond, cond[1:])),
    }
    ok = all(checks.values())
    detail = (
        f"HX(l=2) iters {it2} max/min {spread:.3f} (<= 1.25: {checks['spread']}); "
        f"r=4 l=0 {it0_r4} vs l=2 {it2[-1]} (>= 1.5x: {checks['l0/l2']}); "
        f"cond {', '.join(f'{c:.2e}' for c in cond)} (monotone: {checks['monotone']})"
    )
    record(5, ok, detail)
    assert ok, detail


def test_preconditioner_ordering():
    b = bench.hcurl_sphere()
    counts = {}
    converged = True
    for n in (8, 12, 16):
        topo = mesh_for(b, n)
        for label, method, l in (("hx1", "hx", 1), ("hx0", "hx", 0), ("bd", "bd", 1), ("diag", "diag", 1)):
            sr = bench.solve_benchmark(b, n, bench.RunConfig(l=l, max_iter=20000), topo=topo, precond=method)
            converged &= sr.converged
            counts[label, n] = sr.iterations
    ns = (8, 12, 16)
    order = all(counts["hx1", n] <= counts["hx0", n] <= counts["bd", n] <= counts["diag", n] for n in ns)
    hx1 = [counts["hx1", n] for n in ns]
    hx0 = [counts["hx0", n] for n in ns]
    trend = max(hx1) <= 2 * min(hx1) and max(hx0) <= 2 * min(hx0)
    ok = converged and order and trend
    table = "; ".join(f"n={n}: " + "/".join(str(counts[m, n]) for m in ("hx1", "hx0", "bd", "diag")) for n in ns)
    record(6, ok, f"iterations HX(1)/HX(0)/BD-PCG/Jacobi {table} (converged: {converged}, ordering: {order}, HX within 2x: {trend})")
    assert ok


def test_de_rham_suite():
    fields = polynomial_fields()
    ok, worst_cg, worst_com, n_rank = True, 0.0, 0.0, 0
    for ls in (None, plane_levelset(0.05), sphere_levelset()):
        for n in (2, 4):
            topo = build_cut_mesh(n, ls)
            tr = build_transfers(topo)
            rep = check_exactness(topo, tr)
            ok &= rep.passed and any(c.name.startswith("rank") for c in rep.checks)
            n_rank += 1
            com = check_commuting(topo, *fields, transfers=tr).max()
            worst_com = max(worst_com, com)
    seen = set()
    for b, n in benchmark_runs():
        topo = mesh_for(b, n)
        if id(topo) in seen:
            continue
        seen.add(id(topo))
        tr = build_transfers(topo)
        worst_cg = max(worst_cg, abs(tr.C @ tr.G).max(), abs(tr.D @ tr.C).max())
        worst_com = max(worst_com, check_commuting(topo, *fields, transfers=tr).max())
    ok &= worst_cg == 0 and worst_com <= 1e-10
    record(
        7,
        ok,
        f"|CG|,|DC| max {worst_cg:g} on {len(seen)} benchmark meshes; rank identities on {n_rank} small meshes; "
        f"commuting residual max {worst_com:.2e} (tol 1e-10)",
    )
    assert ok


def test_projection_suite():
    cuts = mesh_for(bench.h1_sphere(), 8).cuts
    rep = projection_suite(cuts, 1000, seed=0)
    detail = ", ".join(f"{k} {v:.2e}" for k, v in rep.reproduction.items())
    detail += "; orthogonality " + ", ".join(f"{k} {v:.2e}" for k, v in rep.orthogonality.items())
    record(8, rep.passed, f"1000 tests, reproduction (tol 1e-11) {detail} (tol 1e-10)")
    assert rep.passed, rep.lines()


def test_geometry_invariants():
    worst_area = worst_vol = worst_plane = worst_angle = 0.0
    ok = True
    seen = set()
    for b, n in benchmark_runs():
        topo = mesh_for(b, n)
        if id(topo) in seen:
            continue
        seen.add(id(topo))
        plane = None
        if b.name.endswith("flat") or b.name.endswith("patch"):
            plane = ((1.0, 0.0, 0.0), float(b.params.get("offset", 0.05)))
        rep = check_geometry(topo, plane)
        ok &= rep.passed(1e-12)
        worst_area = max(worst_area, rep.area_residual)
        worst_vol = max(worst_vol, rep.volume_residual)
        worst_angle = max(worst_angle, rep.max_angle)
        if rep.plane_distance is not None:
            worst_plane = max(worst_plane, rep.plane_distance)
    record(
        9,
        ok,
        f"{len(seen)} meshes: area residual {worst_area:.1e}, volume residual {worst_vol:.1e} (tol 1e-12); "
        f"planar distance {worst_plane:.1e}; max triangle angle {worst_angle:.3f} < pi",
    )
    assert ok and worst_angle < math.pi and np.isfinite(worst_plane)
