"""Command line driver: ``ivem converge|solve|precond|verify|export-mesh``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .assembly import build_transfers
from .derham import check_commuting, check_exactness, polynomial_fields
from .errors import ConfigurationError, DivergenceError, InvalidArgumentError, IVEMError
from .mesh import build_cut_mesh, plane_levelset, sphere_levelset, tori_levelset, write_vtk_mesh, write_vtk_triangles
from .projection import projection_suite

log = logging.getLogger("ivem")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4

CONFIG_KEYS = {
    "gamma": float,
    "gamma0": float,
    "gamma1": float,
    "rel_tol": float,
    "snap_tol": float,
    "backend": str,
    "l": int,
    "max_iter": int,
    "cut_rule": str,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_config(path: str | Path) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](val)
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{lineno}: bad value for {key}") from exc
    return out


def run_config(args) -> bench.RunConfig:
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if values.get("backend", "direct") not in ("direct", "gs", "amg"):
        raise ConfigurationError(f"unknown backend {values['backend']!r}")
    return bench.RunConfig(**values)


def parse_int_list(text: str) -> list[int]:
    """``8,16,24`` or a range ``0..4``."""
    text = text.strip()
    try:
        if ".." in text:
            a, b = text.split("..")
            return list(range(int(a), int(b) + 1))
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse integer list {text!r}") from exc


def _write_lines(lines: list[str], out: str | None) -> None:
    text = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(text)
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def _benchmark(args) -> bench.Benchmark:
    if not args.problem:
        raise UsageError("--problem is required")
    params = {}
    if getattr(args, "beta", None):
        bm, bp = (float(t) for t in args.beta.split(","))
        if args.problem.startswith("h1"):
            params = {"beta_minus": bm, "beta_plus": bp}
        else:
            params = {"beta": (bm, bp)}
    try:
        return bench.get_benchmark(args.problem, **params)
    except InvalidArgumentError as exc:
        raise UsageError(str(exc)) from exc


def cmd_converge(args) -> int:
    b = _benchmark(args)
    cfg = run_config(args)
    table = bench.run_convergence(b, parse_int_list(args.nlist), cfg)
    _write_lines(table.csv_lines(), args.out)
    return EXIT_OK


def cmd_solve(args) -> int:
    b = _benchmark(args)
    cfg = run_config(args)
    res = bench.solve_benchmark(b, args.n, cfg, precond=args.precond)
    if args.dump_system:
        res.system.dump(args.dump_system)
    rep = bench.compute_errors(res.topo, res.uh, b)
    rep.iters, rep.seconds = res.iterations, res.seconds
    _write_lines([",".join(bench.CSV_CONVERGE), ",".join(bench._fmt(v) for v in rep.row())], args.out)
    if not res.converged:
        raise DivergenceError(f"CG did not converge in {res.iterations} iterations")
    return EXIT_OK


def cmd_precond(args) -> int:
    cfg = run_config(args)
    rows = bench.run_precond_study(parse_int_list(args.rlist), parse_int_list(args.llist), args.n, cfg)
    _write_lines(bench.precond_csv_lines(rows), args.out)
    return EXIT_OK


def verify_suites(n_projection: int = 200, seed: int = 0) -> tuple[bool, list[str]]:
    """de Rham, patch and projection-reproduction suites."""
    lines, ok = [], True
    fields = polynomial_fields()
    for label, ls in (("uncut", None), ("flat", plane_levelset(0.05)), ("sphere", sphere_levelset())):
        for n in (2, 4):
            topo = build_cut_mesh(n, ls)
            tr = build_transfers(topo)
            rep = check_exactness(topo, tr)
            com = check_commuting(topo, *fields, transfers=tr)
            good = rep.passed and com.max() <= 1e-10
            ok &= good
            lines.append(f"{'PASS' if good else 'FAIL'} de Rham {label} n={n}: commuting max {com.max():.2e}")
            lines += ["  " + s for s in rep.lines() if s.startswith("FAIL")]
    tight = bench.RunConfig(rel_tol=1e-13)
    for name in ("h1-patch", "hcurl-patch"):
        b = bench.get_benchmark(name)
        res = bench.solve_benchmark(b, 8, tight)
        rep = bench.compute_errors(res.topo, res.uh, b)
        errs = [rep.err_L2, rep.err_energy] + ([rep.err_Linf] if b.kind == "h1" else [])
        good = max(errs) <= 1e-8
        ok &= good
        lines.append(f"{'PASS' if good else 'FAIL'} patch {name} n=8: max error {max(errs):.2e}")
    cuts = build_cut_mesh(8, sphere_levelset()).cuts
    prep = projection_suite(cuts, n_projection, seed)
    ok &= prep.passed
    lines += prep.lines()
    return ok, lines


def cmd_verify(args) -> int:
    ok, lines = verify_suites(args.count, args.seed)
    _write_lines(lines, None)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_export_mesh(args) -> int:
    name = args.problem or "sphere"
    ls = {"sphere": sphere_levelset, "tori": tori_levelset, "flat": plane_levelset, "none": lambda: None}.get(name)
    box = None
    if ls is None:
        b = _benchmark(args)
        ls_obj, box = b.levelset, b.box
    else:
        ls_obj = ls()
        if name == "tori":
            box = bench.Box.cube(1.3)
    topo = build_cut_mesh(args.n, ls_obj, box)
    out = Path(args.vtk)
    sign = topo.cutmesh.element_sign().astype(float)
    write_vtk_mesh(out, topo.mesh, {"interface": topo.cutmesh.interface.astype(float), "sign": sign})
    if topo.cuts:
        write_vtk_triangles(out.with_name(out.stem + "_faces.vtk"), topo)
    log.info("exported %d elements (%d interface)", topo.n_elements, len(topo.cuts))
    return EXIT_OK


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file (flags override it)")
    p.add_argument("--gamma", type=float)
    p.add_argument("--gamma0", type=float)
    p.add_argument("--gamma1", type=float)
    p.add_argument("--rel-tol", dest="rel_tol", type=float)
    p.add_argument("--snap-tol", dest="snap_tol", type=float)
    p.add_argument("--backend", choices=["direct", "gs", "amg"])
    p.add_argument("--l", type=int, help="interface block width")
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--cut-rule", dest="cut_rule", choices=["linear", "bisection"])
    p.add_argument("--out", help="CSV output path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ivem", description="Immersed virtual elements for H1 and H(curl) interface problems.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    c = sub.add_parser("converge", help="convergence study, CSV out")
    c.add_argument("--problem")
    c.add_argument("--nlist", default="8,16")
    c.add_argument("--beta", help="beta_minus,beta_plus override")
    _common(c)
    c.set_defaults(func=cmd_converge)

    s = sub.add_parser("solve", help="single solve with errors")
    s.add_argument("--problem")
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--beta")
    s.add_argument("--precond", choices=["hx", "bd", "diag", "none", "aux"])
    s.add_argument("--dump-system", dest="dump_system", metavar="PREFIX")
    _common(s)
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("precond", help="flat-interface preconditioner study")
    r.add_argument("--rlist", default="0..4")
    r.add_argument("--llist", default="0,1,2")
    r.add_argument("--n", type=int, default=12)
    _common(r)
    r.set_defaults(func=cmd_precond)

    v = sub.add_parser("verify", help="de Rham, patch and projection suites")
    v.add_argument("--count", type=int, default=200, help="randomized projection tests")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("export-mesh", help="legacy VTK export")
    e.add_argument("--n", type=int, default=8)
    e.add_argument("--problem", help="sphere, tori, flat, none or a benchmark name")
    e.add_argument("--vtk", default="mesh.vtk")
    e.set_defaults(func=cmd_export_mesh)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        if not getattr(args, "func", None):
            raise UsageError("a subcommand is required")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ivem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, InvalidArgumentError) as exc:
        print(f"ivem: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        log.error("%s", exc)
        print(f"ivem: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except IVEMError as exc:
        print(f"ivem: error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
