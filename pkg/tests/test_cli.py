import pytest

from ivem import cli
from ivem.errors import ConfigurationError


def test_missing_problem_is_usage_error(capsys):
    assert cli.main(["converge"]) == cli.EXIT_USAGE
    assert "--problem" in capsys.readouterr().err


def test_unknown_flag_and_missing_subcommand():
    assert cli.main(["solve", "--problem", "h1-sphere", "--bogus"]) == cli.EXIT_USAGE
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["solve", "--problem", "h1-cube"]) == cli.EXIT_USAGE


def test_converge_csv(capsys):
    assert cli.main(["converge", "--problem", "h1-sphere", "--nlist", "4,8"]) == cli.EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("n,h,dof_total")
    assert len(lines) == 4
    assert lines[-1].startswith("slope,err_L2=")


def test_converge_to_file(tmp_path):
    out = tmp_path / "c.csv"
    assert cli.main(["converge", "--problem", "h1-patch", "--nlist", "4", "--rel-tol", "1e-13", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[-1] == "slope,err_L2=inf,err_Linf=inf,err_energy=inf"


def test_int_lists():
    assert cli.parse_int_list("0..4") == [0, 1, 2, 3, 4]
    assert cli.parse_int_list("8, 16") == [8, 16]
    with pytest.raises(cli.UsageError):
        cli.parse_int_list("a,b")


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# solver\ngamma = 2.5\nrel_tol = 1e-6\nl = 2\n")
    args = cli.build_parser().parse_args(["solve", "--problem", "h1-sphere", "--config", str(cfg), "--l", "3"])
    rc = cli.run_config(args)
    assert (rc.gamma, rc.rel_tol, rc.l) == (2.5, 1e-6, 3)


def test_bad_config(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = red\n")
    with pytest.raises(ConfigurationError):
        cli.read_config(cfg)
    assert cli.main(["solve", "--problem", "h1-sphere", "--config", str(cfg)]) == cli.EXIT_USAGE
    cfg.write_text("gamma 3\n")
    with pytest.raises(ConfigurationError):
        cli.read_config(cfg)


def test_solve_reports_errors(capsys, tmp_path):
    assert cli.main(["solve", "--problem", "hcurl-sphere", "--n", "4", "--dump-system", str(tmp_path / "s")]) == 0
    out = capsys.readouterr().out
    assert "err_L2" in out
    assert (tmp_path / "s_A.mtx").exists()


def test_solver_failure_exit_code():
    args = ["solve", "--problem", "hcurl-sphere", "--n", "4", "--precond", "none", "--max-iter", "2"]
    assert cli.main(args) == cli.EXIT_SOLVER


def test_export_mesh(tmp_path):
    out = tmp_path / "m.vtk"
    assert cli.main(["export-mesh", "--n", "4", "--problem", "sphere", "--vtk", str(out)]) == 0
    text = out.read_text()
    assert text.startswith("# vtk DataFile Version")
    assert "CELL_DATA" in text
    assert (tmp_path / "m_faces.vtk").exists()


def test_verify_small(capsys):
    assert cli.main(["verify", "--count", "20"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out
