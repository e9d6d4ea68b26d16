import numpy as np
import pytest

from nudgefem import cli, linalg, writers


def run(argv):
    return cli.main(argv)


def test_check_conditions_pass_and_fail(capsys):
    assert run(["check-conditions", "--chi", "100", "--H", "0.01", "--set", "C1=1", "--check"]) == 0
    out = capsys.readouterr().out
    assert "chi_margin=48.3125" in out and "passed=True" in out
    assert run(["check-conditions", "--chi", "0", "--set", "C1=1", "--check"]) == cli.EXIT_CHECK
    # without --check a failing report is informational only
    assert run(["check-conditions", "--chi", "0", "--set", "C1=1"]) == 0


def test_check_conditions_auto_c1(capsys):
    assert run(["check-conditions", "--H", "0.125"]) == 0
    c1 = float(capsys.readouterr().out.split("C1=")[1].split()[0])
    assert 0 < c1 <= 1 / np.pi + 1e-12


@pytest.mark.parametrize("argv", [
    ["accuracy-pressure", "--n", "0"],
    ["accuracy-pressure", "--set", "bogus=1"],
    ["acoustic", "--dt", "-1"],
    ["taylor-green", "--config", "/nonexistent/file.cfg"],
    ["check-conditions", "--set", "novalue"],
])
def test_config_errors_exit_2(argv, capsys):
    assert run(argv) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        run(["no-such-scenario"])
    assert exc.value.code == 2


TINY_ACCURACY = ["--n", "2,4", "--set", "T=0.05", "--dt", "0.025", "--set", "refine=false"]


def test_accuracy_tiny_run(tmp_path, capsys):
    assert run(["accuracy-pressure", "--out-dir", str(tmp_path)] + TINY_ACCURACY) == 0
    header, cols, rows = writers.read_csv(tmp_path / "accuracy_pressure.csv")
    assert tuple(cols) == writers.SCHEMAS["accuracy"]
    assert "scenario=accuracy-pressure" in header and "T=0.05" in header
    vals = np.array(rows, dtype=float)
    assert vals.shape == (2, 7) and np.all(vals[:, 3] > 0) and np.isfinite(vals[1, 4])


def test_accuracy_check_fails_on_tiny_meshes(tmp_path):
    # two coarse levels cannot meet the convergence thresholds
    assert run(["accuracy-velocity", "--out-dir", str(tmp_path), "--check"] + TINY_ACCURACY) == cli.EXIT_CHECK


def test_solver_failure_exit_3(tmp_path, monkeypatch, capsys):
    def broken(self, A, b, x0=None):
        raise linalg.SingularSystem("zero pivot")

    monkeypatch.setattr(linalg.LaggedSolver, "solve", broken)
    assert run(["taylor-green", "--out-dir", str(tmp_path), "--n", "2", "--set", "T=0.02", "--dt", "0.01"]) == cli.EXIT_SOLVER
    assert "solver failure" in capsys.readouterr().err


def test_taylor_green_tiny_run_with_vtk(tmp_path):
    argv = ["taylor-green", "--out-dir", str(tmp_path), "--n", "4", "--set", "T=0.04", "--dt", "0.01",
            "--set", "output_every=1", "--write-vtk", "--plateau"]
    assert run(argv) == 0
    header, cols, rows = writers.read_csv(tmp_path / "stats_nudged.csv")
    assert tuple(cols) == writers.SCHEMAS["stats"] and len(rows) == 5
    assert (tmp_path / "stats_reference.csv").exists()
    assert len(list(tmp_path.glob("stats_nudged_cartesian_H*.csv"))) == 2  # plateau pair H and H/2
    vtks = sorted(p.name for p in tmp_path.glob("*.vtk"))
    assert vtks and all(p.endswith("_t0.04.vtk") for p in vtks)


def test_acoustic_tiny_run(tmp_path):
    argv = ["acoustic", "--out-dir", str(tmp_path), "--n", "8", "--set", "n_true=16", "--set", "T=0.2",
            "--dt", "0.05", "--set", "H=1.25"]
    assert run(argv) == 0
    for name, schema in (("probes.csv", "probes"), ("acoustic_summary.csv", "acoustic_summary"),
                         ("wave_speed.csv", "wave_speed")):
        header, cols, rows = writers.read_csv(tmp_path / name)
        assert tuple(cols) == writers.SCHEMAS[schema] and rows
    _, _, rows = writers.read_csv(tmp_path / "acoustic_summary.csv")
    assert [r[0] for r in rows] == ["FREE", "VEL", "FULL"]
