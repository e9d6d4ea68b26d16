import numpy as np
import pytest

from nudgefem import config as cf
from nudgefem import writers
from nudgefem import mesh as msh


def test_parse_values():
    assert cf.parse_value("true") is True and cf.parse_value("off") is False
    assert cf.parse_value("64") == 64 and cf.parse_value("1e-3") == 1e-3
    assert cf.parse_value("8, 16,32") == [8, 16, 32]
    assert cf.parse_value("n**2") == "n**2"


def test_expressions():
    assert cf.evaluate_expression("1/n**2", n=8) == pytest.approx(1 / 64)
    assert cf.evaluate_expression("n^2", n=4) == 16
    for bad in ("__import__('os')", "n.real", "1/"):
        with pytest.raises(cf.ConfigError):
            cf.evaluate_expression(bad, n=2)


def test_file_then_flags(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nscenario = accuracy-velocity\nn = 8, 16\ndt = 1/n**2  # per level\nchi = 50\n")
    cfg = cf.ScenarioConfig.build("accuracy-velocity", cf.read_config_file(f), {"chi": "n**2", "n": None})
    assert cfg.levels == [8, 16]
    assert cfg.value("dt", 16) == pytest.approx(1 / 256)
    assert cfg.value("chi", 16) == 256  # the flag wins over the file
    assert cfg.value("c") == 1000.0


@pytest.mark.parametrize("text", ["nonsense\n", "= 3\n"])
def test_malformed_file(tmp_path, text):
    f = tmp_path / "bad.cfg"
    f.write_text(text)
    with pytest.raises(cf.ConfigError):
        cf.read_config_file(f)


@pytest.mark.parametrize("overrides", [{"bogus": 1}, {"nu": -1.0}, {"dt": "0"}, {"obs_kind": "spline"},
                                       {"n": [0]}, {"box": [1.0, 0.0, 0.0, 1.0]}, {"dt": "1/(n-8)"}])
def test_invalid_values(overrides):
    with pytest.raises(cf.ConfigError):
        cf.ScenarioConfig.build("accuracy-velocity", None, overrides)


def test_unknown_scenario_and_mismatch():
    with pytest.raises(cf.ConfigError):
        cf.ScenarioConfig.build("weather", None, None)
    with pytest.raises(cf.ConfigError):
        cf.ScenarioConfig.build("acoustic", {"scenario": "taylor-green"}, None)
    with pytest.raises(cf.ConfigError):
        cf.ScenarioConfig.build("acoustic", None, {"cases": ["FREE", "BOTH"]})


def test_header_reproduces_config(tmp_path):
    cfg = cf.ScenarioConfig.build("acoustic", None, {"n_true": 64})
    f = tmp_path / "echo.cfg"
    f.write_text(cfg.to_text())
    again = cf.ScenarioConfig.build("acoustic", cf.read_config_file(f), None)
    assert again.header_lines() == cfg.header_lines()
    assert again.levels == cfg.levels and again.value("dt") == cfg.value("dt")


def test_csv_roundtrip(tmp_path):
    rows = [(8, 0.125, 1 / 64, 1.5e-4, float("nan"), 2e-2, float("nan")),
            (16, 0.0625, 1 / 64, 3.7e-5, 2.019, 5e-3, 2.0)]
    p = writers.write_csv(tmp_path / "a.csv", "accuracy", rows, ["scenario=accuracy-pressure", "nu=1.0"])
    header, cols, got = writers.read_csv(p)
    assert header == ["scenario=accuracy-pressure", "nu=1.0"]
    assert tuple(cols) == writers.SCHEMAS["accuracy"]
    vals = np.array(got, dtype=float)
    assert np.array_equal(vals[1], np.array(rows[1]))
    assert np.isnan(vals[0, 4])
    assert p.read_text().startswith("# scenario=")
    with pytest.raises(ValueError):
        writers.write_csv(tmp_path / "b.csv", "stats", [(1.0, 2.0)])


def test_vtk_roundtrip(tmp_path):
    meshio = pytest.importorskip("meshio")
    m = msh.barycentric_refine(msh.build_structured(3))
    x, y = m.vertices.T
    vel = np.column_stack([x * y, -x])
    p = writers.write_vtk(tmp_path / "s.vtk", m, vel, x + y, np.sin(x))
    text = p.read_text().splitlines()
    assert text[0] == "# vtk DataFile Version 3.0" and text[2] == "ASCII"
    r = meshio.read(p)
    assert np.allclose(r.points[:, :2], m.vertices, atol=0)
    assert np.array_equal(r.cells_dict["triangle"], m.triangles)
    assert np.allclose(r.point_data["velocity"], np.column_stack([vel, np.zeros(len(x))]), atol=0)
    assert np.allclose(r.point_data["pressure"].ravel(), x + y, atol=0)
    assert np.allclose(r.point_data["vorticity"].ravel(), np.sin(x), atol=0)
