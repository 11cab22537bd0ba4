import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seepage import cli
from seepage.config import ConfigError, default_scenario, parse_config, parse_text
from seepage.io import read_csv
from seepage.mesh import read_mesh


def test_empty_fluid_section_defaults():
    s = parse_text("kind = two_reservoir\n[fluid]\n")
    assert s.params.mu == 0.03 and s.params.rho_f == 1.0


def test_negative_dt_names_key():
    with pytest.raises(ConfigError) as info:
        parse_text("kind = channel_contact\n[time]\ndt = -0.1\n")
    assert info.value.key == "time.dt"
    assert "time.dt" in str(info.value) and info.value.line == 3


def test_unknown_key_verbatim():
    with pytest.raises(ConfigError) as info:
        parse_text("kind = two_reservoir\n[fluid]\nviscocity = 0.1\n")
    assert "fluid.viscocity" in str(info.value)
    assert "mu" not in str(info.value)


@pytest.mark.parametrize("text,line", [
    ("kind = two_reservoir\n[fluid\n", 2),
    ("kind = two_reservoir\njunk\n", 2),
    ("kind = two_reservoir\n[fluid]\nmu = abc\n", 3),
    ("kind = two_reservoir\n[nowhere]\n", 2),
    ("kind = two_reservoir\n[fluid]\nmu = 1\nmu = 2\n", 4),
    ("kind = two_reservoir\n[mesh]\nnx = 4\n", 3),
])
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as info:
        parse_text(text)
    assert info.value.line == line


def test_kind_required_and_checked():
    with pytest.raises(ConfigError):
        parse_text("[fluid]\nmu = 1\n")
    with pytest.raises(ConfigError):
        parse_text("kind = other\n")


def test_load_schedule_validation():
    s = parse_text("kind = channel_contact\n[load]\ntimes = 0, 1.5\nvalues = 2, 0\n")
    assert s.params.pbar(1.0) == 2.0 and s.params.pbar(2.0) == 0.0
    with pytest.raises(ConfigError) as info:
        parse_text("kind = channel_contact\n[load]\ntimes = 1, 0\nvalues = 2, 0\n")
    assert info.value.key == "load.times"
    with pytest.raises(ConfigError):
        parse_text("kind = channel_contact\n[load]\ntimes = 0, 1\nvalues = 2\n")


def test_time_window_validation():
    with pytest.raises(ConfigError) as info:
        parse_text("kind = two_reservoir\n[time]\nt_end = 0.01\ndt = 0.1\n")
    assert info.value.key == "time.t_end"


def test_defaults_per_kind():
    cc = default_scenario("channel_contact")
    assert cc.params.eps_k_tau == pytest.approx(0.1)
    assert (cc.geometry.length, cc.geometry.height) == (4.0, 1.0)
    tr = default_scenario("two_reservoir")
    assert tr.params.k_tau == 1.0 and tr.geometry.gap == 1.0


def test_comments_and_whitespace(tmp_path):
    p = tmp_path / "s.cfg"
    p.write_text("# scenario\nkind = two_reservoir   # trailing\n\n[mesh]\n  cells_per_unit = 4\n"
                 "[layer]\nk_tau = 0.5\n", encoding="utf-8")
    s = parse_config(p)
    assert s.geometry.cells_per_unit == 4 and s.params.k_tau == 0.5


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "nope.cfg")


@given(st.sampled_from(["fluid.mu", "fluid.rho", "layer.epsilon", "layer.k_n", "time.dt"]),
       st.floats(-10.0, 0.0))
@settings(max_examples=30)
def test_nonpositive_values_rejected(key, value):
    sec, k = key.split(".")
    with pytest.raises(ConfigError) as info:
        parse_text(f"kind = two_reservoir\n[{sec}]\n{k} = {value!r}\n")
    assert info.value.key == key


def _write(tmp_path, text):
    p = tmp_path / "s.cfg"
    p.write_text(text, encoding="utf-8")
    return p


SHORT_RESERVOIR = "kind = two_reservoir\n[mesh]\ncells_per_unit = 4\n[time]\nt_end = 0.5\ndt = 0.1\n[output]\nevery = 2\n"
SHORT_CHANNEL = ("kind = channel_contact\n[mesh]\nnx = 16\nny = 4\n[time]\nt_end = 0.2\ndt = 0.02\n"
                 "[output]\nevery = 5\n")


def test_run_two_reservoir(tmp_path):
    code = cli.main(["run", "--config", str(_write(tmp_path, SHORT_RESERVOIR)), "--out", str(tmp_path / "o")])
    assert code == 0
    header, rows = read_csv(tmp_path / "o" / "series.csv")
    assert header == ["t", "flux_res1", "flux_res2", "max_Pl"]
    assert rows.shape == (5, 4)
    assert np.all(rows[:, 1] > 0) and np.all(rows[:, 2] < 0)
    assert sorted(p.name for p in (tmp_path / "o").glob("*.vtk")) == [
        "layer_00000.vtk", "layer_00002.vtk", "layer_00004.vtk",
        "snapshot_00000.vtk", "snapshot_00002.vtk", "snapshot_00004.vtk"]
    text = (tmp_path / "o" / "snapshot_00002.vtk").read_text()
    assert "DATASET UNSTRUCTURED_GRID" in text and "VECTORS velocity double" in text
    assert "SCALARS pressure double 1" in text
    cell_types = text.split("CELL_TYPES")[1].split("POINT_DATA")[0].split()[1:]
    assert set(cell_types) == {"5"}
    assert "SCALARS porous_pressure" in (tmp_path / "o" / "layer_00002.vtk").read_text()


def test_run_channel_contact(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(_write(tmp_path, SHORT_CHANNEL)), "--out", str(out)]) == 0
    header, rows = read_csv(out / "series.csv")
    assert header == ["t", "min_gap", "contact_length", "flux_total"]
    assert rows.shape == (10, 4)
    assert np.allclose(rows[:, 0], 0.02 * np.arange(1, 11))
    assert "VECTORS displacement double" in (out / "snapshot_00005.vtk").read_text()


def test_csv_has_17_digits(tmp_path):
    cli.main(["run", "--config", str(_write(tmp_path, SHORT_RESERVOIR)), "--out", str(tmp_path / "o")])
    line = (tmp_path / "o" / "series.csv").read_text().splitlines()[1]
    assert line.split(",")[0] == "0.10000000000000001"


def test_run_is_reproducible(tmp_path):
    cfg = _write(tmp_path, SHORT_CHANNEL)
    for d in ("a", "b"):
        cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / d)])
    assert (tmp_path / "a" / "series.csv").read_bytes() == (tmp_path / "b" / "series.csv").read_bytes()


def test_failed_step_writes_no_row(tmp_path):
    cfg = _write(tmp_path, SHORT_CHANNEL.replace("[time]", "[contact]\nmax_iter = 1\n[time]")
                 .replace("t_end = 0.2", "t_end = 2.0").replace("[load]", "")
                 + "[load]\ntimes = 0\nvalues = 40\n")
    out = tmp_path / "o"
    code = cli.main(["run", "--config", str(cfg), "--out", str(out)])
    assert code == 1
    header, rows = read_csv(out / "series.csv")
    assert 0 < len(rows) < 100
    assert np.all(np.diff(rows[:, 0]) > 0)


def test_config_error_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, "kind = two_reservoir\n[time]\ndt = -0.1\n")
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "time.dt" in capsys.readouterr().err


def test_verify_command(tmp_path, capsys):
    assert cli.main(["verify", "--suite", "mms", "--out", str(tmp_path)]) == 0
    assert "surface Darcy MMS" in capsys.readouterr().out
    assert (tmp_path / "verify_surface_darcy_mms.csv").exists()


def test_verify_scenario(tmp_path, capsys):
    cfg = _write(tmp_path, "kind = verify\nsuite = all\n")
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    for name in ("surface Darcy MMS", "Poiseuille channel", "slip channel"):
        assert name in out


@pytest.mark.parametrize("scenario,n_tri", [("two_reservoir", 1024), ("channel_contact", 640)])
def test_mesh_command(tmp_path, scenario, n_tri):
    out = tmp_path / "m.seep"
    assert cli.main(["mesh", "--scenario", scenario, "--out", str(out)]) == 0
    assert read_mesh(out).n_triangles == n_tri
