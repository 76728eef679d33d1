import csv
import json
import math

import pytest

from chemotax.cli import fmt, run
from chemotax.config import ConfigError, parse_config

MINIMAL = "D1 = 1\nD2 = 1\nchi = 4\nubar = 1\nbeta = 1\nL = 3.141592653589793\nN = 64\n"


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# base case\n" + MINIMAL)
    return p


def _rows(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def test_minimal_file_gets_defaults(cfg_file):
    cfg = parse_config(cfg_file)
    assert cfg.params.chi == 4.0 and cfg.grid_n == 64
    assert cfg["k"] == 1 and cfg["scheme"] == "SemiImplicit"


def test_flag_overrides_file(cfg_file):
    assert parse_config(cfg_file, {"chi": "5"}).params.chi == 5.0


@pytest.mark.parametrize(
    "text, key",
    [("D1 = -1", "D1"), ("N = ten", "N"), ("chi = nan", "chi"), ("kinetics = custom", "kinetics")],
)
def test_bad_values_name_the_key(tmp_path, text, key):
    p = tmp_path / "bad.cfg"
    p.write_text(MINIMAL.replace("D1 = 1\n", "") + ("D1 = 1\n" if key != "D1" else "") + text + "\n")
    with pytest.raises(ConfigError, match=key):
        parse_config(p)


def test_unknown_and_missing_keys(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text(MINIMAL + "colour = red\n")
    with pytest.raises(ConfigError, match="colour"):
        parse_config(p)
    p.write_text(MINIMAL.replace("N = 64\n", ""))
    with pytest.raises(ConfigError, match="N"):
        parse_config(p)
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "missing.cfg")


def test_exit_codes(tmp_path, cfg_file, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(MINIMAL.replace("D1 = 1", "D1 = -1"))
    assert run(["analyze", "--config", str(bad)]) == 2
    assert "D1" in capsys.readouterr().err
    assert run(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err
    assert run([]) == 2


def test_analyze_csv(tmp_path):
    assert run(["analyze", "--kmax", "10", "--out", str(tmp_path)]) == 0
    path = tmp_path / "analyze.csv"
    text = path.read_text()
    assert text.startswith("# config source: flags")
    assert "# kmax = 10" in text
    rows = _rows(path)
    assert len(rows) == 10
    assert float(rows[0]["chi_k"]) == 4.0 and float(rows[1]["chi_k"]) == 6.25


def test_env_var_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("CHEMOTAX_OUT", str(tmp_path / "env"))
    assert run(["analyze", "--kmax", "2"]) == 0
    assert (tmp_path / "env" / "analyze.csv").exists()


def test_continue_writes_json_and_csv(tmp_path):
    args = ["continue", "--k", "1", "--chi-max", "20", "--N", "80", "--snapshots", "6", "--out", str(tmp_path)]
    assert run(args) == 0
    doc = json.loads((tmp_path / "branch.json").read_text())
    assert doc["terminated_by"] == "ChiLimit"
    rows = _rows(tmp_path / "branch.csv")
    assert list(rows[0]) == ["s", "chi", "amplitude", "u0", "uL", "min_u", "max_u", "mass"]
    assert float(rows[-1]["chi"]) >= 20.0
    assert len(doc["points"]) == len(rows)
    snap = _rows(tmp_path / "state_chi_6.csv")
    assert len(snap) == 81 and float(snap[0]["x"]) == 0.0


def test_outputs_are_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run(["simulate", "--N", "40", "--t-final", "0.5", "--dt", "0.01", "--eps", "1e-3",
                    "--seed", "3", "--out", str(tmp_path / name)]) == 0
    a, b = ((tmp_path / n / "timeseries.csv").read_text().splitlines() for n in "ab")
    # only the recorded output directory differs
    assert [ln for ln in a if not ln.startswith("# out =")] == [ln for ln in b if not ln.startswith("# out =")]
    rows = _rows(tmp_path / "a" / "timeseries.csv")
    assert list(rows[0]) == ["t", "norm_u", "norm_v", "min_u", "u0"]


def test_simulate_probe_warns_on_tiny_s(tmp_path, caplog):
    args = ["simulate", "--N", "40", "--t-final", "1", "--dt", "0.01", "--s0", "1e-4", "--out", str(tmp_path)]
    assert run(args) == 0
    assert "below rate_tol" in caplog.text
    doc = json.loads((tmp_path / "simulate.json").read_text())
    assert "verdict" in doc


def test_pitchfork_outputs(tmp_path):
    assert run(["pitchfork", "--out", str(tmp_path), "--chart-points", "5"]) == 0
    doc = json.loads((tmp_path / "pitchfork.json").read_text())
    assert doc["record"]["k3_fourier"] == pytest.approx(8.0)
    rows = _rows(tmp_path / "pitchfork_chart.csv")
    assert len(rows) == 25 and set(rows[0]) == {"D1", "D2", "k3", "region_case", "stability"}


def test_sweep_outputs_and_abort(tmp_path):
    assert run(["sweep", "--N", "80", "--chi-max", "20", "--sweep-points", "4", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "sweep.csv")
    assert len(rows) == 4 and rows[0]["step_flag"] == "false"
    args = ["sweep", "--D1", "0.05", "--N", "200", "--ds-max", "0.05", "--chi-max", "20",
            "--sweep-points", "4", "--out", str(tmp_path / "abort")]
    assert run(args) == 1
    assert "completed = false" in (tmp_path / "abort" / "sweep.csv").read_text()


def test_selftest_table(capsys):
    assert run(["selftest", "--N", "64"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5 and "5/5 checks passed" in out


def test_float_format_round_trips():
    x = math.pi / 7
    assert float(fmt(x)) == x
    assert fmt(True) == "true" and fmt(3) == "3"
