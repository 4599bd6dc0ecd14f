import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from leakywave.bie import MAGIC, load_matrix
from leakywave.cli import DEFAULTS, THRESHOLDS, RunConfig, main, square_well_modes
from leakywave.errors import ConfigError

ZERO = {"media": {"l": "zero", "r": "zero"}}


def write_config(tmp_path, data, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def run_cli(tmp_path, command, data, out="out"):
    code = main([command, "--config", str(write_config(tmp_path, data)),
                 "--out", str(tmp_path / out)])
    return code, tmp_path / out


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("bad", [
    {"k": -1.0},
    {"bogus_section": 1},
    {"media": {"l": "qa_left", "x": "zero"}},
    {"media": {"l": "qa_left", "r": "nonexistent"}},
    {"truncation": {"eps": 2.0}},
    {"discretization": {"nodes": 1}},
    {"field_grid": {"x1": [0.0, 1.0]}},
    {"sweep": {"depths": [1.0, 2.0]}},
    {"thresholds": {"made_up": 1.0}},
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_invalid_config_exit_code(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "modes", {"k": "three"})
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_unreadable_config_exit_code(tmp_path):
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert main(["modes", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_targets_under_contour_are_config_errors(tmp_path):
    data = dict(ZERO, contour={"kind": "ramp", "L_pad": 0.5, "slope": 1.0},
                field_grid={"x1": [0.1], "x2": [5.0]})
    code, _ = run_cli(tmp_path, "solve", data)
    assert code == 2


def test_defaults_and_overrides():
    cfg = RunConfig.from_dict({"thresholds": {"null_ratio": 1e-3}, "contour": {"kind": "ramp"}})
    assert cfg.threshold("null_ratio") == 1e-3
    assert cfg.threshold("reciprocity") == THRESHOLDS["reciprocity"]
    assert cfg.raw["contour"] == {"kind": "ramp"}        # replaced whole, not merged
    assert cfg.raw["sweep"]["depths"] == DEFAULTS["sweep"]["depths"]


def test_square_well_oracle_matches_known_roots():
    # height 1, half-width 3, k = 3 is the stepped preset
    roots = square_well_modes(3.0, 1.0, 3.0)
    assert len(roots) == 6
    assert roots[-1] == pytest.approx(4.2164, rel=1e-4)


# --------------------------------------------------------------- reports

def test_modes_report_and_echo(tmp_path, capsys):
    data = {"media": {"l": "qa_left", "r": "qb_right"}}
    code, out = run_cli(tmp_path, "modes", data)
    assert code == 0
    text = (out / "modes.json").read_text()
    rep = json.loads(text)
    assert text == json.dumps(rep, indent=2, sort_keys=True) + "\n"
    assert rep["passed"] and rep["command"] == "modes"
    assert rep["config"] == RunConfig.from_dict(data).raw
    assert set(rep["versions"]) == {"leakywave", "numpy", "scipy", "python"}
    assert rep["acceptance"]["qb_right_dispersion_oracle"]["passed"]
    lines = capsys.readouterr().out.splitlines()
    assert any(line.startswith("pass") and "qa_left_reference" in line for line in lines)


def test_modes_report_reproducible(tmp_path):
    reps = []
    for name in ("a", "b"):
        code, out = run_cli(tmp_path, "modes", {"media": {"l": "qb_right", "r": "qb_right"}},
                            out=name)
        rep = json.loads((out / "modes.json").read_text())
        rep.pop("timings")
        reps.append(rep)
    assert reps[0] == reps[1]


def test_zero_medium_has_empty_table(tmp_path):
    code, out = run_cli(tmp_path, "modes", ZERO)
    rep = json.loads((out / "modes.json").read_text())
    assert code == 0
    assert rep["metrics"]["tables"][0]["frequencies"] == []
    assert rep["acceptance"]["zero_empty"]["passed"]


def test_selftest_writes_csv(tmp_path):
    code, out = run_cli(tmp_path, "green-selftest", ZERO)
    assert code == 0
    with open(out / "green_zero.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x1", "x2", "re_u", "im_u"]
    assert len(rows) == 1 + 81
    vals = np.array(rows[1:], dtype=float)
    assert np.all(np.isfinite(vals))


def test_solve_dumps_matrix_and_grids(tmp_path):
    data = dict(ZERO, truncation={"depth": 3.0},
                solve={"dump_matrix": True},
                field_grid={"x1": [-1.0, 1.0], "x2": [-1.0, 0.0, 2.0]})
    code, out = run_cli(tmp_path, "solve", data)
    assert code == 0
    rep = json.loads((out / "solve.json").read_text())
    n = rep["metrics"]["nodes"]
    raw = (out / "matrix.bin").read_bytes()
    assert raw[:8] == MAGIC and len(raw) == 8 + 16 * (2 * n) ** 2
    M = load_matrix(out / "matrix.bin")
    assert np.array_equal(M, np.eye(2 * n))          # identical media
    for kind in ("total", "scattered", "incoming"):
        with open(out / f"field_{kind}.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["x1", "x2", "re_u", "im_u"] and len(rows) == 7
    assert rep["acceptance"]["null_ratio"]["passed"]


def test_console_script_entry(tmp_path):
    path = write_config(tmp_path, {"k": 0})
    proc = subprocess.run([sys.executable, "-m", "leakywave.cli", "modes", "--config",
                           str(path), "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2
