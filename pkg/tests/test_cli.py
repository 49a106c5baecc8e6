from __future__ import annotations

import json

import numpy as np
import pytest

from hjsys.cli import main
from hjsys.io import read_field_binary, read_rows_csv


def _report(path):
    return json.loads((path / "report.json").read_text())


def _write(tmp_path, data, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


WELLS = {
    "name": "wells",
    "m": 2,
    "hamiltonians": [{"kind": "eikonal", "f": "1 - cos(2*pi*x)"}, {"kind": "eikonal", "f": "1 - cos(2*pi*x)"}],
    "coupling": [[1, -1], [-1, 1]],
    "u0": ["0.2*sin(2*pi*x)", "0"],
    "run": {"grid": 64, "horizon": 2.0, "sample_every": 0.5},
}


class TestGallery:
    def test_ex49(self, tmp_path, capsys):
        out = tmp_path / "ex49"
        assert main(["gallery", "ex49", "--out", str(out), "--no-figures"]) == 0
        rep = _report(out)
        assert rep["exit_status"] == 0 and not rep["failed_assertions"]
        np.testing.assert_allclose(rep["ergodic"]["c_estimate"], [-2, -2], atol=1e-3)
        assert abs(rep["ergodic"]["corrector_difference"][0] + 1) <= 1e-3
        assert len(read_rows_csv(out / "series" / "ergodic_trace.csv")) == 13
        assert read_field_binary(out / "fields" / "corrector").m == 2
        assert "ok" in capsys.readouterr().out

    def test_reports_bit_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["gallery", "ex49", "--out", str(a), "--no-figures"])
        main(["gallery", "ex49", "--out", str(b), "--no-figures"])
        assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
        assert (a / "fields" / "corrector.bin").read_bytes() == (b / "fields" / "corrector.bin").read_bytes()

    def test_env_overrides_out(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HJSYS_OUT", str(tmp_path / "env"))
        assert main(["gallery", "ex49", "--out", str(tmp_path / "flag"), "--no-figures"]) == 0
        assert (tmp_path / "env" / "report.json").exists()
        assert not (tmp_path / "flag").exists()

    def test_figures_written(self, tmp_path):
        assert main(["gallery", "ex49", "--out", str(tmp_path)]) == 0
        assert list((tmp_path / "figures").glob("*.png"))

    def test_unknown_name(self):
        with pytest.raises(SystemExit):
            main(["gallery", "nope"])


class TestCommands:
    def test_analyze_coupling(self, tmp_path):
        data = dict(WELLS, coupling=[[1, -1, 0], [0, 1, -1], [-1, 0, 1]], m=3,
                    hamiltonians=WELLS["hamiltonians"] + WELLS["hamiltonians"][:1], u0=["0"] * 3)
        out = tmp_path / "o"
        assert main(["analyze-coupling", "--scenario", _write(tmp_path, data), "--out", str(out), "--no-figures"]) == 0
        text = json.dumps(_report(out))
        assert "0.333333" in text and "1.5" in text

    def test_evolve(self, tmp_path):
        out = tmp_path / "o"
        status = main(["evolve", "--scenario", _write(tmp_path, WELLS), "--out", str(out), "--no-figures",
                       "--horizon", "1.0", "--grid", "32"])
        assert status == 0
        rep = _report(out)
        assert rep["scenario"]["run"]["grid"] == 32 and rep["scenario"]["run"]["horizon"] == 1.0
        fld = read_field_binary(out / "fields" / "final")
        assert fld.grid.n == 32 and fld.t == pytest.approx(1.0)

    def test_failed_expectation_exits_one(self, tmp_path):
        data = json.loads(json.dumps(WELLS))
        data["run"].update({"command": "ergodic", "levels": 6, "expect": {"c": [5, 5], "c_tol": 1e-3}})
        out = tmp_path / "o"
        assert main(["ergodic", "--scenario", _write(tmp_path, data), "--out", str(out), "--no-figures"]) == 1
        assert "c_estimate" in _report(out)["failed_assertions"]

    def test_module_error_exits_two(self, tmp_path):
        out = tmp_path / "o"
        data = json.loads(json.dumps(WELLS))
        data["run"]["window"] = 5.0
        assert main(["longtime", "--scenario", _write(tmp_path, data), "--out", str(out), "--no-figures"]) == 2
        assert _report(out)["error"]["type"] == "InsufficientHorizon"

    def test_bad_scenario_exits_two(self, tmp_path, capsys):
        data = dict(WELLS, coupling=[[1, -1]])
        assert main(["evolve", "--scenario", _write(tmp_path, data), "--out", str(tmp_path / "o")]) == 2
        assert "SchemaError" in capsys.readouterr().err
        assert main(["evolve", "--scenario", str(tmp_path / "missing.json")]) == 2

    def test_control(self, tmp_path):
        data = {
            "name": "markov", "m": 2, "gamma": [[0, 1], [1, 0]], "sigma": [0, 0], "f": [0, 1],
            "u0": ["0", "0"], "paths": 4000, "x0": [0.5], "i0": 0,
            "run": {"command": "control", "grid": 16, "horizon": 1, "dt": 1e-3,
                    "expect": {"mc_reference": 0.2838416, "dp_tol": 2e-2}},
        }
        out = tmp_path / "o"
        status = main(["control", "--scenario", _write(tmp_path, data), "--out", str(out), "--no-figures",
                       "--seed", "4", "--threads", "1"])
        rep = _report(out)
        assert status == 0, rep["failed_assertions"]
        assert rep["scenario"]["run"]["seed"] == 4
