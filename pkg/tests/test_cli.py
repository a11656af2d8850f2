"""Command-line contract: outputs, model files and exit codes."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from twostep import refit
from twostep.cli import main
from twostep.data import Dataset, SimulationScenario, generate, make_rng, save_csv


def _exit(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


@pytest.fixture(scope="module")
def model1_csv(tmp_path_factory):
    p = tmp_path_factory.mktemp("cli") / "model1.csv"
    ds, _ = generate(SimulationScenario("model1", n=300, d=20, seed=11))
    save_csv(p, ds)
    return p


def _config(tmp_path, estimators=("GL", "GL-SL", "GL-PL", "ORACLE"), replications=5):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"version": "1", "scenario": {"model_id": "model1", "n": 100, "d": 10, "seed": 3},
                             "replications": replications, "estimators": list(estimators)}))
    return p


class TestFit:
    def test_end_to_end(self, model1_csv, tmp_path, capsys):
        out = tmp_path / "m.json"
        assert _exit(["fit", str(model1_csv), "--response", "y", "--method", "gl-pl", "--aic", "--gcv",
                      "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert "active set:" in text and "KKT residual:" in text and "lambda2:" in text
        model = refit.load_model(out)
        assert len(set(model.active_set) & {0, 1, 2, 3}) >= 3
        assert model.flags["converged"] is True

    @pytest.mark.parametrize("method", ["gl", "gl-sl", "adaptive"])
    def test_other_methods(self, model1_csv, tmp_path, method):
        out = tmp_path / "m.json"
        assert _exit(["fit", str(model1_csv), "--response", "y", "--method", method, "--out", str(out)]) == 0
        assert len(set(refit.load_model(out).active_set) & {0, 1, 2, 3}) >= 3

    def test_mgb_needs_level(self, model1_csv, tmp_path):
        out = tmp_path / "m.json"
        assert _exit(["fit", str(model1_csv), "--response", "y", "--method", "mgb", "--out", str(out)]) == 2
        assert _exit(["fit", str(model1_csv), "--response", "y", "--method", "mgb", "--lambda1", "0.05",
                      "--out", str(out)]) == 0
        assert refit.load_model(out).method == "mgb"

    def test_above_lambda_max(self, model1_csv, tmp_path, capsys):
        out = tmp_path / "m.json"
        assert _exit(["fit", str(model1_csv), "--response", "y", "--method", "gl", "--lambda1", "1e9",
                      "--out", str(out)]) == 0
        assert "WARN" in capsys.readouterr().out
        model = refit.load_model(out)
        assert model.active_set == ()
        ds_y = np.loadtxt(model1_csv, delimiter=",", skiprows=1)[:, 0]
        np.testing.assert_allclose(refit.predict(model, np.full((2, 20), 0.5)), ds_y.mean())

    def test_missing_response(self, model1_csv, tmp_path):
        assert _exit(["fit", str(model1_csv), "--out", str(tmp_path / "m.json")]) == 2

    def test_unknown_flag(self, model1_csv, tmp_path):
        assert _exit(["fit", str(model1_csv), "--response", "y", "--out", str(tmp_path / "m.json"),
                      "--colour", "red"]) == 2

    def test_bad_data(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("y,x\n1,0.5\n2,7\n")
        assert _exit(["fit", str(p), "--response", "y", "--out", str(tmp_path / "m.json")]) == 1


class TestPredict:
    def test_matches_library(self, model1_csv, tmp_path, capsys):
        out = tmp_path / "m.json"
        main(["fit", str(model1_csv), "--response", "y", "--method", "gl-pl", "--out", str(out)])
        capsys.readouterr()
        assert _exit(["predict", "--model", str(out), str(model1_csv), "--response", "y"]) == 0
        got = np.array([float(v) for v in capsys.readouterr().out.split()])
        z = np.loadtxt(model1_csv, delimiter=",", skiprows=1)[:, 1:]
        np.testing.assert_array_equal(got, refit.predict(refit.load_model(out), z))

    def test_corrupt_model(self, model1_csv, tmp_path):
        p = tmp_path / "m.json"
        p.write_text("{}")
        assert _exit(["predict", "--model", str(p), str(model1_csv), "--response", "y"]) == 1


class TestSimulate:
    def test_smoke_csv(self, tmp_path, capsys):
        out = tmp_path / "r.csv"
        assert _exit(["simulate", "--config", str(_config(tmp_path)), "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "estimator,nv_mean,nv_sd,fp_mean,fp_sd,fn_mean,fn_sd,emse_mean,emse_sd"
        assert len(lines) == 5 and all(len(line.split(",")) == 9 for line in lines)
        assert "ORACLE" in capsys.readouterr().out

    def test_byte_identical(self, tmp_path):
        cfg = _config(tmp_path)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["simulate", "--config", str(cfg), "--out", str(a)])
        main(["simulate", "--config", str(cfg), "--out", str(b), "--workers", "2"])
        assert a.read_bytes() == b.read_bytes()

    def test_mgb_rows(self, tmp_path):
        out = tmp_path / "r.csv"
        main(["simulate", "--config", str(_config(tmp_path, ("GL", "MGB-GRID"), 2)), "--out", str(out)])
        rows = list(csv.reader(out.read_text().splitlines()))
        assert all(len(r) == 9 for r in rows)
        names = [r[0] for r in rows[1:]]
        assert names[:2] == ["GL", "MGB-GRID"]
        assert len(names) == 2 + 16 and all(n.startswith("MGB(l1=") for n in names[2:])

    def test_json_output(self, tmp_path):
        out = tmp_path / "r.json"
        assert _exit(["simulate", "--config", str(_config(tmp_path, ("GL",), 2)), "--out", str(out)]) == 0
        assert json.loads(out.read_text())["estimators"][0]["estimator"] == "GL"

    def test_config_error(self, tmp_path, capsys):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"scenario": {"n": "four hundred"}}))
        assert _exit(["simulate", "--config", str(p), "--out", str(tmp_path / "r.csv")]) == 2
        assert "scenario.n" in capsys.readouterr().err

    def test_override_error(self, tmp_path):
        assert _exit(["simulate", "--config", str(_config(tmp_path)), "--out", str(tmp_path / "r.csv"),
                      "--replications", "0"]) == 2


class TestDiagnose:
    def _csv(self, tmp_path, n, d, y=None, seed=0):
        rng = make_rng(seed)
        p = tmp_path / f"d{n}.csv"
        save_csv(p, Dataset(rng.standard_normal(n) if y is None else y, rng.random((n, d))))
        return p

    def test_constant_response_lambda_max(self, tmp_path, capsys):
        p = self._csv(tmp_path, 50, 4, y=np.full(50, 3.7))
        assert _exit(["lambda-max", str(p), "--response", "y"]) == 0
        assert float(capsys.readouterr().out) == 0.0

    def test_small_n(self, tmp_path, capsys):
        p = self._csv(tmp_path, 10, 4)
        assert _exit(["diagnose", str(p), "--response", "y"]) == 0
        assert "Omega0 holds: false" in capsys.readouterr().out

    def test_delta(self, tmp_path, capsys):
        p = self._csv(tmp_path, 100, 100)
        assert _exit(["diagnose", str(p), "--response", "y", "--s", "1"]) == 0
        line = [x for x in capsys.readouterr().out.splitlines() if x.startswith("delta(")][0]
        assert round(float(line.split(":")[1]), 4) == 0.2146

    def test_quantities(self, tmp_path, capsys):
        p = self._csv(tmp_path, 80, 5)
        assert _exit(["diagnose", str(p), "--response", "y", "--s", "1,2", "--T", "0,1", "--restarts", "2"]) == 0
        out = capsys.readouterr().out
        for key in ("phi_max(1)", "phi_max(2)", "phi_min([0, 1])", "kappa upper bound", "lambda_max"):
            assert key in out

    def test_budget(self, tmp_path, capsys):
        p = self._csv(tmp_path, 40, 12)
        assert _exit(["diagnose", str(p), "--response", "y", "--s", "6", "--budget", "10"]) == 1
        assert "--randomized" in capsys.readouterr().err
        assert _exit(["diagnose", str(p), "--response", "y", "--s", "6", "--budget", "10", "--randomized"]) == 0
        assert "lower bound" in capsys.readouterr().out

    def test_seed_determinism(self, tmp_path, capsys):
        p = self._csv(tmp_path, 60, 5)
        args = ["diagnose", str(p), "--response", "y", "--T", "0", "--restarts", "2", "--seed", "4"]
        main(args)
        first = capsys.readouterr().out
        main(args)
        assert capsys.readouterr().out == first

    def test_bad_index(self, tmp_path):
        p = self._csv(tmp_path, 40, 4)
        assert _exit(["diagnose", str(p), "--response", "y", "--T", "9"]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "twostep", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("fit", "simulate", "diagnose", "lambda-max", "predict"):
        assert cmd in r.stdout
