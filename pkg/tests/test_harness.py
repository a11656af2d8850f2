"""Monte Carlo runner: per-replication metrics, aggregation, config and reports."""

import csv
import json
import math

import numpy as np
import pytest

from twostep import harness
from twostep.data import SimulationScenario, derive_seed, generate
from twostep.harness import (REPORT_COLUMNS, ConfigError, ExperimentConfig, ReplicationError, config_from_dict,
                             SecondStepOptions, load_config, report_to_dict, run, run_replication, summarize,
                             write_report)
from twostep.refit import BasisSpec, fit_sieve


def _small(estimators=("GL", "GL-SL", "GL-PL", "ORACLE"), replications=3, **kw):
    sc = SimulationScenario("model1", n=120, d=12, seed=kw.pop("seed", 5))
    return ExperimentConfig(sc, replications=replications, estimators=estimators, **kw)


@pytest.fixture(scope="module")
def small_report():
    return run(_small(("GL", "GL-SL", "GL-PL", "ORACLE", "ADAPTIVE")))


class TestReplication:
    def test_noiseless_oracle(self):
        # 15 interior knots: the 7-knot default has an approximation floor of about 4e-3 on model 1
        sc = SimulationScenario("model1", n=400, d=10, noise_sd=0.0, seed=1)
        rep = run(ExperimentConfig(sc, replications=1, estimators=("ORACLE",),
                                   second_step=SecondStepOptions(n_interior=15)))
        assert rep.summary("ORACLE").emse_mean <= 1e-3
        assert rep.summary("ORACLE").fp_mean == 0 and rep.summary("ORACLE").fn_mean == 0

    def test_noiseless_oracle_reaches_basis_floor(self):
        sc = SimulationScenario("model1", n=400, d=10, noise_sd=0.0, seed=1)
        rep = run(ExperimentConfig(sc, replications=1, estimators=("ORACLE",)))
        ds, truth = generate(SimulationScenario("model1", 400, 10, 0.0, 0.0, derive_seed(1, 0)))
        floor = np.mean((fit_sieve(ds, truth.active_set, BasisSpec()).fitted - truth.mu) ** 2)
        assert rep.summary("ORACLE").emse_mean <= floor * (1 + 1e-3)

    def test_nv_identity(self, small_report):
        for row in small_report.per_replication:
            for nv, fp, fn, _ in row["metrics"].values():
                assert nv == fp + 4 - fn

    def test_second_steps_share_selection(self, small_report):
        for row in small_report.per_replication:
            m = row["metrics"]
            assert m["GL"][:3] == m["GL-SL"][:3] == m["GL-PL"][:3]

    def test_replication_is_reproducible(self):
        cfg = _small(("GL",))
        a, b = run_replication(cfg, 2), run_replication(cfg, 2)
        assert a.seed == b.seed and a.metrics == b.metrics

    def test_out_of_sample_flag(self):
        rep = run(_small(("ORACLE",), replications=2, test_size=200))
        assert set(rep.test_emse) == {"ORACLE"}
        assert rep.test_emse["ORACLE"]["mean"] > 0


class TestAggregation:
    def test_summary_statistics(self):
        recs = [(5, 1, 0, 0.5), (4, 0, 0, 1.5), (6, 2, 0, 1.0)]
        s = summarize("X", recs)
        assert (s.nv_mean, s.fp_mean, s.emse_mean) == (5.0, 1.0, 1.0)
        assert s.nv_sd == pytest.approx(1.0) and s.emse_sd == pytest.approx(0.5)
        assert math.isnan(summarize("X", recs[:1]).nv_sd)

    def test_matches_per_replication(self, small_report):
        for s in small_report.summaries:
            vals = [row["metrics"][s.estimator][3] for row in small_report.per_replication]
            assert s.emse_mean == pytest.approx(np.mean(vals), rel=1e-15)

    def test_workers_do_not_change_report(self):
        a = run(_small(("GL", "GL-PL"), workers=1))
        b = run(_small(("GL", "GL-PL"), workers=2))
        assert [s.row() for s in a.summaries] == [s.row() for s in b.summaries]
        assert a.per_replication == b.per_replication

    def test_mgb_candidates(self):
        rep = run(_small(("GL", "MGB-GRID"), replications=2))
        assert len(rep.mgb_candidates) == 16
        best = min(rep.mgb_candidates, key=lambda s: s.emse_mean)
        assert rep.ideal_mgb == best.estimator
        assert rep.summary("MGB-GRID").row()[1:] == best.row()[1:]

    def test_fail_fast(self, monkeypatch):
        real = harness.run_replication

        def flaky(config, index):
            if index == 1:
                raise FloatingPointError("boom")
            return real(config, index)

        monkeypatch.setattr(harness, "run_replication", flaky)
        with pytest.raises(ReplicationError, match="replication 1 .*boom"):
            run(_small(("GL",)))
        rep = run(_small(("GL",), fail_tolerant=True))
        assert [f["replication"] for f in rep.failures] == [1]
        assert rep.failures[0]["seed"] == harness.derive_seed(5, 1)
        assert [r["replication"] for r in rep.per_replication] == [0, 2]


class TestConfig:
    def test_round_trip(self):
        cfg = _small(("GL", "MGB-GRID"), replications=7, workers=2)
        assert config_from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg

    def test_defaults(self):
        cfg = config_from_dict({"scenario": {"model_id": "model2", "n": 100, "d": 20}})
        assert cfg.replications == 100
        assert cfg.estimators == ("GL", "GL-SL", "GL-PL", "ORACLE")

    @pytest.mark.parametrize("payload,key", [
        ({}, "scenario"),
        ({"scenario": {}, "bogus": 1}, "bogus"),
        ({"scenario": {"n": "many"}}, "scenario.n"),
        ({"scenario": {"model_id": "model9"}}, "scenario"),
        ({"scenario": {}, "replications": 0}, "replications"),
        ({"scenario": {}, "estimators": ["GL", "LASSO"]}, "estimators"),
        ({"scenario": {}, "second_step": {"placement": "random"}}, "second_step.placement"),
        ({"scenario": {}, "first_step": {"knots": 3}}, "first_step.knots"),
        ({"scenario": {}, "version": "2"}, "version"),
        ({"scenario": {}, "fail_tolerant": 1}, "fail_tolerant"),
    ])
    def test_errors_name_key(self, payload, key):
        with pytest.raises(ConfigError, match=f"^{key}"):
            config_from_dict(payload)

    def test_bad_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(p)
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")


class TestReports:
    def test_csv_contract(self, small_report, tmp_path):
        p = tmp_path / "r.csv"
        write_report(small_report, p, "csv")
        lines = p.read_text().splitlines()
        assert lines[0] == "estimator,nv_mean,nv_sd,fp_mean,fp_sd,fn_mean,fn_sd,emse_mean,emse_sd"
        rows = list(csv.reader(lines))
        assert all(len(r) == 9 for r in rows)
        assert [r[0] for r in rows[1:]] == [s.estimator for s in small_report.summaries]
        assert tuple(rows[0]) == REPORT_COLUMNS

    def test_csv_full_precision(self, small_report, tmp_path):
        p = tmp_path / "r.csv"
        write_report(small_report, p, "csv")
        row = list(csv.reader(p.read_text().splitlines()))[1]
        assert float(row[7]) == small_report.summaries[0].emse_mean

    def test_json_round_trip(self, small_report, tmp_path):
        p = tmp_path / "r.json"
        write_report(small_report, p, "json")
        back = json.loads(p.read_text())
        assert back == json.loads(json.dumps(report_to_dict(small_report)))
        for got, s in zip(back["estimators"], small_report.summaries):
            assert got["emse_mean"] == s.emse_mean and got["nv_sd"] == s.nv_sd

    def test_bad_format_and_path(self, small_report, tmp_path):
        with pytest.raises(ValueError):
            write_report(small_report, tmp_path / "r.txt", "xml")
        with pytest.raises(OSError):
            write_report(small_report, tmp_path / "no" / "such" / "r.csv")
