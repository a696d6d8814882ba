import json
import os

import numpy as np
import pytest

from poc import baselines as bl
from poc import harness as H
from poc import policy as pol

TINY = dict(n_vars=6, n_cons=4, horizon=25, seed=11,
            n_train=1, n_val=1, n_test=2, n_changes=1)


def tiny_config(**kw):
    ppo = pol.PpoConfig(hidden=(8,), max_epochs=2, update_every=1,
                        grad_steps=1)
    base = dict(TINY, methods=("ADWIN5", "CARA-P"), ppo=ppo)
    base.update(kw)
    return H.ExperimentConfig(**base)


@pytest.fixture(scope="module")
def tiny_contexts():
    return H.build_contexts(tiny_config(), n_workers=1)


class TestConfig:
    def test_hash_stable_and_seed_sensitive(self):
        a = H.config_hash(tiny_config())
        b = H.config_hash(tiny_config())
        c = H.config_hash(tiny_config(seed=12))
        assert a == b and a != c
        assert len(a) == 16

    def test_validation_rejects_empty_split(self):
        with pytest.raises(ValueError):
            tiny_config(n_train=0).validate()

    def test_validation_rejects_no_methods(self):
        with pytest.raises(ValueError):
            tiny_config(methods=()).validate()

    def test_poc_label_variants(self):
        from poc.cpd import SelectionScheme
        assert tiny_config().poc_label() == "POC"
        cfg = tiny_config(scheme=SelectionScheme(scheme="EMA"))
        assert cfg.poc_label() == "POC-EMA"
        cfg = tiny_config()
        cfg.ppo = pol.PpoConfig(mask_sample_size=True)
        assert cfg.poc_label() == "POC-nosize"

    def test_thread_budget_env(self, monkeypatch):
        monkeypatch.setenv("POC_THREADS", "3")
        assert H.thread_budget() == 3
        monkeypatch.setenv("POC_THREADS", "zero")
        with pytest.warns(UserWarning):
            assert H.thread_budget() >= 1


class TestBuildContexts:
    def test_split_sizes(self, tiny_contexts):
        train, val, test = tiny_contexts
        assert (len(train), len(val), len(test)) == (1, 1, 2)

    def test_contexts_are_warm(self, tiny_contexts):
        _, _, test = tiny_contexts
        assert test[0]._default is not None
        assert len(test[0]._clair) == test[0].horizon

    def test_disk_cache_round_trip(self, tmp_path):
        cfg = tiny_config(seed=21)
        first = H.build_contexts(cfg, n_workers=1, cache_dir=str(tmp_path))
        files = list(tmp_path.glob("ctx_*.pkl"))
        assert len(files) == 4
        second = H.build_contexts(cfg, n_workers=1, cache_dir=str(tmp_path))
        for a, b in zip(first[2], second[2]):
            np.testing.assert_allclose(a.resolve_at(5).outcome.x,
                                       b.resolve_at(5).outcome.x)
            np.testing.assert_allclose(a.dynamic.objectives,
                                       b.dynamic.objectives)


class TestRunExperiment:
    def test_deterministic_reports(self, tiny_contexts):
        cfg = tiny_config()
        r1 = H.run_experiment(cfg, contexts=tiny_contexts)
        r2 = H.run_experiment(cfg, contexts=tiny_contexts)
        assert r1.rows == r2.rows
        assert r1.summary == r2.summary
        assert r1.tuned == r2.tuned

    def test_rows_match_direct_runs(self, tiny_contexts):
        cfg = tiny_config(methods=("CARA-P",))
        report = H.run_experiment(cfg, contexts=tiny_contexts)
        period = report.tuned["CARA-P"]
        _, _, test = tiny_contexts
        for row, ctx in zip(report.rows, test):
            log = bl.run_cara_p(ctx, period, cfg.resolve_cost)
            assert row["cl"] == pytest.approx(log.cumulative_loss)
            assert row["n_resolves"] == log.n_resolves
            assert row["lb_wocp"] >= -1e-9

    def test_unknown_method_wrapped(self, tiny_contexts):
        cfg = tiny_config(methods=("MYSTERY",))
        with pytest.raises(RuntimeError, match="MYSTERY"):
            H.run_experiment(cfg, contexts=tiny_contexts)

    def test_poc_timelines(self, tiny_contexts):
        cfg = tiny_config(methods=("POC",))
        report = H.run_experiment(cfg, contexts=tiny_contexts)
        assert set(report.timelines) == {0, 1}
        for inst_id, series in report.timelines.items():
            assert len(series) == cfg.horizon
            n_res = sum(r for _, _, r in series)
            row = [r for r in report.rows if r["instance_id"] == inst_id][0]
            assert n_res == row["n_resolves"]
        assert "cost_balance_ratio" in report.summary


class TestReportIo:
    def test_write_and_read_round_trip(self, tiny_contexts, tmp_path):
        cfg = tiny_config()
        report = H.run_experiment(cfg, contexts=tiny_contexts)
        path = H.write_report(report, str(tmp_path))
        rows = H.read_report_csv(path)
        assert len(rows) == len(report.rows)
        for got, want in zip(rows, report.rows):
            assert got["method"] == want["method"]
            assert got["cl"] == pytest.approx(want["cl"])
            assert got["n_resolves"] == want["n_resolves"]
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["config_hash"] == report.config_hash
        assert "CARA-P" in summary["tuned"]

    def test_identical_bytes_across_runs(self, tiny_contexts, tmp_path):
        cfg = tiny_config()
        paths = []
        for name in ("a", "b"):
            report = H.run_experiment(cfg, contexts=tiny_contexts)
            paths.append(H.write_report(report, str(tmp_path / name)))
        assert open(paths[0], "rb").read() == open(paths[1], "rb").read()


class TestSweep:
    def test_cost_grid_sweep(self, tiny_contexts):
        cfg = tiny_config(methods=("POC", "CARA-P"))
        result = H.sweep_cost(cfg, [2.0, 20.0])
        assert result.robustness.shape == (2, 2)
        assert [r.summary["C"] for r in result.reports] == [2.0, 20.0]
        assert np.all(np.isfinite(result.robustness))

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            H.sweep_cost(tiny_config(), [])
