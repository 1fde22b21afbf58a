import json
import os
from pathlib import Path

import numpy as np
import pytest

from modeplan.bench import (
    BenchConfig,
    BenchReport,
    RunRecord,
    compute_aggregates,
    run_benchmark,
)
from modeplan.cli import cli_dispatch
from modeplan.filtering import FilterConfig
from modeplan.refine import RefinerConfig
from modeplan.scenarios import ScenarioConfig, preset


@pytest.fixture
def tiny_scenario():
    """Cut-down head-on swap so bench runs stay fast in unit tests."""
    return ScenarioConfig(kind="head_on", horizon=40, dt=0.1)


class TestBenchReport:
    def _records(self):
        return [
            RunRecord("pipeline", 0, 2, 2, True,
                      {"filter_s": 0.2, "cluster_s": 0.1, "refine_s": 0.7, "total_s": 1.0}),
            RunRecord("pipeline", 1, 2, 2, True,
                      {"filter_s": 0.3, "cluster_s": 0.1, "refine_s": 0.6, "total_s": 1.0}),
            RunRecord("baseline", 0, 5, 2, True, {"total_s": 2.0}),
            RunRecord("baseline", 1, 7, 2, True, {"total_s": 3.0}),
        ]

    def test_aggregates_from_records(self):
        agg = compute_aggregates(self._records())
        assert agg["pipeline_invocations"]["mean"] == 2.0
        assert agg["baseline_invocations"]["mean"] == 6.0
        assert agg["filter_fraction_median"] == pytest.approx(0.25)
        assert agg["invocation_histogram_baseline"]["bins"] == [5, 6, 7]
        assert agg["invocation_histogram_baseline"]["counts"] == [1, 0, 1]

    def test_save_load_checks_integrity(self, tmp_path):
        records = self._records()
        report = BenchReport(
            scenario=preset("head_on"),
            records=records,
            aggregates=compute_aggregates(records),
            config_snapshot={"runs": 2},
        )
        path = tmp_path / "report.json"
        report.save(path)
        loaded = BenchReport.load(path)
        assert len(loaded.records) == 4
        assert loaded.aggregates["pipeline_invocations"]["mean"] == 2.0

        doc = json.loads(path.read_text())
        doc["aggregates"]["pipeline_invocations"]["mean"] = 99.0
        tampered = tmp_path / "tampered.json"
        tampered.write_text(json.dumps(doc))
        from modeplan import ConfigurationError

        with pytest.raises(ConfigurationError):
            BenchReport.load(tampered)

    def test_time_histogram_half_second_bins(self):
        records = [
            RunRecord("pipeline", s, 2, 2, True, {"total_s": v})
            for s, v in enumerate((0.2, 0.7, 1.4))
        ]
        agg = compute_aggregates(records)
        hist = agg["time_histogram_pipeline"]
        assert hist["edges"] == [0.0, 0.5, 1.0, 1.5]
        assert hist["counts"] == [1, 1, 1]


class TestRunBenchmark:
    def test_single_run_unimodal_comparison(self, tiny_scenario):
        cfg = BenchConfig(
            runs=1,
            target_modes=2,
            baseline_budget=10,
            filter_cfg=FilterConfig(particles=30),
            refiner_cfg=RefinerConfig(outer_iterations=10, inner_iterations=60),
        )
        report = run_benchmark(tiny_scenario, cfg)
        assert len(report.records) == 2
        by_method = {r.method: r for r in report.records}
        assert by_method["pipeline"].invocations == by_method["pipeline"].modes_found
        assert by_method["baseline"].seed == 0
        assert report.aggregates["run_failures"] == 0

    def test_records_reproducible_across_calls(self, tiny_scenario):
        cfg = BenchConfig(runs=1, target_modes=2, baseline_budget=6,
                          filter_cfg=FilterConfig(particles=20),
                          refiner_cfg=RefinerConfig(outer_iterations=8,
                                                    inner_iterations=50))
        r1 = run_benchmark(tiny_scenario, cfg)
        r2 = run_benchmark(tiny_scenario, cfg)
        for a, b in zip(r1.records, r2.records):
            assert (a.method, a.seed, a.invocations, a.modes_found, a.success) == \
                (b.method, b.seed, b.invocations, b.modes_found, b.success)


class TestCli:
    def test_no_arguments_is_usage_error(self, capsys):
        rc = cli_dispatch([])
        assert rc != 0

    def test_unknown_scenario_fails(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MODEPLAN_OUT_DIR", str(tmp_path))
        rc = cli_dispatch(["solve", "not_a_scenario"])
        assert rc == 2

    def test_solve_writes_modes(self, tmp_path):
        out = tmp_path / "out.json"
        rc = cli_dispatch([
            "solve", "head_on", "--seed", "7", "--particles", "50",
            "--out", str(out),
        ])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert len(doc["modes"]) == 2
        assert doc["seed"] == 7

    def test_verify_accepts_good_file_and_rejects_tampered(self, tmp_path):
        out = tmp_path / "modes.json"
        assert cli_dispatch(["solve", "head_on", "--seed", "7", "--out", str(out)]) == 0
        assert cli_dispatch(["verify", str(out), "--samples", "40"]) == 0

        doc = json.loads(out.read_text())
        for row in doc["modes"][0]["trajectory"]["controls"][20:30]:
            row[1] += 0.2
        # keep the stored violation honest so the precondition still holds
        tampered = tmp_path / "tampered.json"
        tampered.write_text(json.dumps(doc))
        rc = cli_dispatch(["verify", str(tampered), "--samples", "40"])
        assert rc == 1

    def test_export_round_trip_bytes(self, tmp_path):
        out = tmp_path / "modes.json"
        assert cli_dispatch(["solve", "head_on", "--seed", "7", "--out", str(out)]) == 0
        assert cli_dispatch(["export", str(out), "--out-dir", str(tmp_path)]) == 0
        csv_path = tmp_path / "modes_modes.csv"
        first = csv_path.read_bytes()
        assert cli_dispatch(["export", str(out), "--out-dir", str(tmp_path)]) == 0
        assert csv_path.read_bytes() == first

    def test_scenario_overrides(self, tmp_path):
        out = tmp_path / "o.json"
        rc = cli_dispatch([
            "solve", "head_on", "--tau", "40", "--seed", "1", "--out", str(out),
        ])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["scenario"]["horizon"] == 40
        assert len(doc["modes"][0]["trajectory"]["states"]) == 41

    def test_env_var_sets_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MODEPLAN_OUT_DIR", str(tmp_path))
        rc = cli_dispatch(["solve", "head_on", "--seed", "7"])
        assert rc == 0
        assert (tmp_path / "head_on_modes.json").exists()
