"""Tests for trace persistence, experiment specs, and the comparison table."""

import csv
import json

import pytest

from tetris_sched.metrics import build_report
from tetris_sched.sim_engine import ConfigError, SimConfig, run_simulation
from tetris_sched.trace_io import (
    TABLE_COLUMNS,
    TraceSchemaError,
    comparison_rows,
    load_experiment,
    read_trace,
    write_comparison_table,
    write_report,
    write_trace,
)


def _run(policy="tetris", seed=1, k=3, extra=2, steps=12):
    cfg = SimConfig.from_json(
        {
            "batch_size": 4,
            "k": k,
            "extra": extra,
            "seed": seed,
            "policy": policy,
            "pipeline": "parallel",
            "acceptance": {"kind": "mix", "easy": 0.95, "hard": 0.4, "frac": 0.5},
            "target_length": {"kind": "uniform_int", "low": 5, "high": 15},
            "steps": steps,
        }
    )
    return run_simulation(cfg)


class TestTraceRoundTrip:
    def test_outcomes_survive_a_round_trip(self, tmp_path):
        _, outcomes = _run()
        path = tmp_path / "trace.jsonl"
        write_trace(outcomes, path)
        assert read_trace(path) == outcomes

    def test_empty_trace_is_just_a_header(self, tmp_path):
        path = tmp_path / "trace.jsonl"
        write_trace([], path)
        assert path.read_text().count("\n") == 1
        assert read_trace(path) == []

    def test_report_recomputable_from_persisted_trace(self, tmp_path):
        report, outcomes = _run(seed=23)
        trace_path = tmp_path / "trace.jsonl"
        report_path = tmp_path / "report.json"
        write_trace(outcomes, trace_path)
        write_report(report, report_path)
        rebuilt = build_report(
            read_trace(trace_path), policy=report.policy, config=report.config
        )
        assert rebuilt.to_json() == json.loads(report_path.read_text())


class TestTraceSchemaErrors:
    def test_missing_header(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"step": 0}\n')
        with pytest.raises(TraceSchemaError, match="line 1"):
            read_trace(path)

    def test_wrong_version(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"schema": "tetris-sched-trace", "version": 99, "steps": 0}\n')
        with pytest.raises(TraceSchemaError, match="version"):
            read_trace(path)

    def test_corrupt_line_is_named(self, tmp_path):
        _, outcomes = _run(steps=3)
        path = tmp_path / "trace.jsonl"
        write_trace(outcomes, path)
        lines = path.read_text().splitlines()
        lines[2] = lines[2][:20]  # chop a record in half
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(TraceSchemaError, match="line 3"):
            read_trace(path)

    def test_truncated_file_detected(self, tmp_path):
        _, outcomes = _run(steps=3)
        path = tmp_path / "trace.jsonl"
        write_trace(outcomes, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(TraceSchemaError, match="truncated"):
            read_trace(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(TraceSchemaError, match="line 1"):
            read_trace(path)


def _experiment_obj(**overrides):
    obj = {
        "schema_version": 1,
        "out_dir": "results",
        "trace_verbosity": "summary",
        "base": {
            "batch_size": 4,
            "acceptance": {"kind": "mix", "easy": 0.95, "hard": 0.4, "frac": 0.5},
            "target_length": {"kind": "uniform_int", "low": 5, "high": 15},
            "steps": 10,
        },
        "grid": {
            "policy": ["sd", "tetris"],
            "k": [2, 3],
            "extra": [0, 2],
            "seed": [1, 2],
        },
    }
    obj.update(overrides)
    return obj


class TestLoadExperiment:
    def test_grid_expansion(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(_experiment_obj()))
        spec = load_experiment(path)
        assert len(spec.configs) == 2 * 2 * 2 * 2
        # capacity is derived per cell
        assert all(c.capacity == c.batch_size * c.k for c in spec.configs)
        assert {c.policy for c in spec.configs} == {"sd", "tetris"}

    def test_validation_is_eager_and_names_the_field(self, tmp_path):
        obj = _experiment_obj()
        obj["grid"]["policy"] = ["sd", "warp"]
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(obj))
        with pytest.raises(ConfigError) as exc:
            load_experiment(path)
        assert exc.value.field == "policy"

    def test_explicit_capacity_in_base_rejected(self, tmp_path):
        obj = _experiment_obj()
        obj["base"]["capacity"] = 12
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(obj))
        with pytest.raises(ConfigError, match="derived"):
            load_experiment(path)

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text('{"schema_version": 1,\n  "base": }')
        with pytest.raises(ConfigError, match="line 2"):
            load_experiment(path)

    def test_wrong_schema_version(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(_experiment_obj(schema_version=2)))
        with pytest.raises(ConfigError) as exc:
            load_experiment(path)
        assert exc.value.field == "schema_version"

    def test_empty_grid_axis_rejected(self, tmp_path):
        obj = _experiment_obj()
        obj["grid"]["seed"] = []
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(obj))
        with pytest.raises(ConfigError, match="grid.seed"):
            load_experiment(path)


class TestComparisonTable:
    def _reports(self):
        reports = []
        for policy in ("sd", "dsd", "tetris"):
            for seed in (1, 2):
                extra = 2 if policy == "tetris" else 0
                report, _ = _run(policy=policy, seed=seed, extra=extra)
                reports.append(report)
        return reports

    def test_columns_and_row_order(self, tmp_path):
        path = tmp_path / "comparison.csv"
        write_comparison_table(self._reports(), path)
        with path.open() as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == TABLE_COLUMNS
        keys = [(r[0], int(r[1]), int(r[2]), int(r[3])) for r in rows[1:]]
        assert keys == sorted(keys)
        assert len(keys) == 6

    def test_byte_identical_rewrites(self, tmp_path):
        reports = self._reports()
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        write_comparison_table(reports, a)
        write_comparison_table(reports, b)
        assert a.read_bytes() == b.read_bytes()

    def test_improvement_is_relative_to_best_baseline(self):
        reports = self._reports()
        rows = comparison_rows(reports)
        by_key = {(r["policy"], r["seed"]): r for r in rows}
        for seed in (1, 2):
            best = max(by_key[("sd", seed)]["G"], by_key[("dsd", seed)]["G"])
            tet = by_key[("tetris", seed)]
            assert tet["improvement"] == pytest.approx((tet["G"] - best) / best)
            assert by_key[("sd", seed)]["improvement"] is None

    def test_projection_anchored_on_fixed_window_row(self):
        rows = comparison_rows(self._reports())
        by_key = {(r["policy"], r["seed"]): r for r in rows}
        for seed in (1, 2):
            sd = by_key[("sd", seed)]
            tet = by_key[("tetris", seed)]
            assert sd["delta_projected"] == pytest.approx(0.0, abs=1e-12)
            expected = sd["G"] * (tet["TER"] - sd["TER"]) / sd["TER"]
            assert tet["delta_projected"] == pytest.approx(expected, rel=1e-12)

    def test_six_significant_digits(self, tmp_path):
        path = tmp_path / "comparison.csv"
        write_comparison_table(self._reports(), path)
        with path.open() as fh:
            rows = list(csv.reader(fh))
        g_cell = rows[1][4]
        assert g_cell == f"{float(g_cell):.6g}"
