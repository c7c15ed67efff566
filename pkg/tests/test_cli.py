"""End-to-end tests of the command-line interface (in-process)."""

import csv
import json

import pytest

from tetris_sched.cli import main


def _simulate_args(out_dir, **extra):
    args = [
        "simulate",
        "--batch-size", "4",
        "--k", "3",
        "--extra", "2",
        "--policy", "tetris",
        "--steps", "8",
        "--seed", "5",
        "--out", str(out_dir),
    ]
    for key, value in extra.items():
        args += [f"--{key.replace('_', '-')}", str(value)]
    return args


class TestSimulate:
    def test_writes_trace_report_and_summary(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(_simulate_args(out)) == 0
        captured = capsys.readouterr().out
        assert "policy=tetris" in captured and "G=" in captured
        report = json.loads((out / "report.json").read_text())
        assert report["total_steps"] == 8
        trace_lines = (out / "trace.jsonl").read_text().splitlines()
        assert len(trace_lines) == 9  # header + 8 steps

    def test_zero_steps_is_a_valid_empty_run(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(_simulate_args(out, steps=0)) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["empty"] is True and report["vsr"] is None

    def test_unknown_policy_is_a_usage_error(self, tmp_path, capsys):
        code = main(_simulate_args(tmp_path / "x", policy="blorp"))
        assert code == 2
        assert "tetris" in capsys.readouterr().err  # valid choices are listed

    def test_inconsistent_capacity_is_a_config_error(self, tmp_path, capsys):
        code = main(_simulate_args(tmp_path / "x", capacity="11"))
        assert code == 2
        assert "capacity" in capsys.readouterr().err

    def test_config_file_wins_over_flags(self, tmp_path, capsys):
        cfg = {
            "batch_size": 2,
            "k": 2,
            "seed": 9,
            "steps": 4,
            "policy": "sd",
            "acceptance": {"kind": "mix", "easy": 0.9, "hard": 0.5, "frac": 0.5},
        }
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "run"
        code = main(
            ["simulate", "--config", str(cfg_path), "--policy", "tetris",
             "--out", str(out)]
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["policy"] == "sd"  # file value kept

    def test_repeat_runs_are_byte_identical(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(_simulate_args(out1)) == 0
        assert main(_simulate_args(out2)) == 0
        assert (out1 / "trace.jsonl").read_bytes() == (out2 / "trace.jsonl").read_bytes()
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()


class TestCompare:
    def _spec(self, tmp_path, **overrides):
        obj = {
            "schema_version": 1,
            "out_dir": str(tmp_path / "results"),
            "trace_verbosity": "summary",
            "base": {
                "batch_size": 4,
                "acceptance": {"kind": "mix", "easy": 0.95, "hard": 0.4, "frac": 0.5},
                "target_length": {"kind": "uniform_int", "low": 5, "high": 15},
                "steps": 8,
            },
            "grid": {
                "policy": ["sd", "dsd", "tetris"],
                "k": [2, 3],
                "extra": [0, 2],
                "seed": [1, 2, 3],
            },
        }
        obj.update(overrides)
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(obj))
        return path

    def test_grid_runs_into_csv(self, tmp_path, capsys):
        path = self._spec(tmp_path)
        assert main(["compare", "--config", str(path)]) == 0
        out = capsys.readouterr().out
        assert "k=2" in out and "k=3" in out
        with (tmp_path / "results" / "comparison.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 3 * 2 * 2 * 3

    def test_full_verbosity_writes_traces(self, tmp_path, capsys):
        path = self._spec(
            tmp_path,
            trace_verbosity="full",
            grid={"policy": ["tetris"], "k": [2], "extra": [1], "seed": [4]},
        )
        assert main(["compare", "--config", str(path)]) == 0
        assert (tmp_path / "results" / "tetris_k2_e1_s4.trace.jsonl").exists()
        assert (tmp_path / "results" / "tetris_k2_e1_s4.report.json").exists()

    def test_bad_spec_is_exit_2(self, tmp_path, capsys):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({"schema_version": 1}))
        assert main(["compare", "--config", str(path)]) == 2

    def test_missing_file_is_exit_2(self, tmp_path, capsys):
        assert main(["compare", "--config", str(tmp_path / "nope.json")]) == 2


class TestOracleCheck:
    def test_happy_path(self, capsys):
        code = main(["oracle-check", "--trials", "50", "--seed", "3"])
        assert code == 0
        assert "50/50 optimal" in capsys.readouterr().out

    def test_zero_trials_vacuously_passes(self, capsys):
        assert main(["oracle-check", "--trials", "0"]) == 0
        assert "0/0 optimal" in capsys.readouterr().out

    def test_oversized_bounds_are_usage_error(self, capsys):
        code = main(["oracle-check", "--max-rows", "6", "--max-depth", "5"])
        assert code == 2
        assert "limit" in capsys.readouterr().err


class TestLosslessCheck:
    def test_happy_path(self, capsys):
        code = main(["lossless-check", "--vocab", "4", "--trials", "50"])
        assert code == 0
        assert "total-variation" in capsys.readouterr().out

    def test_vocab_too_large_is_usage_error(self, capsys):
        assert main(["lossless-check", "--vocab", "9"]) == 2


class TestBench:
    def test_prints_counts_and_respects_bounds(self, capsys):
        code = main(["bench", "--rows", "8", "--max-capacity", "32"])
        assert code == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].split() == [
            "rows", "capacity", "extracts", "inserts", "peak_queue", "comparisons"
        ]
        for line in out[1:]:
            n, capacity, extracts, inserts, peak, comparisons = map(int, line.split())
            assert extracts <= capacity
            assert peak <= n
            assert inserts <= extracts + n

    def test_capacity_binds_when_candidates_abound(self, capsys):
        assert main(["bench", "--rows", "4", "--max-capacity", "16"]) == 0
        lines = capsys.readouterr().out.splitlines()[1:]
        last = lines[-1].split()
        assert last[0] == "4" and last[1] == "16" and last[2] == "16"


class TestUsage:
    def test_no_command_is_usage_error(self, capsys):
        assert main([]) == 2

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "simulate" in capsys.readouterr().out
