"""Persistence: experiment specs, JSONL step traces, reports, CSV tables.

Traces are JSON Lines with a schema-versioned header so stale files are
rejected loudly.  All writers are deterministic: the same inputs produce
byte-identical files.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .metrics import MetricsReport, projected_throughput
from .selector import PolicyStats
from .sim_engine import ConfigError, SimConfig, StepOutcome

TRACE_SCHEMA = "tetris-sched-trace"
TRACE_VERSION = 1
EXPERIMENT_SCHEMA_VERSION = 1

TABLE_COLUMNS = (
    "policy", "k", "extra", "seed", "G", "VSR", "TER",
    "delta_projected", "mean_latency", "p95_latency", "improvement",
)

BASELINE_POLICIES = ("sd", "dsd")


class TraceSchemaError(ValueError):
    """A trace file does not match the expected schema."""


# ---------------------------------------------------------------------------
# experiment specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    """A grid of simulation configs plus where results should land."""

    configs: tuple[SimConfig, ...]
    out_dir: str
    trace_verbosity: str  # "summary" or "full"


def load_experiment(path: str | Path) -> ExperimentSpec:
    """Parse and eagerly validate an experiment file.

    The grid is the cross product of ``policy x k x extra x seed`` laid over
    the shared ``base`` config; capacity is derived as ``batch_size * k`` for
    every cell.  All configs are validated before anything runs.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("path", f"cannot read {path}: {exc}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("json", f"{path} line {exc.lineno}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ConfigError("json", "experiment file must hold a JSON object")
    version = obj.get("schema_version")
    if version != EXPERIMENT_SCHEMA_VERSION:
        raise ConfigError(
            "schema_version",
            f"expected {EXPERIMENT_SCHEMA_VERSION}, got {version!r}",
        )
    base = obj.get("base")
    if not isinstance(base, dict):
        raise ConfigError("base", "required object missing")
    if "capacity" in base:
        raise ConfigError(
            "base.capacity", "capacity is derived as batch_size * k per grid cell"
        )
    grid = obj.get("grid")
    if not isinstance(grid, dict):
        raise ConfigError("grid", "required object missing")
    for axis in ("policy", "k", "extra", "seed"):
        values = grid.get(axis)
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid.{axis}", "must be a non-empty list")
    unknown = set(grid) - {"policy", "k", "extra", "seed"}
    if unknown:
        raise ConfigError(f"grid.{sorted(unknown)[0]}", "unknown grid axis")

    configs = []
    for policy, k, extra, seed in itertools.product(
        grid["policy"], grid["k"], grid["extra"], grid["seed"]
    ):
        cell = dict(base)
        cell.update(policy=policy, k=int(k), extra=int(extra), seed=int(seed))
        configs.append(SimConfig.from_json(cell))

    verbosity = obj.get("trace_verbosity", "summary")
    if verbosity not in ("summary", "full"):
        raise ConfigError(
            "trace_verbosity", f"must be 'summary' or 'full', got {verbosity!r}"
        )
    out_dir = obj.get("out_dir", "results")
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("out_dir", "must be a non-empty string")
    return ExperimentSpec(
        configs=tuple(configs), out_dir=out_dir, trace_verbosity=verbosity
    )


# ---------------------------------------------------------------------------
# step traces
# ---------------------------------------------------------------------------


def _outcome_to_json(o: StepOutcome) -> dict:
    return {
        "step": o.step,
        "windows": list(o.windows),
        "accepted": list(o.accepted),
        "credited": list(o.credited),
        "bonus": o.bonus,
        "sent": o.sent,
        "tau": o.tau,
        "expected_accepted": o.expected_accepted,
        "stats": None
        if o.stats is None
        else {
            "extracts": o.stats.extracts,
            "inserts": o.stats.inserts,
            "peak_queue": o.stats.peak_queue,
            "comparisons": o.stats.comparisons,
        },
        "completions": [list(c) for c in o.completions],
    }


def _outcome_from_json(obj: dict) -> StepOutcome:
    stats = obj["stats"]
    outcome = StepOutcome(
        step=int(obj["step"]),
        windows=tuple(int(w) for w in obj["windows"]),
        accepted=tuple(int(a) for a in obj["accepted"]),
        credited=tuple(int(c) for c in obj["credited"]),
        bonus=int(obj["bonus"]),
        tau=float(obj["tau"]),
        expected_accepted=float(obj["expected_accepted"]),
        stats=None
        if stats is None
        else PolicyStats(
            extracts=int(stats["extracts"]),
            inserts=int(stats["inserts"]),
            peak_queue=int(stats["peak_queue"]),
            comparisons=int(stats["comparisons"]),
        ),
        completions=tuple((int(i), int(s)) for i, s in obj["completions"]),
    )
    if int(obj["sent"]) != outcome.sent:
        raise ValueError(f"sent={obj['sent']} disagrees with windows {obj['windows']}")
    return outcome


def write_trace(outcomes: Sequence[StepOutcome], path: str | Path) -> None:
    """Write a JSONL trace: one header line, then one line per step."""
    path = Path(path)
    header = {"schema": TRACE_SCHEMA, "version": TRACE_VERSION, "steps": len(outcomes)}
    with path.open("w") as fh:
        fh.write(json.dumps(header) + "\n")
        for o in outcomes:
            fh.write(json.dumps(_outcome_to_json(o)) + "\n")


def read_trace(path: str | Path) -> list[StepOutcome]:
    """Read a trace back; every schema problem names the offending line."""
    path = Path(path)
    with path.open("r") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TraceSchemaError(f"{path}: line 1: empty file, header expected")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceSchemaError(f"{path}: line 1: {exc.msg}") from None
    if not isinstance(header, dict) or header.get("schema") != TRACE_SCHEMA:
        raise TraceSchemaError(f"{path}: line 1: not a {TRACE_SCHEMA} header")
    if header.get("version") != TRACE_VERSION:
        raise TraceSchemaError(
            f"{path}: line 1: unsupported trace version {header.get('version')!r}"
        )
    expected_steps = header.get("steps")
    outcomes = []
    for lineno, raw in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(raw)
            outcomes.append(_outcome_from_json(obj))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise TraceSchemaError(f"{path}: line {lineno}: {exc}") from None
    if expected_steps is not None and expected_steps != len(outcomes):
        raise TraceSchemaError(
            f"{path}: line {len(lines)}: header promises {expected_steps} steps, "
            f"found {len(outcomes)} (file truncated?)"
        )
    return outcomes


def write_report(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2) + "\n")


def read_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# comparison tables
# ---------------------------------------------------------------------------


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6g}"


def comparison_rows(reports: Sequence[MetricsReport]) -> list[dict]:
    """Flatten reports into table rows with cross-policy derived columns.

    Within each (k, seed) group, ``delta_projected`` projects every policy's
    throughput change from its token-efficiency edge over the fixed-window
    baseline, and ``improvement`` is the relative gain of the greedy policy
    over the best baseline in the group.
    """
    rows = []
    for r in reports:
        rows.append(
            {
                "policy": r.policy,
                "k": int(r.config["k"]),
                "extra": int(r.config["extra"]),
                "seed": int(r.config["seed"]),
                "G": r.throughput,
                "VSR": r.vsr,
                "TER": r.ter,
                "delta_projected": None,
                "mean_latency": r.latency_mean,
                "p95_latency": r.latency_p95,
                "improvement": None,
            }
        )
    rows.sort(key=lambda row: (row["policy"], row["k"], row["extra"], row["seed"]))

    groups: dict[tuple[int, int], list[dict]] = {}
    for row in rows:
        groups.setdefault((row["k"], row["seed"]), []).append(row)
    for group in groups.values():
        sd_rows = sorted(
            (r for r in group if r["policy"] == "sd"), key=lambda r: r["extra"]
        )
        if sd_rows:
            anchor = sd_rows[0]
            if anchor["TER"] is not None and anchor["TER"] > 0:
                for row in group:
                    if row["TER"] is not None:
                        delta, _ = projected_throughput(
                            anchor["G"], row["TER"], anchor["TER"]
                        )
                        row["delta_projected"] = delta
        baseline_gs = [r["G"] for r in group if r["policy"] in BASELINE_POLICIES]
        if baseline_gs:
            best = max(baseline_gs)
            if best > 0:
                for row in group:
                    if row["policy"] == "tetris":
                        row["improvement"] = (row["G"] - best) / best
    return rows


def write_comparison_table(reports: Sequence[MetricsReport], path: str | Path) -> None:
    """CSV summary, one row per run; floats carry six significant digits."""
    rows = comparison_rows(reports)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row["policy"],
                    row["k"],
                    row["extra"],
                    row["seed"],
                    _fmt(row["G"]),
                    _fmt(row["VSR"]),
                    _fmt(row["TER"]),
                    _fmt(row["delta_projected"]),
                    _fmt(row["mean_latency"]),
                    _fmt(row["p95_latency"]),
                    _fmt(row["improvement"]),
                ]
            )
