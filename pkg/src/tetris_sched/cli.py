"""Command-line front end.

Subcommands: ``simulate`` (one run), ``compare`` (a config grid into a CSV),
``oracle-check`` (greedy vs. brute-force ground truth), ``lossless-check``
(exact output-law check of the accept/reject chain), and ``bench`` (selector
operation counts).  Exit codes: 0 success, 1 a runtime check failed, 2 bad
usage or configuration.  ``TETRIS_SCHED_LOG`` (error|info|debug) controls
stderr diagnostics.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .accept_model import AcceptanceMatrix, TokenDistribution, emitted_law
from .selector import (
    ORACLE_MAX_CELLS,
    cumulative_products,
    expected_accepted,
    select_oracle,
    select_tetris,
)
from .sim_engine import PIPELINES, POLICIES, ConfigError, SimConfig, run_simulation
from .trace_io import (
    TraceSchemaError,
    comparison_rows,
    load_experiment,
    write_comparison_table,
    write_report,
    write_trace,
)

log = logging.getLogger("tetris_sched")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _configure_logging() -> None:
    level_name = os.environ.get("TETRIS_SCHED_LOG", "error").lower()
    level = _LOG_LEVELS.get(level_name, logging.ERROR)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("tetris_sched")
    root.handlers[:] = [handler]
    root.setLevel(level)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tetris-sched",
        description="Capacity-constrained batch speculative-decoding scheduler simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one simulation")
    sim.add_argument("--config", type=Path, help="JSON config file (wins over flags)")
    sim.add_argument("--batch-size", type=int, default=None)
    sim.add_argument("--capacity", type=int, default=None)
    sim.add_argument("--k", type=int, default=None)
    sim.add_argument("--extra", type=int, default=None)
    sim.add_argument("--policy", choices=POLICIES, default=None)
    sim.add_argument("--pipeline", choices=PIPELINES, default=None)
    sim.add_argument("--steps", type=int, default=None)
    sim.add_argument("--total-requests", type=int, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", type=Path, default=Path("out"),
                     help="directory for trace.jsonl and report.json")

    cmp_ = sub.add_parser("compare", help="run a policy/k/extra/seed grid")
    cmp_.add_argument("--config", type=Path, required=True, help="experiment JSON file")

    ora = sub.add_parser("oracle-check", help="greedy vs. exhaustive optimum")
    ora.add_argument("--trials", type=int, default=1000)
    ora.add_argument("--max-rows", type=int, default=4)
    ora.add_argument("--max-depth", type=int, default=5)
    ora.add_argument("--max-capacity", type=int, default=8)
    ora.add_argument("--seed", type=int, default=0)

    los = sub.add_parser("lossless-check", help="exact output-law check")
    los.add_argument("--vocab", type=int, default=8)
    los.add_argument("--trials", type=int, default=100)
    los.add_argument("--seed", type=int, default=0)

    ben = sub.add_parser("bench", help="selector operation counts")
    ben.add_argument("--max-capacity", type=int, default=256)
    ben.add_argument("--rows", type=int, default=64)
    ben.add_argument("--seed", type=int, default=0)
    return parser


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

_INLINE_FIELDS = (
    ("batch_size", "batch_size"),
    ("capacity", "capacity"),
    ("k", "k"),
    ("extra", "extra"),
    ("policy", "policy"),
    ("pipeline", "pipeline"),
    ("steps", "steps"),
    ("total_requests", "total_requests"),
    ("seed", "seed"),
)

_SIMULATE_DEFAULTS = {
    "batch_size": 8,
    "k": 4,
    "extra": 2,
    "policy": "tetris",
    "pipeline": "sequential",
    "steps": 50,
    "seed": 0,
}


def _assemble_config(args: argparse.Namespace) -> SimConfig:
    file_obj: dict = {}
    if args.config is not None:
        try:
            file_obj = json.loads(args.config.read_text())
        except OSError as exc:
            raise ConfigError("config", f"cannot read {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(
                "config", f"{args.config} line {exc.lineno}: {exc.msg}"
            ) from None
        if not isinstance(file_obj, dict):
            raise ConfigError("config", "config file must hold a JSON object")
    merged = dict(_SIMULATE_DEFAULTS)
    merged.update(file_obj)
    for attr, key in _INLINE_FIELDS:
        value = getattr(args, attr)
        if value is None:
            continue
        if key in file_obj and file_obj[key] != value:
            log.warning(
                "config file wins for %s: keeping %r, ignoring flag %r",
                key, file_obj[key], value,
            )
            continue
        merged[key] = value
    return SimConfig.from_json(merged)


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _assemble_config(args)
    log.info("simulate: policy=%s k=%d extra=%d seed=%d",
             config.policy, config.k, config.extra, config.seed)
    report, outcomes = run_simulation(config)
    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trace(outcomes, out_dir / "trace.jsonl")
    write_report(report, out_dir / "report.json")

    def show(x: float | None) -> str:
        return "n/a" if x is None else f"{x:.6g}"

    print(
        f"policy={report.policy} steps={report.total_steps} "
        f"G={show(report.throughput)} VSR={show(report.vsr)} TER={show(report.ter)} "
        f"mean_latency={show(report.latency_mean)}"
    )
    return 0


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def _run_name(config: SimConfig) -> str:
    return f"{config.policy}_k{config.k}_e{config.extra}_s{config.seed}"


def cmd_compare(args: argparse.Namespace) -> int:
    spec = load_experiment(args.config)
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for config in spec.configs:
        log.info("compare: running %s", _run_name(config))
        report, outcomes = run_simulation(config)
        reports.append(report)
        if spec.trace_verbosity == "full":
            write_trace(outcomes, out_dir / f"{_run_name(config)}.trace.jsonl")
            write_report(report, out_dir / f"{_run_name(config)}.report.json")
    write_comparison_table(reports, out_dir / "comparison.csv")

    rows = comparison_rows(reports)
    for k in sorted({row["k"] for row in rows}):
        k_rows = [row for row in rows if row["k"] == k]
        improvements = [
            row["improvement"] for row in k_rows if row["improvement"] is not None
        ]
        if improvements:
            print(f"k={k}: tetris vs best baseline: {max(improvements) * 100:+.2f}%")
        else:
            print(f"k={k}: no tetris/baseline pairing available")
    print(f"wrote {out_dir / 'comparison.csv'}")
    return 0


# ---------------------------------------------------------------------------
# oracle-check
# ---------------------------------------------------------------------------


def _random_instance(
    rng: np.random.Generator, max_rows: int, max_depth: int, max_capacity: int
) -> tuple[AcceptanceMatrix, int]:
    n = int(rng.integers(1, max_rows + 1))
    rows = [
        rng.random(int(rng.integers(1, max_depth + 1))).tolist() for _ in range(n)
    ]
    capacity = int(rng.integers(0, max_capacity + 1))
    return AcceptanceMatrix.from_rows(rows), capacity


def cmd_oracle_check(args: argparse.Namespace) -> int:
    if args.max_rows < 1 or args.max_depth < 1 or args.trials < 0:
        print("oracle-check: trials must be >= 0 and bounds >= 1", file=sys.stderr)
        return 2
    if args.max_rows * args.max_depth > ORACLE_MAX_CELLS:
        print(
            f"oracle-check: {args.max_rows} rows x {args.max_depth} depth exceeds "
            f"the enumeration limit of {ORACLE_MAX_CELLS} cells",
            file=sys.stderr,
        )
        return 2
    rng = np.random.default_rng(args.seed)
    for trial in range(args.trials):
        matrix, capacity = _random_instance(
            rng, args.max_rows, args.max_depth, args.max_capacity
        )
        candidates = cumulative_products(matrix)
        greedy, _ = select_tetris(candidates, capacity)
        best = select_oracle(candidates, capacity)
        g_val = expected_accepted(greedy, matrix)
        o_val = expected_accepted(best, matrix)
        if abs(g_val - o_val) >= 1e-12:
            print(
                json.dumps(
                    {
                        "trial": trial,
                        "rows": [list(r) for r in matrix.rows],
                        "capacity": capacity,
                        "greedy_windows": list(greedy.windows),
                        "greedy_value": g_val,
                        "oracle_windows": list(best.windows),
                        "oracle_value": o_val,
                    }
                ),
                file=sys.stderr,
            )
            print(f"{trial}/{args.trials} optimal before first mismatch")
            return 1
    print(f"{args.trials}/{args.trials} optimal")
    return 0


# ---------------------------------------------------------------------------
# lossless-check
# ---------------------------------------------------------------------------


def cmd_lossless_check(args: argparse.Namespace) -> int:
    if not 1 <= args.vocab <= 8 or args.trials < 0:
        print(
            "lossless-check: vocab must lie in 1..8 (exact enumeration) and "
            "trials must be >= 0",
            file=sys.stderr,
        )
        return 2
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.trials):
        p_draft = TokenDistribution(rng.dirichlet(np.ones(args.vocab)))
        p_target = TokenDistribution(rng.dirichlet(np.ones(args.vocab)))
        law = emitted_law(p_draft, p_target)
        tv = 0.5 * float(np.abs(law.probs - p_target.probs).sum())
        worst = max(worst, tv)
    print(f"max total-variation distance over {args.trials} trials: {worst:.3e}")
    if worst > 1e-9:
        print("lossless-check: emitted law deviates from the target", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _powers_of_two_up_to(limit: int) -> list[int]:
    values = []
    v = 1
    while v <= limit:
        values.append(v)
        v *= 2
    if values and values[-1] != limit:
        values.append(limit)
    return values


def cmd_bench(args: argparse.Namespace) -> int:
    if args.rows < 1 or args.max_capacity < 1:
        print("bench: --rows and --max-capacity must be >= 1", file=sys.stderr)
        return 2
    rng = np.random.default_rng(args.seed)
    print("rows capacity extracts inserts peak_queue comparisons")
    for n in _powers_of_two_up_to(args.rows):
        for capacity in _powers_of_two_up_to(args.max_capacity):
            depth = capacity // n + 2  # enough candidates that capacity binds
            matrix = AcceptanceMatrix.from_rows(
                [rng.random(depth).tolist() for _ in range(n)]
            )
            selection, stats = select_tetris(cumulative_products(matrix), capacity)
            if stats.peak_queue > n or stats.extracts > capacity:
                print(
                    f"bench: accounting violated at rows={n} capacity={capacity}: "
                    f"{stats}",
                    file=sys.stderr,
                )
                return 1
            if stats.extracts != selection.size:
                print(
                    f"bench: extracts {stats.extracts} != selected {selection.size}",
                    file=sys.stderr,
                )
                return 1
            print(
                f"{n} {capacity} {stats.extracts} {stats.inserts} "
                f"{stats.peak_queue} {stats.comparisons}"
            )
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "oracle-check": cmd_oracle_check,
    "lossless-check": cmd_lossless_check,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, TraceSchemaError) as exc:
        print(f"tetris-sched: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"tetris-sched: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
