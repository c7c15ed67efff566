"""Throughput, acceptance-efficiency, and latency metrics.

Every report field is a pure fold over the recorded step outcomes, so a
report can always be recomputed from a persisted trace.  Undefined ratios
(no tokens sent, no completed requests, zero steps) surface as ``None`` plus
an explicit flag -- never as a silent zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:  # import only for annotations; the engine imports us at runtime
    from .sim_engine import StepOutcome

# Token-efficiency denominator: every sent token accepted plus one bonus per
# request, i.e. the best case the batch could have achieved.
TER_DENOMINATOR = "sent_plus_batch"


def per_step_throughput(accepted_total: float, batch_size: int, tau_step: float) -> float:
    """Tokens produced in one step (accepted drafts + one per request) per second."""
    if tau_step <= 0.0:
        raise ValueError(f"tau_step must be > 0, got {tau_step!r}")
    if batch_size < 0 or accepted_total < 0:
        raise ValueError("accepted_total and batch_size must be >= 0")
    return (accepted_total + batch_size) / tau_step


def total_throughput(series: Sequence[float]) -> float:
    """Mean of the per-step throughput series; 0.0 for an empty series
    (callers flag emptiness explicitly)."""
    if len(series) == 0:
        return 0.0
    return float(np.mean(series))


def vsr(accepted: float, sent: float) -> float | None:
    """Fraction of sent draft tokens that were accepted; None when nothing was sent."""
    if accepted < 0 or sent < 0:
        raise ValueError("accepted and sent must be >= 0")
    if accepted > sent:
        raise ValueError(f"accepted {accepted} exceeds sent {sent}")
    if sent == 0:
        return None
    return accepted / sent


def ter(accepted: float, bonus: float, sent: float, batch_size: float) -> float | None:
    """Realized tokens over the best case had every sent token been accepted."""
    if min(accepted, bonus, sent, batch_size) < 0:
        raise ValueError("ter arguments must be >= 0")
    denom = sent + batch_size
    if denom == 0:
        return None
    return (accepted + bonus) / denom


def projected_throughput(
    g_sd: float, ter_policy: float, ter_sd: float
) -> tuple[float, float]:
    """Throughput change projected from token-efficiency ratios.

    Returns ``(delta, projected)`` where ``delta`` scales the baseline
    throughput by the relative efficiency gain and ``projected`` is the
    baseline plus that delta.
    """
    if ter_sd <= 0.0:
        raise ValueError(f"ter_sd must be > 0, got {ter_sd!r}")
    delta = g_sd * (ter_policy - ter_sd) / ter_sd
    return delta, g_sd + delta


@dataclass(frozen=True)
class LatencyStats:
    count: int
    mean: float | None
    median: float | None
    p95: float | None


def latency_stats(latencies: Sequence[float]) -> LatencyStats:
    """Mean / median / 95th percentile of request latencies."""
    if len(latencies) == 0:
        return LatencyStats(count=0, mean=None, median=None, p95=None)
    arr = np.asarray(latencies, dtype=np.float64)
    return LatencyStats(
        count=int(arr.size),
        mean=float(arr.mean()),
        median=float(np.median(arr)),
        p95=float(np.percentile(arr, 95)),
    )


def request_latencies(outcomes: Sequence["StepOutcome"]) -> list[float]:
    """Latency of every request completed in the trace, in completion order.

    A request admitted at step s and completed at step t waited through steps
    s..t inclusive, so its latency is the sum of those step times.
    """
    cumulative = [0.0]
    for o in outcomes:
        cumulative.append(cumulative[-1] + o.tau)
    out = []
    for t, o in enumerate(outcomes):
        for _req_id, arrival in o.completions:
            if not 0 <= arrival <= t:
                raise ValueError(
                    f"completion at step {t} has arrival step {arrival} outside 0..{t}"
                )
            out.append(cumulative[t + 1] - cumulative[arrival])
    return out


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate view of one simulation run."""

    policy: str
    empty: bool
    total_steps: int
    total_sent: int
    total_accepted: int
    total_bonus: int
    total_tokens_served: int
    requests_completed: int
    throughput: float
    throughput_expected: float
    mean_step_tokens: float
    step_throughput: tuple[float, ...]
    vsr: float | None
    ter: float | None
    ter_denominator: str
    latency_mean: float | None
    latency_median: float | None
    latency_p95: float | None
    config: dict

    def to_json(self) -> dict:
        return {
            "policy": self.policy,
            "empty": self.empty,
            "total_steps": self.total_steps,
            "total_sent": self.total_sent,
            "total_accepted": self.total_accepted,
            "total_bonus": self.total_bonus,
            "total_tokens_served": self.total_tokens_served,
            "requests_completed": self.requests_completed,
            "throughput": self.throughput,
            "throughput_expected": self.throughput_expected,
            "mean_step_tokens": self.mean_step_tokens,
            "step_throughput": list(self.step_throughput),
            "vsr": self.vsr,
            "ter": self.ter,
            "ter_denominator": self.ter_denominator,
            "latency_mean": self.latency_mean,
            "latency_median": self.latency_median,
            "latency_p95": self.latency_p95,
            "config": self.config,
        }


def build_report(
    outcomes: Sequence["StepOutcome"], policy: str, config: dict
) -> MetricsReport:
    """Fold a step trace into a ``MetricsReport``."""
    steps = len(outcomes)
    if steps == 0:
        return MetricsReport(
            policy=policy,
            empty=True,
            total_steps=0,
            total_sent=0,
            total_accepted=0,
            total_bonus=0,
            total_tokens_served=0,
            requests_completed=0,
            throughput=0.0,
            throughput_expected=0.0,
            mean_step_tokens=0.0,
            step_throughput=(),
            vsr=None,
            ter=None,
            ter_denominator=TER_DENOMINATOR,
            latency_mean=None,
            latency_median=None,
            latency_p95=None,
            config=config,
        )
    step_g = []
    step_g_expected = []
    step_tokens = []
    total_sent = total_accepted = total_bonus = total_served = completed = 0
    for o in outcomes:
        acc = sum(o.accepted)
        step_g.append(per_step_throughput(acc, o.bonus, o.tau))
        step_g_expected.append(per_step_throughput(o.expected_accepted, o.bonus, o.tau))
        step_tokens.append(acc + o.bonus)
        total_sent += o.sent
        total_accepted += acc
        total_bonus += o.bonus
        total_served += sum(o.credited)
        completed += len(o.completions)
    lat = latency_stats(request_latencies(outcomes))
    return MetricsReport(
        policy=policy,
        empty=False,
        total_steps=steps,
        total_sent=total_sent,
        total_accepted=total_accepted,
        total_bonus=total_bonus,
        total_tokens_served=total_served,
        requests_completed=completed,
        throughput=total_throughput(step_g),
        throughput_expected=total_throughput(step_g_expected),
        mean_step_tokens=float(np.mean(step_tokens)),
        step_throughput=tuple(step_g),
        vsr=vsr(total_accepted, total_sent),
        ter=ter(total_accepted, total_bonus, total_sent, total_bonus),
        ter_denominator=TER_DENOMINATOR,
        latency_mean=lat.mean,
        latency_median=lat.median,
        latency_p95=lat.p95,
        config=config,
    )
