"""Discrete-step simulator of batched speculative-decoding serving.

Each step drafts candidate tokens for every active request, lets the
configured policy pick which ones to verify under the hard capacity, applies
exact cascading verification against the true acceptance probabilities,
credits one bonus token per request, and refills the batch from an unbounded
queue so the load stays constant.  The selector only ever sees the surrogate
view of the truth matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import metrics as metrics_mod
from .accept_model import (
    AcceptanceMatrix,
    AcceptanceSource,
    SurrogateConfig,
    acceptance_source_to_json,
    parse_acceptance_source,
    surrogate_estimates,
)
from .selector import (
    PolicyStats,
    Selection,
    cumulative_products,
    expected_accepted,
    select_dsd,
    select_oracle,
    select_tetris,
)

POLICIES = ("tetris", "sd", "dsd", "oracle")
PIPELINES = ("sequential", "parallel")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration; ``field`` names the culprit."""

    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedLength:
    value: int

    def sample(self, rng: np.random.Generator) -> int:
        return self.value


@dataclass(frozen=True)
class UniformLength:
    low: int
    high: int

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.low, self.high + 1))


LengthDistribution = Union[FixedLength, UniformLength]


def parse_length_distribution(obj: dict) -> LengthDistribution:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError("target_length", "must be an object with a 'kind' field")
    kind = obj["kind"]
    if kind == "fixed":
        value = int(obj.get("value", 0))
        if value < 1:
            raise ConfigError("target_length", f"fixed length must be >= 1, got {value}")
        return FixedLength(value)
    if kind == "uniform_int":
        low, high = int(obj.get("low", 0)), int(obj.get("high", 0))
        if low < 1 or high < low:
            raise ConfigError(
                "target_length", f"need 1 <= low <= high, got low={low} high={high}"
            )
        return UniformLength(low, high)
    raise ConfigError("target_length", f"unknown kind {kind!r}")


def length_distribution_to_json(dist: LengthDistribution) -> dict:
    if isinstance(dist, FixedLength):
        return {"kind": "fixed", "value": dist.value}
    return {"kind": "uniform_int", "low": dist.low, "high": dist.high}


@dataclass(frozen=True)
class SimConfig:
    """Full description of one simulation run.

    ``capacity`` must equal ``batch_size * k``: the verification budget is
    exactly what the fixed-window baseline consumes, and smarter policies
    redistribute it rather than enlarge it.  ``extra`` is how many tokens
    beyond ``k`` each request drafts for the selector to choose from.
    """

    batch_size: int
    k: int
    capacity: int
    seed: int
    extra: int = 0
    policy: str = "tetris"
    pipeline: str = "sequential"
    acceptance: AcceptanceSource = None  # type: ignore[assignment]
    surrogate: SurrogateConfig = SurrogateConfig()
    target_length: LengthDistribution = FixedLength(64)
    draft_time_per_token: float = 0.0025
    selection_overhead: float = 0.0003
    verify_time: float = 0.025
    steps: int | None = None
    total_requests: int | None = None
    dsd_decay: float = 0.9
    dsd_initial_estimate: float = 0.5

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be >= 1, got {self.batch_size}")
        if self.k < 1:
            raise ConfigError("k", f"must be >= 1, got {self.k}")
        if self.capacity != self.batch_size * self.k:
            raise ConfigError(
                "capacity",
                f"must equal batch_size * k = {self.batch_size * self.k}, "
                f"got {self.capacity}",
            )
        if self.extra < 0:
            raise ConfigError("extra", f"must be >= 0, got {self.extra}")
        if self.policy not in POLICIES:
            raise ConfigError("policy", f"must be one of {POLICIES}, got {self.policy!r}")
        if self.pipeline not in PIPELINES:
            raise ConfigError(
                "pipeline", f"must be one of {PIPELINES}, got {self.pipeline!r}"
            )
        if self.acceptance is None:
            raise ConfigError("acceptance", "an acceptance source is required")
        if not isinstance(self.seed, int):
            raise ConfigError("seed", "an explicit integer seed is required")
        for name in ("draft_time_per_token", "selection_overhead", "verify_time"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        if self.draft_time_per_token + self.selection_overhead + self.verify_time <= 0:
            raise ConfigError("verify_time", "step time must be positive")
        if self.steps is None and self.total_requests is None:
            raise ConfigError("steps", "set steps or total_requests (or both)")
        if self.steps is not None and self.steps < 0:
            raise ConfigError("steps", f"must be >= 0, got {self.steps}")
        if self.total_requests is not None and self.total_requests < 0:
            raise ConfigError(
                "total_requests", f"must be >= 0, got {self.total_requests}"
            )
        if not 0.0 <= self.dsd_decay < 1.0:
            raise ConfigError("dsd_decay", f"must lie in [0, 1), got {self.dsd_decay}")
        if not 0.0 <= self.dsd_initial_estimate <= 1.0:
            raise ConfigError(
                "dsd_initial_estimate",
                f"must lie in [0, 1], got {self.dsd_initial_estimate}",
            )

    @classmethod
    def from_json(cls, obj: dict) -> "SimConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config", "must be a JSON object")
        known = {
            "batch_size", "k", "capacity", "seed", "extra", "policy", "pipeline",
            "acceptance", "surrogate", "target_length", "timing", "steps",
            "total_requests", "dsd_decay", "dsd_initial_estimate",
        }
        for key in obj:
            if key not in known:
                raise ConfigError(key, "unknown configuration field")
        try:
            batch_size = int(obj["batch_size"])
            k = int(obj["k"])
            seed = int(obj["seed"])
        except KeyError as exc:
            raise ConfigError(str(exc.args[0]), "required field missing") from None
        capacity = int(obj.get("capacity", batch_size * k))
        try:
            acceptance = parse_acceptance_source(
                obj.get("acceptance", {"kind": "mix", "easy": 0.95, "hard": 0.4, "frac": 0.5})
            )
        except ValueError as exc:
            raise ConfigError("acceptance", str(exc)) from None
        sur = obj.get("surrogate", {})
        try:
            surrogate = SurrogateConfig(
                noise=sur.get("noise", "none"),
                sigma=float(sur.get("sigma", 0.0)),
                seed=int(sur.get("seed", 0)),
            )
        except ValueError as exc:
            raise ConfigError("surrogate", str(exc)) from None
        timing = obj.get("timing", {})
        config = cls(
            batch_size=batch_size,
            k=k,
            capacity=capacity,
            seed=seed,
            extra=int(obj.get("extra", 0)),
            policy=str(obj.get("policy", "tetris")),
            pipeline=str(obj.get("pipeline", "sequential")),
            acceptance=acceptance,
            surrogate=surrogate,
            target_length=parse_length_distribution(
                obj.get("target_length", {"kind": "uniform_int", "low": 32, "high": 128})
            ),
            draft_time_per_token=float(timing.get("draft_time_per_token", 0.0025)),
            selection_overhead=float(timing.get("selection_overhead", 0.0003)),
            verify_time=float(timing.get("verify_time", 0.025)),
            steps=None if obj.get("steps") is None else int(obj["steps"]),
            total_requests=(
                None if obj.get("total_requests") is None else int(obj["total_requests"])
            ),
            dsd_decay=float(obj.get("dsd_decay", 0.9)),
            dsd_initial_estimate=float(obj.get("dsd_initial_estimate", 0.5)),
        )
        config.validate()
        return config

    def to_json(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "k": self.k,
            "capacity": self.capacity,
            "seed": self.seed,
            "extra": self.extra,
            "policy": self.policy,
            "pipeline": self.pipeline,
            "acceptance": acceptance_source_to_json(self.acceptance),
            "surrogate": {
                "noise": self.surrogate.noise,
                "sigma": self.surrogate.sigma,
                "seed": self.surrogate.seed,
            },
            "target_length": length_distribution_to_json(self.target_length),
            "timing": {
                "draft_time_per_token": self.draft_time_per_token,
                "selection_overhead": self.selection_overhead,
                "verify_time": self.verify_time,
            },
            "steps": self.steps,
            "total_requests": self.total_requests,
            "dsd_decay": self.dsd_decay,
            "dsd_initial_estimate": self.dsd_initial_estimate,
        }


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


@dataclass
class Request:
    id: int
    target_len: int
    arrival_step: int
    served: int = 0
    completion_step: int | None = None

    @property
    def remaining(self) -> int:
        return self.target_len - self.served


@dataclass(frozen=True)
class StepOutcome:
    """Everything observable about one simulator step."""

    step: int
    windows: tuple[int, ...]
    accepted: tuple[int, ...]
    credited: tuple[int, ...]
    bonus: int
    tau: float
    expected_accepted: float
    stats: PolicyStats | None
    completions: tuple[tuple[int, int], ...]  # (request id, arrival step)

    @property
    def sent(self) -> int:
        return sum(self.windows)


@dataclass
class SimState:
    active: list[Request]
    completed: list[Request]
    next_id: int
    step: int
    clock: float
    alpha_hat: float
    length_rng: np.random.Generator
    truth_rng: np.random.Generator
    surrogate_rng: np.random.Generator
    verify_rng: np.random.Generator


def init_state(config: SimConfig) -> SimState:
    """Fresh state with a full batch; all randomness derives from config.seed."""
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(4)]
    length_rng, truth_rng, surrogate_rng, verify_rng = streams
    active = [
        Request(id=i, target_len=config.target_length.sample(length_rng), arrival_step=0)
        for i in range(config.batch_size)
    ]
    return SimState(
        active=active,
        completed=[],
        next_id=config.batch_size,
        step=0,
        clock=0.0,
        alpha_hat=config.dsd_initial_estimate,
        length_rng=length_rng,
        truth_rng=truth_rng,
        surrogate_rng=surrogate_rng,
        verify_rng=verify_rng,
    )


# ---------------------------------------------------------------------------
# one step
# ---------------------------------------------------------------------------


def draft_phase(
    state: SimState, config: SimConfig
) -> tuple[AcceptanceMatrix, AcceptanceMatrix]:
    """Draft ``k + extra`` candidate depths per request (truncated to what the
    request still needs) and return (truth, surrogate) acceptance matrices."""
    depths = [min(config.k + config.extra, r.remaining) for r in state.active]
    truth = config.acceptance.sample(depths, state.truth_rng)
    surrogate = surrogate_estimates(truth, config.surrogate, state.surrogate_rng)
    return truth, surrogate


def _policy_selection(
    config: SimConfig,
    state: SimState,
    surrogate: AcceptanceMatrix,
) -> tuple[Selection, PolicyStats | None]:
    depths = surrogate.depths()
    if config.policy == "tetris":
        return select_tetris(cumulative_products(surrogate), config.capacity)
    if config.policy == "sd":
        # fixed window, clamped to what each request could draft
        return Selection(tuple(min(config.k, d) for d in depths)), None
    if config.policy == "dsd":
        uniform = select_dsd(
            state.alpha_hat,
            config.batch_size,
            config.capacity,
            depth_limit=config.k + config.extra,
        )
        common = uniform.windows[0] if uniform.windows else 0
        return Selection(tuple(min(common, d) for d in depths)), None
    if config.policy == "oracle":
        return select_oracle(cumulative_products(surrogate), config.capacity), None
    raise ConfigError("policy", f"unknown policy {config.policy!r}")


def apply_verification(
    selection: Selection, truth: AcceptanceMatrix, rng: np.random.Generator
) -> tuple[int, ...]:
    """Cascading accept/reject per row: the first rejected depth ends the row.

    Exactly ``windows[i]`` uniform draws are consumed for row i, whether or
    not an early rejection occurs, so outcomes beyond the first rejection
    never shift the stream seen by later rows or steps.
    """
    if len(selection.windows) != truth.n_rows:
        raise ValueError(
            f"selection covers {len(selection.windows)} rows, truth has {truth.n_rows}"
        )
    accepted = []
    for window, row in zip(selection.windows, truth.rows):
        if window > len(row):
            raise ValueError(
                f"selection window {window} deeper than drafted depth {len(row)}"
            )
        if window == 0:
            accepted.append(0)
            continue
        draws = rng.random(window)
        count = 0
        for u, alpha in zip(draws, row):
            if u < alpha:
                count += 1
            else:
                break
        accepted.append(count)
    return tuple(accepted)


def bonus_tokens(state: SimState) -> int:
    """Verification emits one extra token per request beyond the accepted run."""
    return len(state.active)


def step_time(config: SimConfig, drafted_depths: Sequence[int]) -> float:
    """Wall time of one step under the configured pipeline.

    Sequential runs pay drafting, selection, and verification back to back;
    parallel runs overlap drafting/selection of the next step with
    verification, so the slower of the two paths sets the pace.
    """
    draft_path = (
        config.draft_time_per_token * (max(drafted_depths) if drafted_depths else 0)
        + config.selection_overhead
    )
    if config.pipeline == "sequential":
        return draft_path + config.verify_time
    return max(draft_path, config.verify_time)


def refill_batch(state: SimState, config: SimConfig) -> list[Request]:
    """Retire finished requests and admit replacements from the endless queue.

    Returns the requests that completed.  Replacements are stamped with the
    next step as their arrival: they take no part in the step that freed
    their slot.
    """
    done = [r for r in state.active if r.remaining <= 0]
    if not done:
        return []
    for r in done:
        r.completion_step = state.step
    state.active = [r for r in state.active if r.remaining > 0]
    for _ in done:
        state.active.append(
            Request(
                id=state.next_id,
                target_len=config.target_length.sample(state.length_rng),
                arrival_step=state.step + 1,
            )
        )
        state.next_id += 1
    state.completed.extend(done)
    return done


def run_step(state: SimState, config: SimConfig) -> StepOutcome:
    """Advance the simulation by one step and record what happened."""
    if len(state.active) != config.batch_size:
        raise RuntimeError(
            f"load invariant broken: {len(state.active)} active requests, "
            f"expected {config.batch_size}"
        )
    truth, surrogate = draft_phase(state, config)
    selection, stats = _policy_selection(config, state, surrogate)
    accepted = apply_verification(selection, truth, state.verify_rng)
    expected = expected_accepted(selection, truth)
    bonus = bonus_tokens(state)

    credited = []
    for request, acc in zip(state.active, accepted):
        tokens = min(acc + 1, request.remaining)  # bonus never overshoots the target
        request.served += tokens
        credited.append(tokens)

    sent = selection.size
    if sent > 0:
        rate = sum(accepted) / sent
        state.alpha_hat = (
            config.dsd_decay * state.alpha_hat + (1.0 - config.dsd_decay) * rate
        )

    tau = step_time(config, truth.depths())
    done = refill_batch(state, config)
    outcome = StepOutcome(
        step=state.step,
        windows=selection.windows,
        accepted=accepted,
        credited=tuple(credited),
        bonus=bonus,
        tau=tau,
        expected_accepted=expected,
        stats=stats,
        completions=tuple((r.id, r.arrival_step) for r in done),
    )
    state.step += 1
    state.clock += tau
    return outcome


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------


def run_simulation(config: SimConfig) -> tuple[metrics_mod.MetricsReport, list[StepOutcome]]:
    """Run to the configured horizon and return (report, step trace)."""
    config.validate()
    state = init_state(config)
    outcomes: list[StepOutcome] = []
    while True:
        if config.steps is not None and state.step >= config.steps:
            break
        if (
            config.total_requests is not None
            and len(state.completed) >= config.total_requests
        ):
            break
        outcomes.append(run_step(state, config))
    report = metrics_mod.build_report(outcomes, policy=config.policy, config=config.to_json())
    return report, outcomes
