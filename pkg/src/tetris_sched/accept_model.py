"""Acceptance-probability models and token-level rejection sampling.

This module owns the two probability layers the scheduler works with:

* matrix level -- per-request, per-depth acceptance probabilities
  (``AcceptanceMatrix``), the pluggable sources that produce them, and the
  noisy surrogate view the selector is allowed to see;
* token level -- the exact accept/reject rule of speculative decoding over
  full vocabulary distributions, its residual distribution, and the exact
  law of the emitted token (used to check losslessness).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

# Surrogate probabilities are kept strictly inside (0, 1) so that logits and
# cumulative products stay finite and selectable.
SURROGATE_CLAMP = 1e-6

SURROGATE_NOISE_KINDS = ("none", "logit-gaussian")


class DegenerateResidualError(ValueError):
    """No residual mass: the target distribution never rejects the draft."""


# ---------------------------------------------------------------------------
# matrix level
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AcceptanceMatrix:
    """Conditional acceptance probabilities, one row per batched request.

    Row ``i`` holds ``alpha[i][j]`` for depths ``j = 1..L_i``: the
    probability that the token drafted at depth ``j`` is accepted given that
    its whole prefix was accepted.  Rows may have different lengths (requests
    near completion draft fewer tokens); every row has at least one entry.
    """

    rows: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if not self.rows:
            raise ValueError("acceptance matrix needs at least one row")
        for i, row in enumerate(self.rows):
            if not row:
                raise ValueError(f"row {i} is empty; every row needs depth >= 1")
            for j, alpha in enumerate(row):
                if not 0.0 <= alpha <= 1.0:
                    raise ValueError(
                        f"alpha[{i}][{j}] = {alpha!r} outside [0, 1]"
                    )

    @classmethod
    def from_rows(cls, rows: Iterable[Iterable[float]]) -> "AcceptanceMatrix":
        return cls(tuple(tuple(float(a) for a in row) for row in rows))

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def depths(self) -> tuple[int, ...]:
        return tuple(len(row) for row in self.rows)


def make_constant_row_model(alphas: Sequence[float], depth: int) -> AcceptanceMatrix:
    """Matrix whose row i repeats ``alphas[i]`` for ``depth`` columns."""
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"rate {a!r} outside [0, 1]")
    return AcceptanceMatrix.from_rows([[a] * depth for a in alphas])


@dataclass(frozen=True)
class MatrixSource:
    """Fixed acceptance matrix reused every step (row i maps to batch slot i)."""

    rows: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        AcceptanceMatrix(self.rows)  # validate once

    def sample(self, depths: Sequence[int], rng: np.random.Generator) -> AcceptanceMatrix:
        if len(depths) > len(self.rows):
            raise ValueError(
                f"source has {len(self.rows)} rows but {len(depths)} were requested"
            )
        out = []
        for i, d in enumerate(depths):
            if d > len(self.rows[i]):
                raise ValueError(
                    f"row {i} has depth {len(self.rows[i])} but {d} was requested"
                )
            out.append(self.rows[i][:d])
        return AcceptanceMatrix.from_rows(out)


@dataclass(frozen=True)
class BetaSource:
    """Beta(a, b) acceptance rates, either i.i.d. per token or constant per row.

    ``per_row=True`` draws one rate per request and repeats it across depths,
    which is the regime where every token of a request shares one rate.
    """

    a: float
    b: float
    per_row: bool = False

    def __post_init__(self) -> None:
        if self.a <= 0 or self.b <= 0:
            raise ValueError(f"beta parameters must be positive, got a={self.a}, b={self.b}")

    def sample(self, depths: Sequence[int], rng: np.random.Generator) -> AcceptanceMatrix:
        rows = []
        for d in depths:
            if self.per_row:
                rate = float(rng.beta(self.a, self.b))
                rows.append([rate] * d)
            else:
                rows.append(rng.beta(self.a, self.b, size=d).tolist())
        return AcceptanceMatrix.from_rows(rows)


@dataclass(frozen=True)
class MixSource:
    """Two-population batches: each row is "easy" with probability ``frac``.

    Easy rows get a constant high acceptance rate, hard rows a constant low
    one, mimicking a serving mix of forgiving and adversarial prompts.
    """

    easy: float = 0.95
    hard: float = 0.4
    frac: float = 0.5

    def __post_init__(self) -> None:
        for name in ("easy", "hard", "frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v!r} outside [0, 1]")

    def sample(self, depths: Sequence[int], rng: np.random.Generator) -> AcceptanceMatrix:
        is_easy = rng.random(len(depths)) < self.frac
        rows = [
            [self.easy if e else self.hard] * d
            for e, d in zip(is_easy, depths)
        ]
        return AcceptanceMatrix.from_rows(rows)


AcceptanceSource = Union[MatrixSource, BetaSource, MixSource]


def parse_acceptance_source(obj: dict) -> AcceptanceSource:
    """Build a source from its JSON form; unknown kinds are rejected."""
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ValueError("acceptance source must be an object with a 'kind' field")
    kind = obj["kind"]
    if kind == "matrix":
        rows = obj.get("rows")
        if not isinstance(rows, list):
            raise ValueError("matrix source needs a 'rows' list")
        return MatrixSource(tuple(tuple(float(a) for a in row) for row in rows))
    if kind == "beta":
        return BetaSource(
            a=float(obj.get("a", 1.0)),
            b=float(obj.get("b", 1.0)),
            per_row=bool(obj.get("per_row", False)),
        )
    if kind == "mix":
        return MixSource(
            easy=float(obj.get("easy", 0.95)),
            hard=float(obj.get("hard", 0.4)),
            frac=float(obj.get("frac", 0.5)),
        )
    raise ValueError(f"unknown acceptance source kind {kind!r}")


def acceptance_source_to_json(source: AcceptanceSource) -> dict:
    if isinstance(source, MatrixSource):
        return {"kind": "matrix", "rows": [list(r) for r in source.rows]}
    if isinstance(source, BetaSource):
        return {"kind": "beta", "a": source.a, "b": source.b, "per_row": source.per_row}
    if isinstance(source, MixSource):
        return {"kind": "mix", "easy": source.easy, "hard": source.hard, "frac": source.frac}
    raise TypeError(f"not an acceptance source: {source!r}")


def sample_acceptance_matrix(
    source: AcceptanceSource, n_rows: int, depth: int, rng: np.random.Generator
) -> AcceptanceMatrix:
    """Draw an ``n_rows`` x ``depth`` matrix from ``source`` using ``rng``."""
    if n_rows < 1:
        raise ValueError(f"n_rows must be >= 1, got {n_rows}")
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    return source.sample([depth] * n_rows, rng)


# ---------------------------------------------------------------------------
# surrogate view
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurrogateConfig:
    """How the selector's estimate of the truth matrix is distorted."""

    noise: str = "none"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.noise not in SURROGATE_NOISE_KINDS:
            raise ValueError(
                f"noise must be one of {SURROGATE_NOISE_KINDS}, got {self.noise!r}"
            )
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


def surrogate_estimates(
    truth: AcceptanceMatrix,
    config: SurrogateConfig,
    rng: np.random.Generator | None = None,
) -> AcceptanceMatrix:
    """Selector-visible estimate of ``truth``.

    With ``noise="none"`` or ``sigma == 0`` the truth is returned exactly.
    Otherwise each entry is perturbed on the logit scale by N(0, sigma^2)
    and mapped back, clamped to [SURROGATE_CLAMP, 1 - SURROGATE_CLAMP].
    """
    if config.noise == "none" or config.sigma == 0.0:
        return truth
    if rng is None:
        rng = np.random.default_rng(config.seed)
    eps = SURROGATE_CLAMP
    rows = []
    for row in truth.rows:
        p = np.clip(np.asarray(row, dtype=np.float64), eps, 1.0 - eps)
        z = np.log(p / (1.0 - p)) + rng.normal(0.0, config.sigma, size=p.size)
        q = 1.0 / (1.0 + np.exp(-z))
        rows.append(np.clip(q, eps, 1.0 - eps).tolist())
    return AcceptanceMatrix.from_rows(rows)


# ---------------------------------------------------------------------------
# token level
# ---------------------------------------------------------------------------


class TokenDistribution:
    """Probability vector over a finite token vocabulary."""

    __slots__ = ("probs",)

    def __init__(self, probs: Sequence[float] | np.ndarray) -> None:
        arr = np.array(probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("distribution must be a non-empty 1-d vector")
        if np.any(arr < 0.0):
            raise ValueError("distribution entries must be >= 0")
        total = float(arr.sum())
        if not math.isclose(total, 1.0, rel_tol=0.0, abs_tol=1e-9):
            raise ValueError(f"distribution sums to {total!r}, expected 1 within 1e-9")
        arr.setflags(write=False)
        self.probs = arr

    @property
    def vocab_size(self) -> int:
        return int(self.probs.size)


def _check_pair(p_draft: TokenDistribution, p_target: TokenDistribution) -> None:
    if p_draft.vocab_size != p_target.vocab_size:
        raise ValueError(
            f"vocabulary mismatch: draft {p_draft.vocab_size} vs target {p_target.vocab_size}"
        )


def verify_token(
    p_draft: TokenDistribution,
    p_target: TokenDistribution,
    token: int,
    u: float,
) -> bool:
    """Exact accept/reject decision for one drafted token.

    The draft ``token`` is accepted outright when the target assigns it at
    least as much mass as the draft model did; otherwise it survives only
    when the uniform draw ``u`` falls below the ratio of the two masses.
    Returns True when accepted.
    """
    _check_pair(p_draft, p_target)
    if not 0 <= token < p_draft.vocab_size:
        raise ValueError(f"token {token} outside vocabulary of size {p_draft.vocab_size}")
    if not 0.0 <= u < 1.0:
        raise ValueError(f"u must lie in [0, 1), got {u!r}")
    s = float(p_draft.probs[token])
    m = float(p_target.probs[token])
    if s <= m:
        return True
    return u < m / s  # here s > m >= 0, so s > 0


def residual_distribution(
    p_draft: TokenDistribution, p_target: TokenDistribution
) -> TokenDistribution:
    """Renormalized positive part of (target - draft), sampled after a rejection."""
    _check_pair(p_draft, p_target)
    diff = np.clip(p_target.probs - p_draft.probs, 0.0, None)
    mass = float(diff.sum())
    if mass <= 0.0:
        raise DegenerateResidualError(
            "target never rejects the draft; there is no residual to sample"
        )
    return TokenDistribution(diff / mass)


def implied_acceptance_prob(
    p_draft: TokenDistribution, p_target: TokenDistribution
) -> float:
    """Marginal probability that a token drafted from ``p_draft`` is accepted."""
    _check_pair(p_draft, p_target)
    total = float(np.minimum(p_draft.probs, p_target.probs).sum())
    return min(1.0, max(0.0, total))


def emitted_law(
    p_draft: TokenDistribution, p_target: TokenDistribution
) -> TokenDistribution:
    """Exact law of the token emitted by draft -> verify -> residual resampling.

    Computed by enumeration of the mechanism, not by assuming the lossless
    property: per-token accepted mass min(draft, target), plus the total
    rejected mass routed through the residual distribution.
    """
    _check_pair(p_draft, p_target)
    accept_mass = np.minimum(p_draft.probs, p_target.probs)
    reject_total = 1.0 - float(accept_mass.sum())
    if reject_total <= 0.0:
        return TokenDistribution(accept_mass)
    residual = residual_distribution(p_draft, p_target)
    return TokenDistribution(accept_mass + reject_total * residual.probs)


def sample_emitted_token(
    p_draft: TokenDistribution,
    p_target: TokenDistribution,
    rng: np.random.Generator,
) -> tuple[int, bool]:
    """One Monte Carlo pass through the chain; returns (token, was_accepted)."""
    _check_pair(p_draft, p_target)
    token = int(rng.choice(p_draft.vocab_size, p=p_draft.probs))
    if verify_token(p_draft, p_target, token, float(rng.random())):
        return token, True
    residual = residual_distribution(p_draft, p_target)
    return int(rng.choice(residual.vocab_size, p=residual.probs)), False
