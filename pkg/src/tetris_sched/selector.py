"""Draft-token selection policies under a hard verification capacity.

Given per-request candidate tokens scored by their cumulative acceptance
probability, these policies decide which prefix of each request's draft to
send for verification.  ``select_tetris`` is the greedy priority-queue
policy; ``select_fixed_window`` and ``select_dsd`` are the baselines; and
``select_oracle`` is a brute-force enumerator over all prefix-closed
selections, kept deliberately independent so the greedy result can be
checked against ground truth.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Sequence

from .accept_model import AcceptanceMatrix

# Brute-force enumeration is refused above this many candidate cells.
ORACLE_MAX_CELLS = 24


class CapacityExceededError(ValueError):
    """A fixed-window request does not fit into the verification budget."""


class OracleSizeExceededError(ValueError):
    """Instance too large for exhaustive enumeration."""


@dataclass(frozen=True)
class Candidate:
    """One draftable token: request ``row``, 1-based ``depth``, and the
    cumulative probability that it and its whole prefix are accepted."""

    row: int
    depth: int
    cum: float


@dataclass(frozen=True)
class Selection:
    """A prefix-closed set of candidates, stored as per-row window sizes.

    ``windows[i] = k`` means depths 1..k of row i are selected.  Storing
    windows makes prefix closure structural; ``from_pairs`` validates it for
    selections arriving as explicit (row, depth) sets.
    """

    windows: tuple[int, ...]

    def __post_init__(self) -> None:
        for i, w in enumerate(self.windows):
            if w < 0:
                raise ValueError(f"window for row {i} is negative: {w}")

    @property
    def size(self) -> int:
        return sum(self.windows)

    def pairs(self) -> set[tuple[int, int]]:
        return {(i, j) for i, w in enumerate(self.windows) for j in range(1, w + 1)}

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[int, int]], n_rows: int) -> "Selection":
        windows = [0] * n_rows
        seen = set(map(tuple, pairs))
        for i, j in seen:
            if not 0 <= i < n_rows:
                raise ValueError(f"row {i} outside 0..{n_rows - 1}")
            if j < 1:
                raise ValueError(f"depth {j} must be >= 1")
            windows[i] = max(windows[i], j)
        for i, w in enumerate(windows):
            for j in range(1, w + 1):
                if (i, j) not in seen:
                    raise ValueError(
                        f"selection is not prefix-closed: row {i} has depth {w} "
                        f"but is missing depth {j}"
                    )
        return cls(tuple(windows))


@dataclass(frozen=True)
class PolicyStats:
    """Priority-queue accounting for one ``select_tetris`` call."""

    extracts: int
    inserts: int
    peak_queue: int
    comparisons: int


def cumulative_products(probs: AcceptanceMatrix) -> list[list[Candidate]]:
    """Per-row candidates scored by the running product of acceptance rates.

    The score of depth j is ``prod_{t<=j} alpha[i][t]`` -- the probability
    that the token at depth j is accepted together with its entire prefix.
    Row order and depth order are preserved.
    """
    out: list[list[Candidate]] = []
    for i, row in enumerate(probs.rows):
        cum = 1.0
        cands = []
        for j, alpha in enumerate(row, start=1):
            cum *= alpha
            cands.append(Candidate(row=i, depth=j, cum=cum))
        out.append(cands)
    return out


class _HeapItem:
    """Max-heap entry ordered by (cum desc, row asc, depth asc).

    Comparisons are counted through a shared cell so heap work can be
    measured; heapq only ever calls ``<``.
    """

    __slots__ = ("key", "row", "depth", "counter")

    def __init__(self, cum: float, row: int, depth: int, counter: list[int]) -> None:
        self.key = (-cum, row, depth)
        self.row = row
        self.depth = depth
        self.counter = counter

    def __lt__(self, other: "_HeapItem") -> bool:
        self.counter[0] += 1
        return self.key < other.key


def select_tetris(
    candidates: Sequence[Sequence[Candidate]], capacity: int
) -> tuple[Selection, PolicyStats]:
    """Greedy capacity filling by cumulative acceptance probability.

    A max-heap starts with each row's depth-1 candidate.  Repeatedly the
    candidate with the highest cumulative probability is taken (ties broken
    by lower row index, then lower depth) and its within-row successor is
    offered, until ``capacity`` tokens are taken or candidates run out.
    Because scores never increase with depth, what is taken is always
    prefix-closed, and the queue never grows beyond the number of rows.
    """
    if capacity < 0:
        raise ValueError(f"capacity must be >= 0, got {capacity}")
    n = len(candidates)
    windows = [0] * n
    counter = [0]
    extracts = inserts = peak = 0
    if capacity > 0:
        heap = [
            _HeapItem(row[0].cum, i, 1, counter)
            for i, row in enumerate(candidates)
            if row
        ]
        heapq.heapify(heap)
        inserts = len(heap)
        peak = len(heap)
        while heap and extracts < capacity:
            item = heapq.heappop(heap)
            extracts += 1
            i, j = item.row, item.depth
            windows[i] = j
            if j < len(candidates[i]):
                heapq.heappush(
                    heap, _HeapItem(candidates[i][j].cum, i, j + 1, counter)
                )
                inserts += 1
                peak = max(peak, len(heap))
    return (
        Selection(tuple(windows)),
        PolicyStats(
            extracts=extracts, inserts=inserts, peak_queue=peak, comparisons=counter[0]
        ),
    )


def select_fixed_window(n_rows: int, window: int, capacity: int) -> Selection:
    """Classic batched speculation: every row sends the same ``window`` tokens."""
    if n_rows < 1:
        raise ValueError(f"n_rows must be >= 1, got {n_rows}")
    if window < 0:
        raise ValueError(f"window must be >= 0, got {window}")
    if n_rows * window > capacity:
        raise CapacityExceededError(
            f"{n_rows} rows x window {window} = {n_rows * window} tokens "
            f"exceeds capacity {capacity}"
        )
    return Selection((window,) * n_rows)


def select_dsd(
    alpha_estimate: float, n_rows: int, capacity: int, depth_limit: int
) -> Selection:
    """Adaptive common window from a scalar acceptance-rate estimate.

    Picks the window k in [1, min(depth_limit, capacity // n_rows)] that
    maximizes the expected accepted tokens per row under a constant-rate
    model, sum_{j<=k} alpha^j, with ties resolved toward the smaller k.
    """
    if not 0.0 <= alpha_estimate <= 1.0:
        raise ValueError(f"alpha_estimate {alpha_estimate!r} outside [0, 1]")
    if n_rows < 1:
        raise ValueError(f"n_rows must be >= 1, got {n_rows}")
    if depth_limit < 1:
        raise ValueError(f"depth_limit must be >= 1, got {depth_limit}")
    k_max = min(depth_limit, capacity // n_rows)
    if k_max < 1:
        # capacity cannot fit one token per row; send nothing
        return Selection((0,) * n_rows)
    best_k = 1
    best_value = alpha_estimate
    value = alpha_estimate
    power = alpha_estimate
    for k in range(2, k_max + 1):
        power *= alpha_estimate
        value += power
        if value > best_value:
            best_value = value
            best_k = k
    return Selection((best_k,) * n_rows)


def select_oracle(
    candidates: Sequence[Sequence[Candidate]], capacity: int
) -> Selection:
    """Exhaustive maximizer over prefix-closed selections (ground truth).

    Enumerates every per-row window vector whose sizes sum to
    ``min(capacity, total candidates)`` and returns the one with the largest
    sum of cumulative probabilities; exact ties go to the lexicographically
    smallest window vector.  Refuses instances with more than
    ``ORACLE_MAX_CELLS`` candidate cells.
    """
    if capacity < 0:
        raise ValueError(f"capacity must be >= 0, got {capacity}")
    n = len(candidates)
    depths = [len(row) for row in candidates]
    total = sum(depths)
    if total > ORACLE_MAX_CELLS:
        raise OracleSizeExceededError(
            f"instance has {total} candidate cells; enumeration is limited to "
            f"{ORACLE_MAX_CELLS}"
        )
    target = min(capacity, total)
    if target == 0 or n == 0:
        return Selection((0,) * n)

    # prefix[i][k] = value of taking the first k candidates of row i
    prefix: list[list[float]] = []
    for row in candidates:
        acc = [0.0]
        for cand in row:
            acc.append(acc[-1] + cand.cum)
        prefix.append(acc)
    # suffix_room[i] = how many candidates rows i..n-1 can still absorb
    suffix_room = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix_room[i] = suffix_room[i + 1] + depths[i]

    best_value = -1.0
    best_windows: tuple[int, ...] = ()
    chosen = [0] * n

    def explore(i: int, remaining: int, value: float) -> None:
        nonlocal best_value, best_windows
        if i == n:
            # feasibility pruning guarantees remaining == 0 here; strict
            # improvement keeps the first (lexicographically smallest) optimum
            if value > best_value:
                best_value = value
                best_windows = tuple(chosen)
            return
        low = max(0, remaining - suffix_room[i + 1])
        high = min(depths[i], remaining)
        for k in range(low, high + 1):
            chosen[i] = k
            explore(i + 1, remaining - k, value + prefix[i][k])
        chosen[i] = 0

    explore(0, target, 0.0)
    return Selection(best_windows)


def expected_accepted(selection: Selection, probs: AcceptanceMatrix) -> float:
    """Expected number of accepted draft tokens under ``selection``.

    Sum over selected cells of the cumulative acceptance probability; a
    token only counts when its entire prefix survives.
    """
    if len(selection.windows) != probs.n_rows:
        raise ValueError(
            f"selection covers {len(selection.windows)} rows, matrix has {probs.n_rows}"
        )
    value = 0.0
    for window, row in zip(selection.windows, probs.rows):
        if window > len(row):
            raise ValueError(
                f"selection window {window} deeper than row of depth {len(row)}"
            )
        cum = 1.0
        for alpha in row[:window]:
            cum *= alpha
            value += cum
    return value
