"""Phased execution plans: an ordered list of (algorithm, budget) segments
whose budgets sum to the total evaluation budget, executed with warm state
handoff between segments.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .core import (
    AlgoState,
    BudgetLedger,
    StochasticSystem,
    Trajectory,
    _run_segment,
    get_driver,
)
from .errors import InvalidInput
from .rng import child_seed

_SEGMENT_RE = re.compile(r"^\s*([A-Za-z][A-Za-z0-9_-]*)\s*\(\s*(\d+)\s*\)\s*$")


@dataclass
class Schedule:
    """Ordered (algorithm_id, budget) segments."""

    segments: list[tuple[str, int]]

    def __post_init__(self):
        if not self.segments:
            raise InvalidInput("a schedule needs at least one segment")
        self.segments = [(a.upper(), int(t)) for a, t in self.segments]
        if any(t < 1 for _, t in self.segments):
            raise InvalidInput("every segment budget must be >= 1")

    @property
    def total(self) -> int:
        return sum(t for _, t in self.segments)

    def __str__(self) -> str:
        return format_schedule(self)

    def __eq__(self, other) -> bool:
        return isinstance(other, Schedule) and self.segments == other.segments


def format_schedule(schedule: Schedule) -> str:
    return "->".join(f"{a}({t})" for a, t in schedule.segments)


def parse_schedule(text: str) -> Schedule:
    """Parse the ``ALGO(T)->ALGO(T)`` notation, case-insensitively."""
    parts = text.strip().split("->")
    segments = []
    for part in parts:
        m = _SEGMENT_RE.match(part)
        if m is None:
            raise InvalidInput(f"cannot parse schedule segment {part!r}")
        segments.append((m.group(1).upper(), int(m.group(2))))
    return Schedule(segments)


def segment_seed(seed: int, index: int) -> int:
    """Per-segment stream derivation; segment 0 reuses the run seed so a
    single-segment schedule bit-matches the standalone run."""
    return seed if index == 0 else child_seed(seed, "segment", index)


def execute_schedule(
    system: StochasticSystem,
    schedule: Schedule,
    seed: int,
    handoff: str = "warm",
    init: AlgoState | None = None,
) -> tuple[Trajectory, AlgoState]:
    """Run the segments in order for exactly ``schedule.total`` evaluations.

    With warm handoff (the default) each segment's driver receives the
    accumulated state: prior evaluations warm-start the surrogate, seed the
    population, or place a particle at the incumbent, per driver.
    """
    if handoff not in ("warm", "cold"):
        raise InvalidInput("handoff must be 'warm' or 'cold'")
    for algo_id, _ in schedule.segments:
        get_driver(algo_id)  # fail fast on unknown algorithms

    traj = Trajectory(seed=seed, algorithm_tag=format_schedule(schedule))
    ledger = BudgetLedger(total=schedule.total)
    state = init
    for j, (algo_id, t_j) in enumerate(schedule.segments):
        seg_init = state if handoff == "warm" else None
        state = _run_segment(
            system, algo_id, t_j, segment_seed(seed, j), seg_init, traj, ledger
        )
    assert state is not None
    return traj, state
