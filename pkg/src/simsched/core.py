"""Stochastic-system interface, trajectory recording, budget accounting, and
the generic run loop shared by every optimizer.

Minimization is the canonical direction everywhere; wrap maximization systems
with :func:`negated` at ingestion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BudgetExceeded,
    EmptyTrajectory,
    InvalidInput,
    StateMismatch,
    UnknownAlgorithm,
)
from .rng import stream

# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass
class DecisionVector:
    """A point in the decision space with its box bounds and integrality flags."""

    values: np.ndarray
    bounds: np.ndarray  # shape (d, 2), closed intervals
    integrality: np.ndarray  # shape (d,), bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.bounds = np.asarray(self.bounds, dtype=float)
        self.integrality = np.asarray(self.integrality, dtype=bool)
        d = self.values.shape[0]
        if self.bounds.shape != (d, 2) or self.integrality.shape != (d,):
            raise InvalidInput("decision vector fields have inconsistent lengths")
        if np.any(self.values < self.bounds[:, 0] - 1e-12) or np.any(
            self.values > self.bounds[:, 1] + 1e-12
        ):
            raise InvalidInput("decision values outside bounds")
        if np.any(self.integrality & (np.round(self.values) != self.values)):
            raise InvalidInput("integral coordinates must hold integers")

    @property
    def dimension(self) -> int:
        return self.values.shape[0]


@dataclass
class Observation:
    x: DecisionVector
    y: float
    step: int

    def __post_init__(self):
        if self.step < 1:
            raise InvalidInput("step index must be >= 1")


@dataclass
class Trajectory:
    """Ordered evaluation log of one optimization run."""

    observations: list[Observation] = field(default_factory=list)
    seed: int = 0
    algorithm_tag: str = ""

    def __len__(self) -> int:
        return len(self.observations)

    def ys(self) -> np.ndarray:
        return np.array([o.y for o in self.observations], dtype=float)

    def xs(self) -> np.ndarray:
        return np.array([o.x.values for o in self.observations], dtype=float)


@dataclass
class BudgetLedger:
    """Counts system evaluations against a fixed total."""

    total: int
    consumed: int = 0

    def __post_init__(self):
        if self.total < 1:
            raise InvalidInput("budget must be positive")

    @property
    def remaining(self) -> int:
        return self.total - self.consumed

    def consume(self) -> None:
        if self.consumed >= self.total:
            raise BudgetExceeded(f"budget of {self.total} evaluations exhausted")
        self.consumed += 1


class StochasticSystem:
    """Abstract noisy black-box system to be minimized.

    Subclasses provide ``dimension``, ``bounds`` (d, 2), optional
    ``integrality`` flags, a free-text ``description``, and
    ``evaluate(x, rng) -> float``.  ``evaluate`` must be total on in-bounds
    points and reproduce identical values when replayed with the same stream.
    """

    description: str = ""

    @property
    def dimension(self) -> int:
        raise NotImplementedError

    @property
    def bounds(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def integrality(self) -> np.ndarray:
        return np.zeros(self.dimension, dtype=bool)

    def evaluate(self, x: np.ndarray, rng: np.random.Generator) -> float:
        raise NotImplementedError

    def decision(self, values: Sequence[float]) -> DecisionVector:
        return DecisionVector(np.asarray(values, dtype=float), self.bounds, self.integrality)


class CountingSystem(StochasticSystem):
    """Wrapper that counts evaluations of an inner system."""

    def __init__(self, inner: StochasticSystem):
        self.inner = inner
        self.calls = 0
        self.description = inner.description

    @property
    def dimension(self) -> int:
        return self.inner.dimension

    @property
    def bounds(self) -> np.ndarray:
        return self.inner.bounds

    @property
    def integrality(self) -> np.ndarray:
        return self.inner.integrality

    def evaluate(self, x, rng):
        self.calls += 1
        return self.inner.evaluate(x, rng)


class NegatedSystem(StochasticSystem):
    """Sign-flipped view used to ingest maximization systems."""

    def __init__(self, inner: StochasticSystem):
        self.inner = inner
        self.description = inner.description

    @property
    def dimension(self) -> int:
        return self.inner.dimension

    @property
    def bounds(self) -> np.ndarray:
        return self.inner.bounds

    @property
    def integrality(self) -> np.ndarray:
        return self.inner.integrality

    def evaluate(self, x, rng):
        return -self.inner.evaluate(x, rng)


def negated(system: StochasticSystem) -> StochasticSystem:
    return NegatedSystem(system)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def project(values: np.ndarray, bounds: np.ndarray, integrality: np.ndarray) -> np.ndarray:
    """Clip to bounds, then round integral coordinates to the nearest integer."""
    out = np.clip(np.asarray(values, dtype=float), bounds[:, 0], bounds[:, 1])
    if np.any(integrality):
        out = np.where(integrality, np.round(out), out)
        out = np.clip(out, bounds[:, 0], bounds[:, 1])
    return out


def best_so_far(traj: Trajectory) -> list[float]:
    """Running minimum of the objective values along the trajectory."""
    if len(traj) == 0:
        raise EmptyTrajectory("best_so_far needs a non-empty trajectory")
    return list(np.minimum.accumulate(traj.ys()))


def record_step(traj: Trajectory, x: DecisionVector, y: float, ledger: BudgetLedger) -> Trajectory:
    """Append one observation to ``traj`` and charge the ledger."""
    ledger.consume()
    traj.observations.append(Observation(x=x, y=float(y), step=len(traj) + 1))
    return traj


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Write the `step,x1..xd,y,best_so_far` log with 9-significant-digit floats."""
    if len(traj) == 0:
        raise EmptyTrajectory("cannot write an empty trajectory")
    d = traj.observations[0].x.dimension
    best = best_so_far(traj)
    lines = ["step," + ",".join(f"x{i + 1}" for i in range(d)) + ",y,best_so_far"]
    for obs, b in zip(traj.observations, best):
        cells = [str(obs.step)]
        cells += [format(v, ".9g") for v in obs.x.values]
        cells += [format(obs.y, ".9g"), format(b, ".9g")]
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Generic run loop
# ---------------------------------------------------------------------------


@dataclass
class AlgoState:
    """Warm-start handoff state: everything a successor segment may need."""

    family: str
    dimension: int
    xs: list[np.ndarray] = field(default_factory=list)
    ys: list[float] = field(default_factory=list)
    extras: dict = field(default_factory=dict)  # population/swarm/hyperparameters

    def incumbent(self) -> tuple[np.ndarray, float]:
        if not self.ys:
            raise InvalidInput("state holds no evaluations")
        i = int(np.argmin(self.ys))
        return self.xs[i], self.ys[i]


class RunContext:
    """What a driver sees: bounds, an evaluator, budget status, and its stream.

    ``evaluate`` projects proposals into the feasible box (rounding integral
    coordinates) before calling the system, records the step, and returns the
    noisy objective value.  ``xs``/``ys`` accumulate prior-segment history
    plus everything evaluated so far in this run.
    """

    def __init__(self, system, traj, ledger, segment_budget, rng, prior_xs, prior_ys, sys_rng):
        self.system = system
        self.bounds = system.bounds
        self.integrality = system.integrality
        self.rng = rng
        self.xs: list[np.ndarray] = list(prior_xs)
        self.ys: list[float] = list(prior_ys)
        self._traj = traj
        self._ledger = ledger
        self._sys_rng = sys_rng
        self._left = segment_budget

    @property
    def dimension(self) -> int:
        return self.system.dimension

    def remaining(self) -> int:
        return min(self._left, self._ledger.remaining)

    def evaluate(self, values: np.ndarray) -> float:
        if self.remaining() <= 0:
            raise BudgetExceeded("segment budget exhausted")
        xp = project(values, self.bounds, self.integrality)
        y = float(self.system.evaluate(xp, self._sys_rng))
        dv = DecisionVector(xp, self.bounds, self.integrality)
        record_step(self._traj, dv, y, self._ledger)
        self._left -= 1
        self.xs.append(xp)
        self.ys.append(y)
        return y

    def uniform_point(self) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return lo + self.rng.random(self.dimension) * (hi - lo)


# Registry of algorithm drivers.  A driver is `f(ctx, init_state) -> AlgoState`.
_REGISTRY: dict[str, Callable] = {}


def register_algorithm(algo_id: str, driver: Callable) -> None:
    _REGISTRY[algo_id.upper()] = driver


def algorithm_ids() -> list[str]:
    return sorted(_REGISTRY)


def get_driver(algo_id: str) -> Callable:
    key = algo_id.upper()
    if key not in _REGISTRY:
        raise UnknownAlgorithm(f"no algorithm registered under {algo_id!r}")
    return _REGISTRY[key]


def _run_segment(system, algo_id, budget, seed, init, traj, ledger):
    driver = get_driver(algo_id)
    if init is not None and init.dimension != system.dimension:
        raise StateMismatch(
            f"handoff state has dimension {init.dimension}, system needs {system.dimension}"
        )
    prior_xs = init.xs if init is not None else []
    prior_ys = init.ys if init is not None else []
    ctx = RunContext(
        system,
        traj,
        ledger,
        budget,
        rng=stream(seed, "algo"),
        prior_xs=prior_xs,
        prior_ys=prior_ys,
        sys_rng=stream(seed, "system"),
    )
    state = driver(ctx, init)
    state.dimension = system.dimension
    state.xs = list(ctx.xs)
    state.ys = list(ctx.ys)
    return state


def run_algorithm(
    system: StochasticSystem,
    algo_id: str,
    budget: int,
    seed: int,
    init: AlgoState | None = None,
) -> tuple[Trajectory, AlgoState]:
    """Run one algorithm for exactly ``budget`` evaluations.

    The returned state warm-starts a successor segment: it carries all
    evaluated points (including any inherited from ``init``), the incumbent,
    and family-specific extras such as a population or swarm.
    """
    if budget < 1:
        raise InvalidInput("budget must be >= 1")
    traj = Trajectory(seed=seed, algorithm_tag=algo_id.upper())
    ledger = BudgetLedger(total=budget)
    state = _run_segment(system, algo_id, budget, seed, init, traj, ledger)
    return traj, state
