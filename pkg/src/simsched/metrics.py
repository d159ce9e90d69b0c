"""Normalized trajectory metrics, their convex-combination score, and the
importance-weighted evaluation of a schedule across ensemble points.

All four metrics land in [0, 1] by construction and are computed for
minimization on the trajectory being scored.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import Trajectory, best_so_far
from .errors import InvalidInput, MissingReference
from .rng import child_seed
from .schedule import Schedule, execute_schedule

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = (0.4, 0.3, 0.15, 0.15)
DEFAULT_MULTIPLIER = 10
DEFAULT_EPS = 1e-9
METRIC_NAMES = ("i_final", "auc_any", "mu_raw", "sigma_osc")


# ---------------------------------------------------------------------------
# Per-trajectory metrics
# ---------------------------------------------------------------------------


def robust_range(traj: Trajectory | np.ndarray) -> float:
    """Inter-quantile spread q_0.9 - q_0.1 of the raw objective values,
    using linear interpolation between order statistics."""
    ys = traj.ys() if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    if ys.size < 2:
        raise InvalidInput("robust_range needs at least two observations")
    return float(np.quantile(ys, 0.9) - np.quantile(ys, 0.1))


def delta_star(traj: Trajectory | np.ndarray, y_star: float, eps: float = DEFAULT_EPS) -> float:
    """Normalization scale: max(initial gap to the reference, robust range) + eps."""
    if eps <= 0:
        raise InvalidInput("eps must be positive")
    ys = traj.ys() if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    b1 = float(ys[0])
    return max(abs(b1 - y_star), robust_range(ys)) + eps


@dataclass
class MetricVector:
    i_final: float
    auc_any: float
    mu_raw: float
    sigma_osc: float

    def as_array(self) -> np.ndarray:
        return np.array([self.i_final, self.auc_any, self.mu_raw, self.sigma_osc])

    def to_list(self) -> list[float]:
        return [float(v) for v in self.as_array()]


def compute_metrics(
    traj: Trajectory | np.ndarray,
    y_star: float,
    xi: float = 0.0,
    eps: float = DEFAULT_EPS,
) -> MetricVector:
    """The four normalized metrics of one trajectory.

    i_final   - clipped net improvement of the final incumbent
    auc_any   - time-averaged clipped incumbent improvement (earlier = better)
    mu_raw    - fraction of non-worsening raw steps (tolerance xi)
    sigma_osc - one minus the normalized overshoot above the incumbent
    """
    if xi < 0:
        raise InvalidInput("xi must be non-negative")
    ys = traj.ys() if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    T = ys.size
    if T < 2:
        raise InvalidInput("metrics need at least two observations")
    b = np.minimum.accumulate(ys)
    d_star = delta_star(ys, y_star, eps)

    gain = np.clip((b[0] - b) / d_star, 0.0, 1.0)
    i_final = float(gain[-1])
    auc_any = float(np.mean(gain[1:]))
    mu_raw = float(np.mean(ys[1:] <= ys[:-1] + xi))
    overshoot = np.maximum(ys[1:] - b[:-1], 0.0).sum()
    sigma_osc = 1.0 - min(1.0, float(overshoot) / ((T - 1) * d_star))
    return MetricVector(i_final, auc_any, mu_raw, float(np.clip(sigma_osc, 0.0, 1.0)))


def check_metric_weights(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 1 or lam.size != 4:
        raise InvalidInput("metric weights must be a length-4 vector")
    if np.any(lam < 0) or abs(float(lam.sum()) - 1.0) > 1e-9:
        raise InvalidInput("metric weights must be a convex combination")
    return lam


def score(u: MetricVector, lam=DEFAULT_LAMBDA) -> float:
    """Convex combination of the four metrics; lands in [0, 1]."""
    lam = check_metric_weights(lam)
    return float(lam @ u.as_array())


# ---------------------------------------------------------------------------
# Reference optima
# ---------------------------------------------------------------------------


@dataclass
class ReferenceBank:
    """Cache of one-time heavy reference optima, keyed by point id,
    budget multiplier, and the dedicated reference seed."""

    values: dict[tuple[int, int, int], float] = field(default_factory=dict)
    algorithm: str = "BO-EI"

    def key(self, point_id: int, multiplier: int, seed: int):
        return (int(point_id), int(multiplier), int(seed))

    def get(self, point_id: int, multiplier: int, seed: int) -> float:
        k = self.key(point_id, multiplier, seed)
        if k not in self.values:
            raise MissingReference(f"no reference optimum cached for point {point_id}")
        return self.values[k]

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "values": [[list(k), v] for k, v in sorted(self.values.items())],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ReferenceBank":
        bank = cls(algorithm=doc.get("algorithm", "BO-EI"))
        bank.values = {tuple(k): float(v) for k, v in doc["values"]}
        return bank


def heavy_reference(
    system,
    point_id: int,
    base_budget: int,
    multiplier: int = DEFAULT_MULTIPLIER,
    seed: int = 0,
    bank: ReferenceBank | None = None,
    algorithm: str | None = None,
) -> float:
    """Best value found by a long (multiplier x budget) run; cached per point.

    Reference runs use a dedicated seed stream separate from evaluation
    seeds, so scoring runs never share randomness with their normalizer.
    """
    if multiplier < 1:
        raise InvalidInput("multiplier must be >= 1")
    bank = bank if bank is not None else ReferenceBank()
    key = bank.key(point_id, multiplier, seed)
    if key in bank.values:
        return bank.values[key]
    algo = algorithm or bank.algorithm
    ref_seed = child_seed(seed, "reference", point_id)
    traj, _ = execute_schedule(system, Schedule([(algo, multiplier * base_budget)]), ref_seed)
    value = float(best_so_far(traj)[-1])
    bank.values[key] = value
    return value


# ---------------------------------------------------------------------------
# Weighted schedule scoring across ensemble points
# ---------------------------------------------------------------------------


@dataclass
class PointSystem:
    """An ensemble point bound to its mixture system and importance weight."""

    point_id: int
    system: object
    omega: float


@dataclass
class SeedPolicy:
    """Derives per-point evaluation seeds (shared by every candidate schedule,
    giving common random numbers across comparisons)."""

    base_seed: int = 0

    def eval_seed(self, point_id: int) -> int:
        return child_seed(self.base_seed, "eval-point", point_id)

    def reference_seed(self) -> int:
        return child_seed(self.base_seed, "reference-runs")


@dataclass
class ScoreResult:
    S: float
    per_point: list[dict]
    trajectories: dict[int, Trajectory]


def _run_one_point(args):
    schedule, point, seed = args
    traj, _ = execute_schedule(point.system, schedule, seed)
    return point.point_id, traj


def score_and_log(
    schedule: Schedule,
    split: list[PointSystem],
    budget: int,
    lam=DEFAULT_LAMBDA,
    refs: ReferenceBank | None = None,
    seeds: SeedPolicy | None = None,
    multiplier: int = DEFAULT_MULTIPLIER,
    xi: float = 0.0,
    jobs: int = 1,
) -> ScoreResult:
    """Run ``schedule`` on every point of the split, compute each metric
    vector, and aggregate the importance-weighted mean score.

    Returns the full trajectories as well so a revision operator can inspect
    them.  Point runs are independent; with ``jobs > 1`` they fan out to a
    process pool and are aggregated in point-id order either way.
    """
    if not split:
        raise InvalidInput("split must be non-empty")
    if schedule.total != budget:
        raise InvalidInput(f"schedule consumes {schedule.total}, expected {budget}")
    lam = check_metric_weights(lam)
    seeds = seeds or SeedPolicy()
    refs = refs if refs is not None else ReferenceBank()
    ref_seed = seeds.reference_seed()

    tasks = [(schedule, p, seeds.eval_seed(p.point_id)) for p in split]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_run_one_point, tasks))
    else:
        results = dict(_run_one_point(t) for t in tasks)

    per_point = []
    num = den = 0.0
    trajectories: dict[int, Trajectory] = {}
    for p in sorted(split, key=lambda q: q.point_id):
        y_star = refs.get(p.point_id, multiplier, ref_seed)
        traj = results[p.point_id]
        u = compute_metrics(traj, y_star, xi=xi)
        s = score(u, lam)
        per_point.append({"id": p.point_id, "u": u.to_list(), "s": s, "omega": p.omega})
        num += p.omega * s
        den += p.omega
        trajectories[p.point_id] = traj
    return ScoreResult(S=num / den, per_point=per_point, trajectories=trajectories)


def ensure_references(
    split: list[PointSystem],
    budget: int,
    refs: ReferenceBank,
    seeds: SeedPolicy,
    multiplier: int = DEFAULT_MULTIPLIER,
) -> ReferenceBank:
    """Compute any missing heavy reference optima for the given points."""
    ref_seed = seeds.reference_seed()
    for p in split:
        heavy_reference(
            p.system, p.point_id, budget, multiplier=multiplier, seed=ref_seed, bank=refs
        )
    return refs


def metrics_report(schedule: Schedule, result: ScoreResult) -> dict:
    """JSON-ready digest of one scored evaluation."""
    return {
        "schedule": str(schedule),
        "S": result.S,
        "per_point": result.per_point,
    }


def save_metrics_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, sort_keys=True)
        fh.write("\n")
