"""Top-K replica ensembles and the weighted meta-dataset built around the
optimal mixture weight: Dirichlet-ladder sampling, importance weights, and
the weighted stratified train/validation/test split.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import StochasticSystem
from .errors import InvalidInput, InvalidK

SCHEMA_VERSION = "1.0"

DEFAULT_PARAMS = {
    "L": 4,  # Dirichlet mixture components
    "tau_min": 5.0,  # smallest concentration on the ladder
    "rho": 3.0,  # ladder growth factor
    "delta": 0.02,  # simplex floor inside the concentration vector
    "alpha": 1.0,  # closeness exponent
    "beta": 1.0,  # fidelity exponent
    "eps": 1e-6,  # numerical stabilizer
    "strata": 3,
    "M": 60,
    "ratios": (0.7, 0.15, 0.15),
}


def check_simplex(w, tol: float = 1e-9) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidInput("weights must be a non-empty vector")
    if np.any(w < -tol) or abs(float(w.sum()) - 1.0) > tol:
        raise InvalidInput("weights must be non-negative and sum to 1")
    return w


# ---------------------------------------------------------------------------
# Replica sets and optimal mixture weights
# ---------------------------------------------------------------------------


@dataclass
class ReplicaSet:
    """Learned models paired with their held-out test errors."""

    members: list[tuple[object, float]]

    def __post_init__(self):
        if not self.members:
            raise InvalidInput("a replica set needs at least one member")
        if any(m[1] < 0 for m in self.members):
            raise InvalidInput("member errors must be non-negative")

    @property
    def mses(self) -> list[float]:
        return [m[1] for m in self.members]

    def __len__(self) -> int:
        return len(self.members)


def select_top_k(rset: ReplicaSet, k: int) -> ReplicaSet:
    """Keep the ``k`` lowest-error members, ascending; ties keep insertion order."""
    if not 1 <= k <= len(rset):
        raise InvalidK(f"k must be in [1, {len(rset)}], got {k}")
    order = sorted(range(len(rset)), key=lambda i: (rset.members[i][1], i))
    return ReplicaSet([rset.members[i] for i in order[:k]])


def optimal_weights(mses, eps: float = 1e-6) -> np.ndarray:
    """Inverse-error mixture weights: w_k proportional to 1/(mse_k + eps)."""
    mses = np.asarray(mses, dtype=float)
    if mses.size == 0:
        raise InvalidInput("need at least one error value")
    if eps < 0 or np.any(mses + eps <= 0):
        raise InvalidInput("errors plus stabilizer must be positive")
    raw = 1.0 / (mses + eps)
    return raw / raw.sum()


class EnsembleSystem(StochasticSystem):
    """Convex mixture of member systems, itself a stochastic system.

    Each member is evaluated with its own child stream spawned from the
    caller's generator, so mixture evaluations stay reproducible and a
    weight-1 vertex reproduces the member's own draw exactly.
    """

    def __init__(self, members, weights, bounds, integrality=None, description=""):
        self.members = list(members)
        self.weights = check_simplex(weights)
        if len(self.members) != self.weights.size:
            raise InvalidInput("one weight per member required")
        self._bounds = np.asarray(bounds, dtype=float)
        d = self._bounds.shape[0]
        self._integrality = (
            np.zeros(d, dtype=bool) if integrality is None else np.asarray(integrality, bool)
        )
        self.description = description

    @property
    def dimension(self) -> int:
        return self._bounds.shape[0]

    @property
    def bounds(self) -> np.ndarray:
        return self._bounds

    @property
    def integrality(self) -> np.ndarray:
        return self._integrality

    def evaluate(self, x, rng):
        streams = rng.spawn(len(self.members))
        total = 0.0
        for w, member, child in zip(self.weights, self.members, streams):
            total += w * member.evaluate(x, child)
        return float(total)


def ensemble_predict(rset: ReplicaSet, weights, x, rng, bounds=None) -> float:
    """Weighted mixture prediction at ``x``; see :class:`EnsembleSystem`."""
    from .replica import ReplicaSystem  # local import to avoid a cycle

    w = check_simplex(weights)
    if len(w) != len(rset):
        raise InvalidInput("one weight per member required")
    x = np.asarray(x, dtype=float)
    if bounds is None:
        bounds = np.column_stack([x, x])
    systems = [ReplicaSystem(m, bounds) for m, _ in rset.members]
    return EnsembleSystem(systems, w, bounds).evaluate(x, rng)


# ---------------------------------------------------------------------------
# Sampling, closeness, and importance weights
# ---------------------------------------------------------------------------


def sample_weights(
    w_star,
    L: int = 4,
    tau_min: float = 5.0,
    rho: float = 3.0,
    delta: float = 0.02,
    M: int = 60,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Draw ``M`` mixture weights from a geometric ladder of Dirichlets.

    Component ``l`` (chosen uniformly) uses concentration
    ``tau_min * rho**(l-1) * ((1 - delta*K) * w_star + delta)``; small ladder
    rungs explore the simplex broadly, large rungs stay near ``w_star``.
    """
    w_star = check_simplex(w_star)
    K = w_star.size
    if not 0 < delta < 1.0 / K:
        raise InvalidInput("delta must lie in (0, 1/K)")
    if rho <= 1 or tau_min <= 0 or L < 1 or M < 1:
        raise InvalidInput("need rho > 1, tau_min > 0, L >= 1, M >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    base = (1.0 - delta * K) * w_star + delta
    taus = tau_min * rho ** np.arange(L)
    out = np.empty((M, K))
    picks = rng.integers(0, L, size=M)
    for m in range(M):
        w = rng.dirichlet(taus[picks[m]] * base)
        out[m] = w / w.sum()
    return out


def dirichlet_concentration(w_star, tau: float, delta: float) -> np.ndarray:
    """The ladder's concentration vector for one rung (exposed for tests)."""
    w_star = check_simplex(w_star)
    return tau * ((1.0 - delta * w_star.size) * w_star + delta)


def kl_divergence(w, w_star, floor: float | None = None) -> float:
    """KL(w || w_star) on the simplex.

    Zero entries of ``w`` contribute nothing; a zero entry of ``w_star``
    opposite positive mass is floored (default ``delta/10`` of the sampler
    default) instead of producing infinity.  The result is clamped at zero
    because flooring can introduce a negligible negative residue.
    """
    w = check_simplex(w)
    q = check_simplex(w_star)
    if w.size != q.size:
        raise InvalidInput("weight vectors must have the same length")
    if floor is None:
        floor = DEFAULT_PARAMS["delta"] / 10.0
    total = 0.0
    for p_k, q_k in zip(w, q):
        if p_k <= 0.0:
            continue
        total += p_k * math.log(p_k / (q_k if q_k > 0.0 else floor))
    return max(total, 0.0)


def importance_weights(kls, mse_hats, alpha: float = 1.0, beta: float = 1.0, eps: float = 1e-6):
    """Normalized point weights: exp(-alpha*D) * (mse_hat + eps)^-beta, summed to 1."""
    if alpha < 0 or beta < 0:
        raise InvalidInput("exponents must be non-negative")
    kls = np.asarray(kls, dtype=float)
    mse_hats = np.asarray(mse_hats, dtype=float)
    if kls.shape != mse_hats.shape or kls.size == 0:
        raise InvalidInput("need matching, non-empty kl and mse arrays")
    # Work in log space so extreme exponents cannot overflow.
    logz = -alpha * kls - beta * np.log(mse_hats + eps)
    logz -= logz.max()
    zeta = np.exp(logz)
    return zeta / zeta.sum()


# ---------------------------------------------------------------------------
# Meta-dataset and the weighted stratified split
# ---------------------------------------------------------------------------


@dataclass
class EnsemblePoint:
    """One meta-dataset point: a mixture weight plus its importance weight."""

    w: np.ndarray
    omega: float
    kl: float
    mse_hat: float

    def to_dict(self) -> dict:
        return {"w": list(map(float, self.w)), "omega": self.omega, "kl": self.kl,
                "mse_hat": self.mse_hat}


@dataclass
class MetaDataset:
    points: list[EnsemblePoint]
    splits: dict[str, list[int]]
    strata_cutpoints: list[float] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        m = len(self.points)
        seen = sorted(i for part in self.splits.values() for i in part)
        if seen != list(range(m)):
            raise InvalidInput("splits must partition the point indices")
        if any(
            self.strata_cutpoints[i] > self.strata_cutpoints[i + 1]
            for i in range(len(self.strata_cutpoints) - 1)
        ):
            raise InvalidInput("strata cutpoints must be non-decreasing")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "params": self.params,
            "points": [p.to_dict() for p in self.points],
            "splits": {k: list(map(int, v)) for k, v in self.splits.items()},
            "strata_cutpoints": list(map(float, self.strata_cutpoints)),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MetaDataset":
        points = [
            EnsemblePoint(np.array(p["w"], dtype=float), p["omega"], p["kl"], p["mse_hat"])
            for p in doc["points"]
        ]
        return cls(points, {k: list(v) for k, v in doc["splits"].items()},
                   list(doc.get("strata_cutpoints", [])), doc.get("params", {}))


def save_meta_dataset(ds: MetaDataset, path) -> None:
    with open(path, "w") as fh:
        json.dump(ds.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_meta_dataset(path) -> MetaDataset:
    with open(path) as fh:
        return MetaDataset.from_dict(json.load(fh))


def weighted_quantile_cutpoints(values, weights, n_strata: int) -> list[float]:
    """Thresholds d_s with cumulative weight below d_s equal to s/S of the total."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    total = cum[-1]
    cuts = []
    for s in range(1, n_strata):
        target = total * s / n_strata
        pos = int(np.searchsorted(cum, target, side="left"))
        cuts.append(float(values[order[min(pos, len(values) - 1)]]))
    return cuts


def _strata_membership(values, cuts) -> list[list[int]]:
    edges = [-np.inf, *cuts, np.inf]
    strata: list[list[int]] = [[] for _ in range(len(edges) - 1)]
    for i, v in enumerate(values):
        for s in range(len(edges) - 1):
            if edges[s] < v <= edges[s + 1] or (s == len(edges) - 2 and v > edges[s]):
                strata[s].append(i)
                break
    return strata


def _assign_stratum(indices, weights, ratios, rng, min_per_split):
    """Greedy weighted draws without replacement until each split's target
    weight is first exceeded; the remainder lands in the final split.  The
    crossing points are then shuffled between splits while that lowers the
    total absolute deviation from the targets."""
    n_splits = len(ratios)
    pool = list(indices)
    w_total = float(sum(weights[i] for i in indices))
    targets = [r * w_total for r in ratios]
    assignment: list[list[int]] = [[] for _ in range(n_splits)]
    for s in range(n_splits - 1):
        acc = 0.0
        while pool and acc <= targets[s]:
            probs = np.array([weights[i] for i in pool], dtype=float)
            if probs.sum() <= 0:
                probs = np.ones(len(pool))
            probs = probs / probs.sum()
            pick = int(rng.choice(len(pool), p=probs))
            idx = pool.pop(pick)
            assignment[s].append(idx)
            acc += weights[idx]
    assignment[-1] = pool

    def deviation(parts):
        return sum(
            abs(sum(weights[i] for i in part) - t) for part, t in zip(parts, targets)
        )

    # Re-home the last few assignments when that reduces the deviation.
    for _ in range(2 * n_splits):
        best_move, best_dev = None, deviation(assignment)
        for s in range(n_splits - 1):
            if len(assignment[s]) <= max(min_per_split, 1):
                continue
            last = assignment[s][-1]
            for t in range(s + 1, n_splits):
                trial = [list(p) for p in assignment]
                trial[s].remove(last)
                trial[t].append(last)
                d = deviation(trial)
                if d < best_dev - 1e-15:
                    best_move, best_dev = (s, t, last), d
        if best_move is None:
            break
        s, t, last = best_move
        assignment[s].remove(last)
        assignment[t].append(last)

    if min_per_split > 0 and len(indices) >= n_splits * min_per_split:
        for s in range(n_splits):
            while len(assignment[s]) < min_per_split:
                donor = max(
                    (t for t in range(n_splits) if len(assignment[t]) > min_per_split),
                    key=lambda t: sum(weights[i] for i in assignment[t]),
                    default=None,
                )
                if donor is None:
                    break
                moved = min(assignment[donor], key=lambda i: weights[i])
                assignment[donor].remove(moved)
                assignment[s].append(moved)
    return assignment


def stratified_split(
    kls,
    omegas,
    ratios=(0.7, 0.15, 0.15),
    n_strata: int = 3,
    rng: np.random.Generator | None = None,
    min_per_split: int = 1,
) -> tuple[dict[str, list[int]], list[float]]:
    """Weight-aware three-way split stratified by closeness to the optimum.

    Strata are cut at importance-weighted quantiles of the KL distances;
    inside each stratum, points are drawn without replacement in proportion
    to their weights until the train then validation targets are exceeded.
    Every nonempty stratum contributes at least ``min_per_split`` points to
    each split whenever it is large enough to afford that.
    """
    kls = np.asarray(kls, dtype=float)
    omegas = np.asarray(omegas, dtype=float)
    m = kls.size
    if m < 3:
        raise InvalidInput("need at least 3 points to split")
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidInput("ratios must be three positive numbers summing to 1")
    if n_strata < 1:
        raise InvalidInput("need at least one stratum")
    rng = rng if rng is not None else np.random.default_rng(0)

    cuts = weighted_quantile_cutpoints(kls, omegas, n_strata)
    strata = _strata_membership(kls, cuts)
    splits: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    for members in strata:
        if not members:
            continue
        parts = _assign_stratum(members, omegas, list(ratios), rng, min_per_split)
        for name, part in zip(("train", "val", "test"), parts):
            splits[name].extend(part)
    for name in splits:
        splits[name].sort()
    return splits, cuts


def partition_train_val(indices, omegas, ratio_train: float, rng, n_strata: int = 1, kls=None):
    """Two-way weighted partition of a point subset (fresh per outer run)."""
    indices = list(indices)
    if len(indices) < 2:
        raise InvalidInput("need at least two points to partition")
    omegas = np.asarray(omegas, dtype=float)
    values = np.asarray(kls, dtype=float) if kls is not None else omegas
    cuts = weighted_quantile_cutpoints(values[indices], omegas[indices], n_strata)
    strata = _strata_membership(values[indices], cuts)
    train, val = [], []
    for members in strata:
        if not members:
            continue
        local = [indices[i] for i in members]
        parts = _assign_stratum(local, omegas, [ratio_train, 1.0 - ratio_train], rng, 1)
        train.extend(parts[0])
        val.extend(parts[1])
    return sorted(train), sorted(val)


def build_meta_dataset(
    mses,
    M: int | None = None,
    params: dict | None = None,
    rng: np.random.Generator | None = None,
) -> MetaDataset:
    """Sample mixture weights around the optimum and package the weighted,
    stratified meta-dataset."""
    p = dict(DEFAULT_PARAMS)
    if params:
        p.update(params)
    if M is not None:
        p["M"] = M
    rng = rng if rng is not None else np.random.default_rng(0)
    mses = np.asarray(mses, dtype=float)

    w_star = optimal_weights(mses, p["eps"])
    ws = sample_weights(w_star, p["L"], p["tau_min"], p["rho"], p["delta"], p["M"], rng)
    kls = np.array([kl_divergence(w, w_star, floor=p["delta"] / 10.0) for w in ws])
    mse_hats = ws @ mses
    omegas = importance_weights(kls, mse_hats, p["alpha"], p["beta"], p["eps"])
    splits, cuts = stratified_split(kls, omegas, p["ratios"], p["strata"], rng)

    points = [
        EnsemblePoint(ws[i], float(omegas[i]), float(kls[i]), float(mse_hats[i]))
        for i in range(p["M"])
    ]
    meta_params = dict(p)
    meta_params["ratios"] = list(p["ratios"])
    meta_params["w_star"] = list(map(float, w_star))
    return MetaDataset(points, splits, cuts, meta_params)
