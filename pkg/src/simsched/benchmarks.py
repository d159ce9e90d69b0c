"""Stochastic benchmark systems: a multi-product single-location warehouse
under an order-up-to policy, and a discrete-time multi-server queueing
network with routing.  All parameter values live in config files; nothing is
hard-coded here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .core import StochasticSystem
from .errors import HardCapacityViolated, InvalidInput

CAPACITY_MODES = ("hard", "soft-quadratic")


def default_config_path(name: str):
    """Path of a packaged default config (e.g. ``warehouse`` or ``queuenet``)."""
    return resources.files("simsched.configs").joinpath(f"{name}.json")


# ---------------------------------------------------------------------------
# Warehouse
# ---------------------------------------------------------------------------


@dataclass
class WarehouseConfig:
    n_products: int
    lead_times: list[int]
    holding_costs: list[float]
    backorder_penalties: list[float]
    base_demands: list[float]
    seasonality: list[float]  # Monday..Sunday multipliers
    horizon: int
    warmup: int
    lower_bounds: list[int]
    upper_bounds: list[int]
    capacity: float
    capacity_mode: str = "soft-quadratic"
    capacity_coeff: float = 0.0

    def __post_init__(self):
        n = self.n_products
        per_product = (
            self.lead_times, self.holding_costs, self.backorder_penalties,
            self.base_demands, self.lower_bounds, self.upper_bounds,
        )
        if any(len(v) != n for v in per_product):
            raise InvalidInput("per-product parameter lengths must equal n_products")
        if len(self.seasonality) != 7 or any(s < 0 for s in self.seasonality):
            raise InvalidInput("seasonality needs 7 non-negative multipliers")
        if any(r < 0 for r in self.base_demands) or any(lt < 0 for lt in self.lead_times):
            raise InvalidInput("rates and lead times must be non-negative")
        if not 0 <= self.warmup < self.horizon:
            raise InvalidInput("need 0 <= warmup < horizon")
        if self.capacity_mode not in CAPACITY_MODES:
            raise InvalidInput(f"capacity_mode must be one of {CAPACITY_MODES}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, doc: dict) -> "WarehouseConfig":
        return cls(**{k: doc[k] for k in cls.__dataclass_fields__ if k in doc})

    @classmethod
    def load(cls, path) -> "WarehouseConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def capacity_penalty(targets, capacity: float, coefficient: float) -> float:
    """Quadratic overflow penalty: coeff * ((sum(S) - capacity)_+)^2."""
    if coefficient < 0:
        raise InvalidInput("penalty coefficient must be non-negative")
    excess = max(float(np.sum(targets)) - capacity, 0.0)
    return coefficient * excess * excess


def warehouse_evaluate(targets, cfg: WarehouseConfig, rng, collect: bool = False):
    """Average post-warmup daily cost of running the order-up-to policy.

    Each day: receive due orders, serve backlog then new Poisson demand,
    raise the inventory position (on-hand + pipeline - backlog) back to the
    target, and accrue holding plus backorder costs.
    """
    S = np.asarray(targets, dtype=float)
    n = cfg.n_products
    if S.shape != (n,):
        raise InvalidInput(f"expected {n} order-up-to targets")
    lo = np.asarray(cfg.lower_bounds, float)
    hi = np.asarray(cfg.upper_bounds, float)
    if np.any(S < lo) or np.any(S > hi):
        raise InvalidInput("targets outside bounds")
    if cfg.capacity_mode == "hard" and float(S.sum()) > cfg.capacity:
        raise HardCapacityViolated(
            f"sum of targets {S.sum():.0f} exceeds capacity {cfg.capacity:.0f}"
        )

    lead = np.asarray(cfg.lead_times, dtype=int)
    holding = np.asarray(cfg.holding_costs, float)
    penalty = np.asarray(cfg.backorder_penalties, float)
    base = np.asarray(cfg.base_demands, float)
    season = np.asarray(cfg.seasonality, float)
    soft_term = (
        capacity_penalty(S, cfg.capacity, cfg.capacity_coeff)
        if cfg.capacity_mode == "soft-quadratic"
        else 0.0
    )

    on_hand = np.zeros(n)
    backlog = np.zeros(n)
    pipeline = 0.0 * S
    arrivals = np.zeros((cfg.horizon + int(lead.max(initial=0)) + 1, n))
    total_ordered = np.zeros(n)
    total_received = np.zeros(n)
    position_ok = True
    cost_sum = 0.0
    days_counted = 0

    for day in range(cfg.horizon):
        received = arrivals[day]
        on_hand += received
        pipeline -= received
        total_received += received

        demand = rng.poisson(base * season[day % 7])
        from_backlog = np.minimum(on_hand, backlog)  # clear backlog first
        on_hand -= from_backlog
        backlog -= from_backlog
        served = np.minimum(on_hand, demand)
        on_hand -= served
        backlog += demand - served

        position = on_hand + pipeline - backlog
        order = np.maximum(S - position, 0.0)
        arrivals[day + lead, np.arange(n)] += order
        pipeline += order
        total_ordered += order
        if np.any(np.abs(on_hand + pipeline - backlog - S) > 1e-9):
            position_ok = False

        if day >= cfg.warmup:
            cost_sum += float(holding @ on_hand + penalty @ backlog) + soft_term
            days_counted += 1

    avg_cost = cost_sum / days_counted
    if not collect:
        return avg_cost
    return avg_cost, {
        "position_ok": position_ok,
        "total_ordered": total_ordered,
        "total_received": total_received,
        "pipeline_remaining": pipeline,
        "ending_on_hand": on_hand,
        "ending_backlog": backlog,
    }


class WarehouseSystem(StochasticSystem):
    """The warehouse benchmark exposed as a minimization system over the
    integer order-up-to targets."""

    def __init__(self, cfg: WarehouseConfig):
        self.cfg = cfg
        self.description = (
            f"A warehouse managing {cfg.n_products} products day by day. Each product "
            f"has a fixed replenishment lead time (days: {cfg.lead_times}), a holding "
            f"cost per unit on the shelf, and a backorder penalty per unfilled unit. "
            f"Daily demand is Poisson with a weekly seasonal pattern. At the end of "
            f"each day the inventory position (on-hand plus pipeline minus backlog) "
            f"is raised to a per-product target; orders arrive after the lead time. "
            f"Backlog is cleared before new demand. The objective is the average "
            f"daily cost after a {cfg.warmup}-day warm-up over a {cfg.horizon}-day "
            f"horizon."
        )

    @property
    def dimension(self) -> int:
        return self.cfg.n_products

    @property
    def bounds(self) -> np.ndarray:
        return np.column_stack(
            [np.asarray(self.cfg.lower_bounds, float), np.asarray(self.cfg.upper_bounds, float)]
        )

    @property
    def integrality(self) -> np.ndarray:
        return np.ones(self.cfg.n_products, dtype=bool)

    def evaluate(self, x, rng):
        return warehouse_evaluate(np.round(np.asarray(x, float)), self.cfg, rng)


# ---------------------------------------------------------------------------
# Queueing network
# ---------------------------------------------------------------------------


@dataclass
class QueueNetConfig:
    n_stations: int
    arrival_rate: float
    base_service_rates: list[float]
    server_pool: int
    server_lower: list[int]
    server_upper: list[int]
    multiplier_lower: float
    multiplier_upper: float
    default_routing: list[list[float]]  # rows of length n_stations + 1 (last = exit)
    holding_cost: float
    operating_cost: float
    resource_cost: float
    congestion_threshold: float
    congestion_coeff: float
    imbalance_coeff: float
    horizon: int
    warmup: int
    logit_bound: float = 4.0

    def __post_init__(self):
        n = self.n_stations
        if len(self.base_service_rates) != n or len(self.server_lower) != n or len(self.server_upper) != n:
            raise InvalidInput("per-station parameter lengths must equal n_stations")
        if len(self.default_routing) != n or any(len(r) != n + 1 for r in self.default_routing):
            raise InvalidInput("routing needs n rows of n+1 entries (exit column last)")
        for row in self.default_routing:
            if any(p < 0 for p in row) or abs(sum(row) - 1.0) > 1e-9:
                raise InvalidInput("each routing row plus exit must sum to 1")
        if not 0 <= self.warmup < self.horizon:
            raise InvalidInput("need 0 <= warmup < horizon")
        if self.arrival_rate < 0:
            raise InvalidInput("arrival rate must be non-negative")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, doc: dict) -> "QueueNetConfig":
        return cls(**{k: doc[k] for k in cls.__dataclass_fields__ if k in doc})

    @classmethod
    def load(cls, path) -> "QueueNetConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _normalize_routing(routing, n: int) -> np.ndarray:
    R = np.asarray(routing, dtype=float)
    if R.shape != (n, n + 1):
        raise InvalidInput(f"routing must be {n}x{n + 1} including the exit column")
    R = np.maximum(R, 0.0)
    sums = R.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise InvalidInput("routing rows must have positive mass")
    return R / sums  # defensive renormalization


def queue_evaluate(allocation, multipliers, routing, cfg: QueueNetConfig, rng, collect=False):
    """Average post-warmup per-period cost of the configured network.

    Per period: Poisson arrivals join station 0; each station serves
    min(queue, servers) customers, each completing with probability
    min(1, base_rate * multiplier); completions exit or hop per the routing
    row.  Costs combine holding, server operation, multiplier surcharges,
    congestion overflow, and utilization imbalance.
    """
    n = cfg.n_stations
    servers = np.asarray(allocation, dtype=int)
    mult = np.asarray(multipliers, dtype=float)
    if servers.shape != (n,) or mult.shape != (n,):
        raise InvalidInput("allocation and multipliers must be per-station vectors")
    if int(servers.sum()) > cfg.server_pool:
        raise InvalidInput(
            f"allocated {int(servers.sum())} servers, pool is {cfg.server_pool}"
        )
    if np.any(servers < cfg.server_lower) or np.any(servers > cfg.server_upper):
        raise InvalidInput("server allocation outside bounds")
    if np.any(mult < cfg.multiplier_lower) or np.any(mult > cfg.multiplier_upper):
        raise InvalidInput("multipliers outside bounds")
    R = _normalize_routing(routing, n)
    p_complete = np.minimum(np.asarray(cfg.base_service_rates) * mult, 1.0)

    queues = np.zeros(n, dtype=int)
    total_arrivals = 0
    total_exits = 0
    cost_sum = 0.0
    periods_counted = 0
    fixed_cost = (
        cfg.operating_cost * float(servers.sum())
        + cfg.resource_cost * float(np.maximum(mult - 1.0, 0.0).sum())
    )

    for period in range(cfg.horizon):
        arrivals = int(rng.poisson(cfg.arrival_rate))
        total_arrivals += arrivals
        queues[0] += arrivals

        in_service = np.minimum(queues, servers)
        transfers = np.zeros(n, dtype=int)
        exits = 0
        for i in range(n):
            done = int(rng.binomial(in_service[i], p_complete[i])) if in_service[i] else 0
            queues[i] -= done
            if done:
                moves = rng.multinomial(done, R[i])
                transfers += moves[:n]
                exits += int(moves[n])
        queues += transfers
        total_exits += exits

        util = np.where(servers > 0, in_service / np.maximum(servers, 1), 0.0)
        cost = (
            cfg.holding_cost * float(queues.sum())
            + fixed_cost
            + cfg.congestion_coeff * max(float(queues.max()) - cfg.congestion_threshold, 0.0)
            + cfg.imbalance_coeff * float(util.max() - util.min())
        )
        if period >= cfg.warmup:
            cost_sum += cost
            periods_counted += 1

    avg_cost = cost_sum / periods_counted
    if not collect:
        return avg_cost
    return avg_cost, {
        "total_arrivals": total_arrivals,
        "total_exits": total_exits,
        "in_system": int(queues.sum()),
    }


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def project_to_pool(servers: np.ndarray, lower: np.ndarray, pool: int) -> np.ndarray:
    """Decrement the largest allocations (ties: lowest index) until the pool
    constraint holds; lower bounds are respected."""
    out = servers.astype(int).copy()
    while out.sum() > pool:
        candidates = np.where(out > lower)[0]
        if candidates.size == 0:
            break
        k = candidates[np.argmax(out[candidates])]
        out[k] -= 1
    return out


class QueueNetSystem(StochasticSystem):
    """Queueing benchmark over [servers | multipliers | routing logits].

    Routing logits map through a per-row softmax (exit column included) so
    any real vector encodes a valid row-stochastic matrix; allocations that
    exceed the pool are projected by decrementing the largest stations.
    """

    def __init__(self, cfg: QueueNetConfig):
        self.cfg = cfg
        n = cfg.n_stations
        self._n_logits = n * (n + 1)
        self.description = (
            f"A discrete-time network of {n} service stations. Customers arrive in a "
            f"Poisson stream at station 1, wait in first-come queues, and after "
            f"service either exit or are routed by a row-stochastic matrix. Each "
            f"station runs an integer number of parallel servers from a pool of "
            f"{cfg.server_pool}, with a continuous service-rate multiplier. Costs per "
            f"period: holding per waiting customer, operation per server, a surcharge "
            f"for multipliers above one, plus congestion and utilization-imbalance "
            f"penalties, averaged after a {cfg.warmup}-period warm-up."
        )

    @property
    def dimension(self) -> int:
        return 2 * self.cfg.n_stations + self._n_logits

    @property
    def bounds(self) -> np.ndarray:
        cfg = self.cfg
        lo = np.concatenate(
            [cfg.server_lower, np.full(cfg.n_stations, cfg.multiplier_lower),
             np.full(self._n_logits, -cfg.logit_bound)]
        )
        hi = np.concatenate(
            [cfg.server_upper, np.full(cfg.n_stations, cfg.multiplier_upper),
             np.full(self._n_logits, cfg.logit_bound)]
        )
        return np.column_stack([lo, hi])

    @property
    def integrality(self) -> np.ndarray:
        n = self.cfg.n_stations
        return np.concatenate(
            [np.ones(n, dtype=bool), np.zeros(n + self._n_logits, dtype=bool)]
        )

    def decode(self, x: np.ndarray):
        n = self.cfg.n_stations
        x = np.asarray(x, dtype=float)
        servers = project_to_pool(
            np.round(x[:n]).astype(int),
            np.asarray(self.cfg.server_lower, int),
            self.cfg.server_pool,
        )
        mult = x[n : 2 * n]
        routing = _softmax_rows(x[2 * n :].reshape(n, n + 1))
        return servers, mult, routing

    def evaluate(self, x, rng):
        servers, mult, routing = self.decode(x)
        return queue_evaluate(servers, mult, routing, self.cfg, rng)
