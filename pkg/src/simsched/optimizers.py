"""Baseline simulation-optimization drivers: model-based search with three
acquisition rules, a genetic algorithm, and a particle swarm.

Every driver consumes its segment budget exactly, draws all randomness from
the run context's stream, and packages a warm-start state for successor
segments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AlgoState, RunContext, register_algorithm
from .errors import InvalidInput
from .gp import AcquisitionKind, GPHyperparams, gp_fit, propose_next_bo


@dataclass
class BOConfig:
    n_init: int = 5  # uniform points before the first surrogate fit
    n_candidates: int = 256
    n_starts: int = 20  # hyperparameter search restarts
    kappa: float = 2.0
    xi: float = 0.0
    refit_base: int = 5  # refit hyperparameters at n = base * 2^k


@dataclass
class GAConfig:
    population: int = 10
    tournament: int = 3
    crossover_rate: float = 0.7
    mutation_rate: float = 0.2
    mutation_step: float = 0.1  # fraction of each variable's range

    def __post_init__(self):
        if not (0 <= self.crossover_rate <= 1 and 0 <= self.mutation_rate <= 1):
            raise InvalidInput("rates must lie in [0, 1]")
        if self.population < 2:
            raise InvalidInput("population must be at least 2")


@dataclass
class PSOConfig:
    particles: int = 5
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5

    def __post_init__(self):
        if self.particles < 1:
            raise InvalidInput("need at least one particle")


# ---------------------------------------------------------------------------
# Model-based driver
# ---------------------------------------------------------------------------


def _refit_points(base: int) -> set[int]:
    pts, n = set(), base
    while n <= 100_000:
        pts.add(n)
        n *= 2
    return pts


def bo_driver(kind_name: str, cfg: BOConfig | None = None):
    cfg = cfg or BOConfig()
    refit_at = _refit_points(cfg.refit_base)

    def run(ctx: RunContext, init: AlgoState | None) -> AlgoState:
        kind = AcquisitionKind(kind_name, kappa=cfg.kappa, xi=cfg.xi)
        hyper = None
        if init is not None and isinstance(init.extras.get("bo_hyperparams"), dict):
            hyper = GPHyperparams.from_dict(init.extras["bo_hyperparams"])

        n_seen = len(ctx.xs)
        for _ in range(max(0, cfg.n_init - n_seen)):
            if ctx.remaining() <= 0:
                break
            ctx.evaluate(ctx.uniform_point())

        while ctx.remaining() > 0:
            n = len(ctx.xs)
            optimize = hyper is None or n in refit_at
            gp = gp_fit(
                np.array(ctx.xs),
                np.array(ctx.ys),
                hyper=None if optimize else hyper,
                optimize=optimize,
                n_starts=cfg.n_starts,
                bounds=ctx.bounds,
                rng=ctx.rng,
            )
            hyper = gp.hyper
            x = propose_next_bo(gp, ctx.bounds, kind, cfg.n_candidates, ctx.rng,
                                best=min(ctx.ys))
            ctx.evaluate(x)

        return AlgoState(
            family=f"BO-{kind_name}",
            dimension=ctx.dimension,
            extras={"bo_hyperparams": hyper.to_dict() if hyper is not None else None},
        )

    return run


# ---------------------------------------------------------------------------
# Genetic algorithm
# ---------------------------------------------------------------------------


def _seed_population(ctx: RunContext, size: int):
    """Best prior points first (fitness known), uniform fill for the rest."""
    pop, fit = [], []
    if ctx.xs:
        order = np.argsort(ctx.ys, kind="stable")[:size]
        for i in order:
            pop.append(np.array(ctx.xs[i], dtype=float))
            fit.append(ctx.ys[i])
    while len(pop) < size and ctx.remaining() > 0:
        x = ctx.uniform_point()
        fit.append(ctx.evaluate(x))
        pop.append(x)
    return pop, fit


def _tournament(fitness, size, rng) -> int:
    picks = rng.integers(0, len(fitness), size=size)
    return int(picks[np.argmin(np.asarray(fitness)[picks])])


def ga_driver(cfg: GAConfig | None = None):
    cfg = cfg or GAConfig()

    def run(ctx: RunContext, init: AlgoState | None) -> AlgoState:
        span = ctx.bounds[:, 1] - ctx.bounds[:, 0]
        pop, fit = _seed_population(ctx, cfg.population)

        while ctx.remaining() > 0 and len(pop) >= 2:
            offspring, off_fit = [], []
            for _ in range(len(pop)):
                if ctx.remaining() <= 0:
                    break
                a = _tournament(fit, cfg.tournament, ctx.rng)
                b = _tournament(fit, cfg.tournament, ctx.rng)
                child = pop[a].copy()
                if ctx.rng.random() < cfg.crossover_rate:
                    take_b = ctx.rng.random(ctx.dimension) < 0.5
                    child[take_b] = pop[b][take_b]
                mutate = ctx.rng.random(ctx.dimension) < cfg.mutation_rate
                child = child + mutate * ctx.rng.normal(size=ctx.dimension) * (
                    cfg.mutation_step * span
                )
                child = np.clip(child, ctx.bounds[:, 0], ctx.bounds[:, 1])
                off_fit.append(ctx.evaluate(child))
                offspring.append(child)

            # Elitist generational replacement: offspring plus the best
            # parents fill the gap, and the incumbent never disappears.
            best_parent = int(np.argmin(fit))
            merged = offspring + [pop[i] for i in np.argsort(fit, kind="stable")]
            merged_fit = off_fit + [fit[i] for i in np.argsort(fit, kind="stable")]
            new_pop = merged[: len(pop)]
            new_fit = merged_fit[: len(pop)]
            if min(new_fit) > fit[best_parent]:
                worst = int(np.argmax(new_fit))
                new_pop[worst] = pop[best_parent].copy()
                new_fit[worst] = fit[best_parent]
            pop, fit = new_pop, new_fit

        while ctx.remaining() > 0:  # degenerate tiny-population fallback
            ctx.evaluate(ctx.uniform_point())

        return AlgoState(
            family="GA",
            dimension=ctx.dimension,
            extras={
                "population": [p.tolist() for p in pop],
                "fitness": [float(f) for f in fit],
            },
        )

    return run


# ---------------------------------------------------------------------------
# Particle swarm (asynchronous single-particle updates)
# ---------------------------------------------------------------------------


def pso_driver(cfg: PSOConfig | None = None):
    cfg = cfg or PSOConfig()

    def run(ctx: RunContext, init: AlgoState | None) -> AlgoState:
        d = ctx.dimension
        lo, hi = ctx.bounds[:, 0], ctx.bounds[:, 1]
        positions, pbest_y = [], []

        if ctx.xs:  # seed the incumbent as a particle; its value is known
            x_inc, y_inc = np.array(ctx.xs[int(np.argmin(ctx.ys))]), min(ctx.ys)
            positions.append(x_inc.copy())
            pbest_y.append(y_inc)
        while len(positions) < cfg.particles and ctx.remaining() > 0:
            x = ctx.uniform_point()
            pbest_y.append(ctx.evaluate(x))
            positions.append(x)

        if not positions:
            return AlgoState(family="PSO", dimension=d)
        pbest_x = [p.copy() for p in positions]
        velocities = [np.zeros(d) for _ in positions]
        g = int(np.argmin(pbest_y))
        gbest_x, gbest_y = pbest_x[g].copy(), pbest_y[g]

        i = 0
        while ctx.remaining() > 0:
            k = i % len(positions)
            r1 = ctx.rng.random(d)
            r2 = ctx.rng.random(d)
            velocities[k] = (
                cfg.inertia * velocities[k]
                + cfg.cognitive * r1 * (pbest_x[k] - positions[k])
                + cfg.social * r2 * (gbest_x - positions[k])
            )
            positions[k] = np.clip(positions[k] + velocities[k], lo, hi)
            y = ctx.evaluate(positions[k])
            if y < pbest_y[k]:
                pbest_x[k], pbest_y[k] = positions[k].copy(), y
            if y < gbest_y:
                gbest_x, gbest_y = positions[k].copy(), y
            i += 1

        return AlgoState(
            family="PSO",
            dimension=d,
            extras={
                "positions": [p.tolist() for p in positions],
                "velocities": [v.tolist() for v in velocities],
                "pbest_x": [p.tolist() for p in pbest_x],
                "pbest_y": [float(v) for v in pbest_y],
                "gbest_x": gbest_x.tolist(),
                "gbest_y": float(gbest_y),
            },
        )

    return run


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

BASELINE_IDS = ("BO-EI", "BO-UCB", "BO-PI", "GA", "PSO")


def register_baselines(
    bo_cfg: BOConfig | None = None,
    ga_cfg: GAConfig | None = None,
    pso_cfg: PSOConfig | None = None,
) -> None:
    register_algorithm("BO-EI", bo_driver("EI", bo_cfg))
    register_algorithm("BO-UCB", bo_driver("UCB", bo_cfg))
    register_algorithm("BO-PI", bo_driver("PI", bo_cfg))
    register_algorithm("GA", ga_driver(ga_cfg))
    register_algorithm("PSO", pso_driver(pso_cfg))


register_baselines()
