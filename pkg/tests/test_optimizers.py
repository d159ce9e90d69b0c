from __future__ import annotations

import numpy as np
import pytest

from simsched.core import CountingSystem, run_algorithm
from simsched.errors import InvalidInput
from simsched.optimizers import GAConfig, PSOConfig

from conftest import Bowl, DeterministicSystem


# ---------------------------------------------------------------------------
# Config validation
# ---------------------------------------------------------------------------


def test_ga_config_validation():
    with pytest.raises(InvalidInput):
        GAConfig(crossover_rate=1.2)
    with pytest.raises(InvalidInput):
        GAConfig(population=1)


def test_pso_config_validation():
    with pytest.raises(InvalidInput):
        PSOConfig(particles=0)


# ---------------------------------------------------------------------------
# GA behavior
# ---------------------------------------------------------------------------


def test_ga_population_size_preserved(bowl):
    _, state = run_algorithm(bowl, "GA", budget=35, seed=1)
    assert len(state.extras["population"]) == 10
    assert len(state.extras["fitness"]) == 10


def test_ga_population_within_bounds(bowl):
    _, state = run_algorithm(bowl, "GA", budget=40, seed=2)
    pop = np.array(state.extras["population"])
    assert np.all(pop >= bowl.bounds[:, 0]) and np.all(pop <= bowl.bounds[:, 1])


def test_ga_elitism_keeps_best(bowl):
    traj, state = run_algorithm(bowl, "GA", budget=50, seed=3)
    best = min(traj.ys())
    assert min(state.extras["fitness"]) == pytest.approx(best)


def test_ga_partial_generation_still_valid(bowl):
    # 10 initial + 7 offspring: the generation is cut mid-way
    _, state = run_algorithm(bowl, "GA", budget=17, seed=4)
    assert len(state.extras["population"]) == 10
    assert len(state.xs) == 17


def test_ga_warm_start_seeds_best_prior_points(bowl):
    _, prior = run_algorithm(bowl, "BO-EI", budget=12, seed=5)
    best_prior = sorted(prior.ys)[:10]
    counter = CountingSystem(bowl)
    _, state = run_algorithm(counter, "GA", budget=10, seed=6, init=prior)
    # seeded members reuse known fitness: all 10 budget units go to offspring
    assert counter.calls == 10
    assert min(state.extras["fitness"]) <= best_prior[0] + 1e-12


# ---------------------------------------------------------------------------
# PSO behavior
# ---------------------------------------------------------------------------


def test_pso_one_evaluation_per_update(bowl):
    counter = CountingSystem(bowl)
    traj, _ = run_algorithm(counter, "PSO", budget=23, seed=1)
    assert counter.calls == 23 and len(traj) == 23


def test_pso_positions_within_bounds(bowl):
    _, state = run_algorithm(bowl, "PSO", budget=30, seed=2)
    pos = np.array(state.extras["positions"])
    assert np.all(pos >= bowl.bounds[:, 0]) and np.all(pos <= bowl.bounds[:, 1])


def test_pso_zero_inertia_no_social_fixed_point():
    from simsched.core import AlgoState, RunContext, BudgetLedger, Trajectory
    from simsched.optimizers import pso_driver
    from simsched.rng import stream

    system = DeterministicSystem(lambda x: float(np.sum(x**2)), d=2, lo=-1, hi=1)
    cfg = PSOConfig(particles=1, inertia=0.0, cognitive=1.5, social=0.0)
    traj = Trajectory()
    ledger = BudgetLedger(total=6)
    ctx = RunContext(system, traj, ledger, 6, stream(3, "algo"), [], [], stream(3, "sys"))
    state = pso_driver(cfg)(ctx, None)
    # a single particle is always at its personal best, so position is frozen
    pos = np.array(state.extras["positions"][0])
    first = traj.observations[0].x.values
    assert np.allclose(pos, first)


def test_pso_warm_start_places_incumbent(bowl):
    _, prior = run_algorithm(bowl, "GA", budget=15, seed=7)
    inc_x, inc_y = prior.incumbent()
    _, state = run_algorithm(bowl, "PSO", budget=8, seed=8, init=prior)
    assert state.extras["gbest_y"] <= inc_y + 1e-12
    assert any(np.allclose(p, inc_x) for p in np.array(state.extras["pbest_x"]))


def test_pso_gbest_matches_running_best(bowl):
    traj, state = run_algorithm(bowl, "PSO", budget=31, seed=9)
    assert state.extras["gbest_y"] == pytest.approx(min(traj.ys()))


# ---------------------------------------------------------------------------
# BO behavior
# ---------------------------------------------------------------------------


def test_bo_initial_points_are_uniform_then_model_based(bowl):
    traj, state = run_algorithm(bowl, "BO-EI", budget=7, seed=10)
    assert len(traj) == 7
    assert state.extras["bo_hyperparams"] is not None


def test_bo_tiny_budget_all_init(bowl):
    traj, _ = run_algorithm(bowl, "BO-EI", budget=3, seed=11)
    assert len(traj) == 3


def test_bo_warm_start_skips_reinitialization(bowl):
    _, prior = run_algorithm(bowl, "GA", budget=9, seed=12)
    counter = CountingSystem(bowl)
    traj, _ = run_algorithm(counter, "BO-PI", budget=5, seed=13, init=prior)
    assert counter.calls == 5  # no fresh 5-point init on top of 9 prior points


def test_bo_improves_on_smooth_bowl(bowl):
    traj, _ = run_algorithm(bowl, "BO-EI", budget=25, seed=14)
    ys = traj.ys()
    assert min(ys) < min(ys[:5])  # model-based phase beats the random init
