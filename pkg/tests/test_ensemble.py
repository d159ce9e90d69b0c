from __future__ import annotations

import math

import numpy as np
import pytest

from simsched.ensemble import (
    EnsemblePoint,
    EnsembleSystem,
    MetaDataset,
    ReplicaSet,
    build_meta_dataset,
    check_simplex,
    dirichlet_concentration,
    importance_weights,
    kl_divergence,
    load_meta_dataset,
    optimal_weights,
    partition_train_val,
    sample_weights,
    save_meta_dataset,
    select_top_k,
    stratified_split,
    weighted_quantile_cutpoints,
)
from simsched.errors import InvalidInput, InvalidK
from simsched.rng import stream

from conftest import DeterministicSystem


# ---------------------------------------------------------------------------
# Top-K selection and optimal weights
# ---------------------------------------------------------------------------


def _rset(mses):
    return ReplicaSet([(f"model{i}", m) for i, m in enumerate(mses)])


def test_select_top_k_orders_ascending():
    top = select_top_k(_rset([0.3, 0.1, 0.2]), 2)
    assert top.mses == [0.1, 0.2]


def test_select_top_k_full_set_sorted():
    top = select_top_k(_rset([0.3, 0.1, 0.2]), 3)
    assert top.mses == [0.1, 0.2, 0.3]


def test_select_top_k_tie_keeps_insertion_order():
    top = select_top_k(_rset([0.1, 0.1]), 1)
    assert top.members[0][0] == "model0"


def test_select_top_k_invalid():
    with pytest.raises(InvalidK):
        select_top_k(_rset([0.1]), 2)


def test_optimal_weights_symmetry():
    assert optimal_weights([0.1, 0.1], eps=1e-6) == pytest.approx([0.5, 0.5])


def test_optimal_weights_hand_normalization():
    # inverse errors (1, 1/3) normalize to (3/4, 1/4)
    assert optimal_weights([1.0, 3.0], eps=0.0) == pytest.approx([0.75, 0.25])


def test_optimal_weights_single_member():
    assert optimal_weights([0.42]) == pytest.approx([1.0])


def test_optimal_weights_empty_rejected():
    with pytest.raises(InvalidInput):
        optimal_weights([])


# ---------------------------------------------------------------------------
# Ensemble mixture as a system
# ---------------------------------------------------------------------------


def test_ensemble_vertex_weight_matches_member_stream():
    members = [
        DeterministicSystem(lambda x: float(x[0]) * 2, d=1),
        DeterministicSystem(lambda x: float(x[0]) * 5, d=1),
    ]
    bounds = np.array([[0.0, 1.0]])
    ens = EnsembleSystem(members, [1.0, 0.0], bounds)
    rng = stream(7)
    y = ens.evaluate(np.array([0.5]), rng)
    rng2 = stream(7)
    child = rng2.spawn(2)[0]
    assert y == members[0].evaluate(np.array([0.5]), child)


def test_ensemble_average_of_deterministic_members():
    members = [
        DeterministicSystem(lambda x: 2.0, d=1),
        DeterministicSystem(lambda x: 4.0, d=1),
    ]
    ens = EnsembleSystem(members, [0.5, 0.5], np.array([[0.0, 1.0]]))
    assert ens.evaluate(np.array([0.1]), stream(0)) == pytest.approx(3.0)


def test_ensemble_identical_members_any_weight():
    members = [DeterministicSystem(lambda x: 1.5, d=1) for _ in range(3)]
    ens = EnsembleSystem(members, [0.2, 0.5, 0.3], np.array([[0.0, 1.0]]))
    assert ens.evaluate(np.array([0.7]), stream(1)) == pytest.approx(1.5)


# ---------------------------------------------------------------------------
# Dirichlet-ladder sampling
# ---------------------------------------------------------------------------


def test_concentration_vector_hand_value():
    alpha = dirichlet_concentration([0.5, 0.5], tau=10.0, delta=0.1)
    assert alpha == pytest.approx([5.0, 5.0])  # 10 * (0.8*0.5 + 0.1)


def test_sample_weights_all_on_simplex():
    ws = sample_weights([0.6, 0.3, 0.1], M=500, rng=stream(2))
    assert ws.shape == (500, 3)
    assert np.all(ws >= 0)
    assert np.allclose(ws.sum(axis=1), 1.0, atol=1e-9)


def test_sample_weights_single_component_mean():
    # one ladder rung, concentration alpha = tau*((1-dK)w*+d) = (5,5);
    # the Dirichlet mean is then exactly (0.5, 0.5)
    ws = sample_weights([0.5, 0.5], L=1, tau_min=10.0, rho=2.0, delta=0.1,
                        M=10_000, rng=stream(3))
    assert abs(float(ws[:, 0].mean()) - 0.5) <= 0.02


def test_sample_weights_validates_delta():
    with pytest.raises(InvalidInput):
        sample_weights([0.5, 0.5], delta=0.6)


# ---------------------------------------------------------------------------
# KL divergence
# ---------------------------------------------------------------------------


def test_kl_identity_is_zero():
    assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0


def test_kl_vertex_hand_value():
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2.0), abs=1e-12)


def test_kl_nonnegative_on_random_pairs():
    rng = stream(5)
    for _ in range(200):
        k = int(rng.integers(2, 6))
        w = rng.dirichlet(np.full(k, 0.3))
        q = rng.dirichlet(np.full(k, 0.3))
        w, q = w / w.sum(), q / q.sum()
        assert kl_divergence(w, q) >= 0.0


def test_kl_zero_target_entry_floored():
    d = kl_divergence([0.5, 0.5], [1.0, 0.0])
    assert np.isfinite(d) and d > 0


def test_kl_length_mismatch():
    with pytest.raises(InvalidInput):
        kl_divergence([1.0], [0.5, 0.5])


# ---------------------------------------------------------------------------
# Importance weights
# ---------------------------------------------------------------------------


def test_importance_weights_symmetry():
    w = importance_weights([0.2, 0.2], [0.1, 0.1])
    assert w == pytest.approx([0.5, 0.5])


def test_importance_weights_degenerate_exponents_uniform():
    w = importance_weights([0.5, 1.2, 0.1], [0.3, 0.2, 0.9], alpha=0.0, beta=0.0)
    assert w == pytest.approx([1 / 3] * 3)


def test_importance_weights_hand_ratio():
    # zeta proportional to exp(-D): (1, 1/2) -> (2/3, 1/3)
    w = importance_weights([0.0, math.log(2.0)], [0.5, 0.5], alpha=1.0, beta=2.0)
    assert w == pytest.approx([2 / 3, 1 / 3])


def test_importance_weights_scale_free_normalization():
    kls = np.array([0.1, 0.7, 1.3])
    mses = np.array([0.2, 0.4, 0.6])
    w1 = importance_weights(kls, mses, alpha=2.0, beta=1.5)
    # multiplying every zeta by a constant cannot change the output; realize
    # the constant as a uniform shift of all KLs (zeta -> zeta * e^{-a c})
    w2 = importance_weights(kls + 3.0, mses, alpha=2.0, beta=1.5)
    assert w1 == pytest.approx(w2)
    assert float(np.sum(w1)) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Stratified split
# ---------------------------------------------------------------------------


def test_weighted_quantile_cutpoints_balanced():
    values = np.arange(10, dtype=float)
    cuts = weighted_quantile_cutpoints(values, np.ones(10), 2)
    assert len(cuts) == 1 and 3.0 <= cuts[0] <= 5.0


def test_stratified_split_partitions_indices():
    rng = stream(11)
    kls = rng.random(40)
    omegas = importance_weights(kls, rng.random(40))
    splits, cuts = stratified_split(kls, omegas, n_strata=3, rng=stream(12))
    seen = sorted(splits["train"] + splits["val"] + splits["test"])
    assert seen == list(range(40))
    assert all(cuts[i] <= cuts[i + 1] for i in range(len(cuts) - 1))


def test_stratified_split_uniform_sizes():
    M = 100
    omegas = np.full(M, 1.0 / M)
    kls = stream(13).random(M)
    splits, _ = stratified_split(kls, omegas, (0.7, 0.15, 0.15), n_strata=1, rng=stream(14))
    assert abs(len(splits["train"]) - 70) <= 2
    assert abs(len(splits["val"]) - 15) <= 2
    assert abs(len(splits["test"]) - 15) <= 2


def test_stratified_split_weight_targets_over_seeds():
    M = 200
    rng = stream(15)
    kls = rng.random(M)
    omegas = importance_weights(kls, rng.random(M) + 0.1)
    for seed in range(50):
        splits, _ = stratified_split(kls, omegas, (0.7, 0.15, 0.15), 3, stream(16, seed))
        for name, target in (("train", 0.7), ("val", 0.15), ("test", 0.15)):
            got = float(np.sum(omegas[splits[name]]))
            assert abs(got - target) / target <= 0.10


def test_stratified_split_deterministic():
    M = 60
    rng = stream(17)
    kls = rng.random(M)
    omegas = importance_weights(kls, rng.random(M) + 0.1)
    a, _ = stratified_split(kls, omegas, rng=stream(18))
    b, _ = stratified_split(kls, omegas, rng=stream(18))
    assert a == b


def test_stratified_split_min_count_per_stratum():
    M = 30
    kls = stream(19).random(M)
    omegas = np.full(M, 1.0 / M)
    splits, cuts = stratified_split(kls, omegas, (0.8, 0.1, 0.1), 3, stream(20))
    edges = [-np.inf, *cuts, np.inf]
    for s in range(3):
        members = [i for i in range(M) if edges[s] < kls[i] <= edges[s + 1]]
        if len(members) >= 3:
            for part in splits.values():
                assert len(set(members) & set(part)) >= 1


def test_stratified_split_too_small():
    with pytest.raises(InvalidInput):
        stratified_split([0.1, 0.2], [0.5, 0.5])


def test_partition_train_val_covers_pool():
    omegas = np.full(20, 0.05)
    kls = stream(21).random(20)
    train, val = partition_train_val(list(range(20)), omegas, 0.8, stream(22), kls=kls)
    assert sorted(train + val) == list(range(20))
    assert len(val) >= 1


# ---------------------------------------------------------------------------
# Meta-dataset assembly and persistence
# ---------------------------------------------------------------------------


def test_build_meta_dataset_invariants():
    ds = build_meta_dataset([0.05, 0.08, 0.12], M=60, rng=stream(23))
    assert len(ds.points) == 60
    omegas = np.array([p.omega for p in ds.points])
    assert float(omegas.sum()) == pytest.approx(1.0, abs=1e-9)
    for p in ds.points:
        check_simplex(p.w)
        assert p.kl >= 0
        w_star = np.array(ds.params["w_star"])
        assert p.mse_hat == pytest.approx(float(p.w @ [0.05, 0.08, 0.12]))
    sizes = {k: len(v) for k, v in ds.splits.items()}
    assert sum(sizes.values()) == 60 and min(sizes.values()) >= 1


def test_build_meta_dataset_deterministic():
    a = build_meta_dataset([0.05, 0.08], M=30, rng=stream(24))
    b = build_meta_dataset([0.05, 0.08], M=30, rng=stream(24))
    assert a.splits == b.splits
    assert all(np.array_equal(p.w, q.w) for p, q in zip(a.points, b.points))


def test_meta_dataset_json_round_trip(tmp_path):
    ds = build_meta_dataset([0.05, 0.08], M=20, rng=stream(25))
    path = tmp_path / "dataset.json"
    save_meta_dataset(ds, path)
    loaded = load_meta_dataset(path)
    assert loaded.splits == ds.splits
    assert loaded.strata_cutpoints == pytest.approx(ds.strata_cutpoints)
    for p, q in zip(loaded.points, ds.points):
        assert np.allclose(p.w, q.w) and p.omega == pytest.approx(q.omega)


def test_meta_dataset_rejects_bad_splits():
    points = [EnsemblePoint(np.array([1.0]), 1.0, 0.0, 0.1)]
    with pytest.raises(InvalidInput):
        MetaDataset(points, {"train": [0], "val": [0], "test": []})
