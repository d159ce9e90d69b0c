"""Structural replica models: per-node mechanisms attached to a causal
skeleton, trained by an end-to-end warm-up fit followed by alternating
latent-inference / mechanism-refit rounds with multi-start and
validation-gated checkpointing.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import StochasticSystem
from .errors import (
    InsufficientData,
    InvalidInput,
    TrainingDiverged,
    UnreachableObjective,
)
from .mechanisms import Mechanism
from .rng import stream
from .skeleton import CausalSkeleton

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    """Knobs for replica training; all values configurable by callers."""

    lam: float = 1.0  # latent-inference consistency weight
    gamma: float = 0.1  # mechanism-refit end-to-end weight
    rounds: int = 10  # alternating-refinement rounds per start
    starts: int = 3  # independent multi-starts
    e_steps: int = 25  # gradient steps per latent-inference pass
    patience: int = 3  # early-stop patience (validation checks / rounds)
    lr_theta: float = 0.1
    lr_latent: float = 0.1
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    stage0_iters: int = 2000
    mstep_iters: int = 400
    check_every: int = 25
    family: str = "mlp"
    hidden: tuple[int, ...] = (16,)
    activation: str = "tanh"
    standardize: bool = True
    max_restarts: int = 3

    def __post_init__(self):
        if self.lam <= 0 or self.gamma <= 0:
            raise InvalidInput("consistency and end-to-end weights must be positive")
        if abs(sum(self.split) - 1.0) > 1e-9 or any(r <= 0 for r in self.split):
            raise InvalidInput("split ratios must be positive and sum to 1")


@dataclass
class Dataset:
    """Historical input/output data, plus any observed internal columns."""

    X: np.ndarray  # (N, d) raw inputs
    y: np.ndarray  # (N,) raw objective
    latents: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.shape[0]:
            raise InvalidInput("X and y row counts differ")

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            self.X[idx], self.y[idx], {k: v[idx] for k, v in self.latents.items()}
        )


@dataclass
class LatentAssignment:
    """Per-sample internal states; clamped nodes are observed, never optimized."""

    values: dict[str, np.ndarray]
    clamped: set[str] = field(default_factory=set)

    def copy(self) -> "LatentAssignment":
        return LatentAssignment({k: v.copy() for k, v in self.values.items()}, set(self.clamped))


class StructuralModel:
    """Mechanisms on a skeleton plus input/output scaling and noise estimates."""

    def __init__(
        self,
        skeleton: CausalSkeleton,
        mechanisms: dict[str, Mechanism],
        x_mean=None,
        x_std=None,
        y_mean: float = 0.0,
        y_std: float = 1.0,
        noise_std: dict[str, np.ndarray] | None = None,
        mse_test: float | None = None,
    ):
        self.skeleton = skeleton
        self.mechanisms = mechanisms
        order = skeleton.topological_order()
        if order is None:
            raise InvalidInput("skeleton has a cycle")
        self.topo_order = order
        self.input_dim = sum(skeleton.spec(n).dim for n in skeleton.input_names)
        self._slices: dict[str, slice] = {}
        offset = 0
        for name in skeleton.input_names:
            d = skeleton.spec(name).dim
            self._slices[name] = slice(offset, offset + d)
            offset += d
        self.x_mean = np.zeros(self.input_dim) if x_mean is None else np.asarray(x_mean, float)
        self.x_std = np.ones(self.input_dim) if x_std is None else np.asarray(x_std, float)
        self.y_mean = float(y_mean)
        self.y_std = float(y_std)
        self.noise_std = noise_std or {}
        self.mse_test = mse_test
        self.fit_log: dict = {}
        non_inputs = set(skeleton.latent_names) | {skeleton.objective}
        if set(mechanisms) != non_inputs:
            raise InvalidInput("need exactly one mechanism per non-input node")
        if skeleton.spec(skeleton.objective).dim != 1:
            raise InvalidInput("objective variable must be scalar")

    def input_slice(self, name: str) -> slice:
        return self._slices[name]

    def copy(self) -> "StructuralModel":
        model = StructuralModel(
            self.skeleton,
            {k: m.copy() for k, m in self.mechanisms.items()},
            self.x_mean.copy(),
            self.x_std.copy(),
            self.y_mean,
            self.y_std,
            {k: v.copy() for k, v in self.noise_std.items()},
            self.mse_test,
        )
        return model

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "skeleton": self.skeleton.to_dict(),
            "mechanisms": {k: m.to_dict() for k, m in self.mechanisms.items()},
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "noise_std": {k: v.tolist() for k, v in self.noise_std.items()},
            "mse_test": self.mse_test,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StructuralModel":
        return cls(
            CausalSkeleton.from_dict(doc["skeleton"]),
            {k: Mechanism.from_dict(m) for k, m in doc["mechanisms"].items()},
            np.array(doc["x_mean"], dtype=float),
            np.array(doc["x_std"], dtype=float),
            doc["y_mean"],
            doc["y_std"],
            {k: np.array(v, dtype=float) for k, v in doc.get("noise_std", {}).items()},
            doc.get("mse_test"),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "StructuralModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_model(
    skeleton: CausalSkeleton,
    family: str = "mlp",
    hidden: tuple[int, ...] = (16,),
    activation: str = "tanh",
    rng: np.random.Generator | None = None,
) -> StructuralModel:
    """Fresh model with randomly initialized mechanisms on ``skeleton``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    mechanisms = {}
    for name in [*skeleton.latent_names, skeleton.objective]:
        in_dim = sum(skeleton.spec(p).dim for p in skeleton.parents(name))
        out_dim = skeleton.spec(name).dim
        mechanisms[name] = Mechanism(in_dim, out_dim, family, hidden, activation, rng)
    return StructuralModel(skeleton, mechanisms)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


def _check_reachable(skeleton: CausalSkeleton) -> None:
    if skeleton.objective not in skeleton.reachable_from_inputs():
        raise UnreachableObjective("objective is not reachable from the inputs")


def _parent_matrix(model: StructuralModel, node: str, states: dict[str, np.ndarray], n: int):
    parents = model.skeleton.parents(node)
    if not parents:
        return np.zeros((n, 0))
    return np.concatenate([states[p] for p in parents], axis=1)


def _forward_internal(
    model: StructuralModel,
    Xs: np.ndarray,
    clamp: dict[str, np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
    with_cache: bool = False,
):
    """Topological forward pass on standardized inputs.

    ``clamp`` replaces a node's computed state for everything downstream.
    When ``rng`` is given, each mechanism output is perturbed by its learned
    per-node noise scale.
    """
    n = Xs.shape[0]
    states: dict[str, np.ndarray] = {}
    caches: dict[str, object] = {}
    for node in model.topo_order:
        spec = model.skeleton.spec(node)
        if spec.kind == "input":
            states[node] = Xs[:, model.input_slice(node)]
            continue
        if clamp is not None and node in clamp:
            states[node] = np.atleast_2d(np.asarray(clamp[node], dtype=float))
            continue
        P = _parent_matrix(model, node, states, n)
        out, cache = model.mechanisms[node].forward_cache(P)
        if rng is not None and node in model.noise_std:
            out = out + rng.normal(size=out.shape) * model.noise_std[node]
        states[node] = out
        if with_cache:
            caches[node] = cache
    return states, caches


def _standardize_x(model: StructuralModel, X: np.ndarray) -> np.ndarray:
    return (np.atleast_2d(np.asarray(X, dtype=float)) - model.x_mean) / model.x_std


def forward(model: StructuralModel, x, clamp: dict | None = None):
    """Predict the objective for one decision vector.

    Returns ``(yhat, states)`` where ``states`` maps each non-input node to
    its internal (standardized-scale) state vector.  ``clamp`` entries
    override computed states and feed everything downstream.
    """
    _check_reachable(model.skeleton)
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != model.input_dim:
        raise InvalidInput(f"expected {model.input_dim} inputs, got {x.shape[0]}")
    clamp2 = None
    if clamp:
        clamp2 = {k: np.atleast_2d(np.asarray(v, dtype=float)) for k, v in clamp.items()}
    states, _ = _forward_internal(model, _standardize_x(model, x[None, :]), clamp2)
    yhat = float(states[model.skeleton.objective][0, 0] * model.y_std + model.y_mean)
    out_states = {
        node: states[node][0].copy()
        for node in model.topo_order
        if model.skeleton.spec(node).kind != "input"
    }
    return yhat, out_states


def predict(model: StructuralModel, X: np.ndarray) -> np.ndarray:
    """Vectorized pure forward pass (raw y scale)."""
    states, _ = _forward_internal(model, _standardize_x(model, X))
    return states[model.skeleton.objective][:, 0] * model.y_std + model.y_mean


# ---------------------------------------------------------------------------
# Losses and gradients
# ---------------------------------------------------------------------------


def _mse_raw(model: StructuralModel, data: Dataset) -> float:
    return float(np.mean((predict(model, data.X) - data.y) ** 2))


def _stage0_loss_grads(model: StructuralModel, Xs, ys, want_grads=True):
    """End-to-end squared error through the full composition (no latents)."""
    n = Xs.shape[0]
    states, caches = _forward_internal(model, Xs, with_cache=True)
    obj = model.skeleton.objective
    resid = states[obj][:, 0] - ys
    loss = float(np.mean(resid**2))
    if not want_grads:
        return loss, None
    gstate = {obj: (2.0 / n) * resid[:, None]}
    grads: dict[str, list] = {}
    for node in reversed(model.topo_order):
        if node not in model.mechanisms or node not in gstate:
            continue
        pgrads, gin = model.mechanisms[node].backprop(caches[node], gstate[node])
        grads[node] = pgrads
        offset = 0
        for p in model.skeleton.parents(node):
            d = model.skeleton.spec(p).dim
            if p in model.mechanisms:  # gradients stop at input nodes
                piece = gin[:, offset : offset + d]
                gstate[p] = gstate.get(p, 0.0) + piece
            offset += d
    return loss, grads


def _estep_states(model: StructuralModel, Xs, Z: LatentAssignment):
    states = {}
    for node in model.topo_order:
        spec = model.skeleton.spec(node)
        if spec.kind == "input":
            states[node] = Xs[:, model.input_slice(node)]
        elif spec.kind == "latent":
            states[node] = Z.values[node]
    return states


def _loss_e_and_grads(model: StructuralModel, Xs, ys, Z: LatentAssignment, lam, want_grads=True):
    """Objective-fit plus mechanism-consistency loss in the latent variables.

    Every current latent value is clamped into the forward pass, so each
    mechanism sees its parents' assigned states rather than recomputed ones.
    """
    n = Xs.shape[0]
    states = _estep_states(model, Xs, Z)
    obj = model.skeleton.objective
    grads = (
        {j: np.zeros_like(Z.values[j]) for j in Z.values if j not in Z.clamped}
        if want_grads
        else {}
    )

    P_obj = _parent_matrix(model, obj, states, n)
    out, cache = model.mechanisms[obj].forward_cache(P_obj)
    resid = out[:, 0] - ys
    loss = float(np.mean(resid**2))
    if want_grads:
        _, gin = model.mechanisms[obj].backprop(cache, (2.0 / n) * resid[:, None])
        offset = 0
        for p in model.skeleton.parents(obj):
            d = model.skeleton.spec(p).dim
            if p in grads:
                grads[p] += gin[:, offset : offset + d]
            offset += d

    for j in model.skeleton.latent_names:
        P_j = _parent_matrix(model, j, states, n)
        out_j, cache_j = model.mechanisms[j].forward_cache(P_j)
        diff = Z.values[j] - out_j
        loss += lam * float(np.sum(diff**2) / n)
        if not want_grads:
            continue
        if j in grads:
            grads[j] += lam * (2.0 / n) * diff
        _, gin = model.mechanisms[j].backprop(cache_j, -lam * (2.0 / n) * diff)
        offset = 0
        for p in model.skeleton.parents(j):
            d = model.skeleton.spec(p).dim
            if p in grads:
                grads[p] += gin[:, offset : offset + d]
            offset += d
    return loss, (grads if want_grads else None)


def _loss_m_and_grads(model: StructuralModel, Xs, ys, Z: LatentAssignment, gamma, want_grads=True):
    """Per-node consistency plus the end-to-end term, in the parameters.

    Latents stay clamped in the forward pass, so the loss decomposes across
    nodes: each latent mechanism regresses its assigned state on its parents'
    states, and the objective mechanism carries the end-to-end term.
    """
    n = Xs.shape[0]
    states = _estep_states(model, Xs, Z)
    obj = model.skeleton.objective
    loss = 0.0
    grads: dict[str, list] = {}

    for j in model.skeleton.latent_names:
        P_j = _parent_matrix(model, j, states, n)
        out_j, cache_j = model.mechanisms[j].forward_cache(P_j)
        diff = out_j - Z.values[j]
        loss += float(np.sum(diff**2) / n)
        if want_grads:
            pgrads, _ = model.mechanisms[j].backprop(cache_j, (2.0 / n) * diff)
            grads[j] = pgrads

    P_obj = _parent_matrix(model, obj, states, n)
    out, cache = model.mechanisms[obj].forward_cache(P_obj)
    resid = out[:, 0] - ys
    loss += gamma * float(np.mean(resid**2))
    if want_grads and gamma != 0.0:
        pgrads, _ = model.mechanisms[obj].backprop(cache, gamma * (2.0 / n) * resid[:, None])
        grads[obj] = pgrads
    return loss, (grads if want_grads else None)


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


def _monotone_descent(loss_grads_fn, apply_fn, snapshot_fn, restore_fn, iters, lr, min_lr_ratio=1e-6):
    """Full-batch gradient descent that never accepts a worsening step.

    On a loss increase (or non-finite value) the step is undone and the rate
    halved; descent stops once the rate underflows.  Yields the loss after
    each accepted step.
    """
    loss, grads = loss_grads_fn()
    if not np.isfinite(loss):
        raise TrainingDiverged("loss not finite at initialization")
    floor = lr * min_lr_ratio
    for _ in range(iters):
        snap = snapshot_fn()
        apply_fn(grads, lr)
        new_loss, new_grads = loss_grads_fn()
        if not np.isfinite(new_loss) or new_loss > loss:
            restore_fn(snap)
            lr *= 0.5
            if lr < floor:
                break
            continue
        loss, grads = new_loss, new_grads
        yield loss


def _theta_snapshot(model, nodes):
    return {j: model.mechanisms[j].get_flat() for j in nodes}


def _theta_restore(model, snap):
    for j, flat in snap.items():
        model.mechanisms[j].set_flat(flat)


def _run_theta_descent(model, loss_fn, nodes, iters, lr, val_fn=None, check_every=25, patience=3):
    """Descend on the mechanism parameters with best-val checkpointing."""
    best_val = val_fn(model) if val_fn is not None else None
    best_theta = _theta_snapshot(model, nodes)
    stale = 0
    lr_now = lr

    def loss_grads():
        return loss_fn(model)

    def apply(grads, rate):
        for j, g in grads.items():
            model.mechanisms[j].apply_grads(g, rate)

    it = 0
    for _ in _monotone_descent(
        loss_grads,
        apply,
        lambda: _theta_snapshot(model, nodes),
        lambda s: _theta_restore(model, s),
        iters,
        lr_now,
    ):
        it += 1
        if val_fn is not None and it % check_every == 0:
            v = val_fn(model)
            if v < best_val - 1e-12:
                best_val = v
                best_theta = _theta_snapshot(model, nodes)
                stale = 0
            else:
                stale += 1
                if stale >= patience:
                    break
    if val_fn is not None:
        # final candidate
        v = val_fn(model)
        if v < best_val - 1e-12:
            best_val = v
            best_theta = _theta_snapshot(model, nodes)
        _theta_restore(model, best_theta)
        return best_val
    return None


def stage0_fit(
    model: StructuralModel, train: Dataset, val: Dataset, config: TrainConfig
) -> StructuralModel:
    """End-to-end warm-up fit of all mechanisms (pure forward, no latents)."""
    if len(train) == 0 or len(val) == 0:
        raise InvalidInput("stage0_fit needs non-empty train and validation sets")
    _check_reachable(model.skeleton)
    nodes = list(model.mechanisms)
    lr = config.lr_theta
    for attempt in range(config.max_restarts + 1):
        out = model.copy()
        Xs = _standardize_x(out, train.X)
        ys = (train.y - out.y_mean) / out.y_std
        try:
            _run_theta_descent(
                out,
                lambda m: _stage0_loss_grads(m, Xs, ys),
                nodes,
                config.stage0_iters,
                lr,
                val_fn=lambda m: _mse_raw(m, val),
                check_every=config.check_every,
                patience=config.patience,
            )
            return out
        except TrainingDiverged:
            lr *= 0.5
            log.warning("stage-0 fit diverged; restarting with lr=%g", lr)
    raise TrainingDiverged("stage-0 fit failed after restarts")


def init_latents(model: StructuralModel, data: Dataset) -> LatentAssignment:
    """Forward-pass initialization; observed internals are clamped."""
    states, _ = _forward_internal(model, _standardize_x(model, data.X))
    values, clamped = {}, set()
    for j in model.skeleton.latent_names:
        if j in data.latents:
            obs = np.atleast_2d(np.asarray(data.latents[j], dtype=float))
            values[j] = obs.copy()
            clamped.add(j)
        else:
            values[j] = states[j].copy()
    return LatentAssignment(values, clamped)


def e_step(
    model: StructuralModel,
    latents: LatentAssignment,
    train: Dataset,
    lam: float,
    k_steps: int,
    lr: float = 0.1,
) -> LatentAssignment:
    """Update free latent states by ``k_steps`` monotone gradient steps."""
    if lam < 0:
        raise InvalidInput("consistency weight must be non-negative")
    Z = latents.copy()
    if k_steps <= 0 or not any(j not in Z.clamped for j in Z.values):
        return Z
    Xs = _standardize_x(model, train.X)
    ys = (train.y - model.y_mean) / model.y_std

    def loss_grads():
        return _loss_e_and_grads(model, Xs, ys, Z, lam)

    def apply(grads, rate):
        for j, g in grads.items():
            Z.values[j] -= rate * g

    def snapshot():
        return {j: Z.values[j].copy() for j in Z.values if j not in Z.clamped}

    def restore(snap):
        for j, v in snap.items():
            Z.values[j] = v

    for _ in _monotone_descent(loss_grads, apply, snapshot, restore, k_steps, lr):
        pass
    return Z


def m_step(
    model: StructuralModel,
    latents: LatentAssignment,
    train: Dataset,
    val: Dataset,
    gamma: float,
    config: TrainConfig | None = None,
) -> StructuralModel:
    """Refit each mechanism against the assigned latents, best-val checkpoint."""
    if gamma < 0:
        raise InvalidInput("end-to-end weight must be non-negative")
    cfg = config or TrainConfig()
    out = model.copy()
    Xs = _standardize_x(out, train.X)
    ys = (train.y - out.y_mean) / out.y_std
    nodes = list(out.mechanisms)
    _run_theta_descent(
        out,
        lambda m: _loss_m_and_grads(m, Xs, ys, latents, gamma),
        nodes,
        cfg.mstep_iters,
        cfg.lr_theta,
        val_fn=lambda m: _mse_raw(m, val),
        check_every=cfg.check_every,
        patience=cfg.patience,
    )
    return out


def split_indices(n: int, ratios, rng: np.random.Generator):
    """Shuffle and cut {0..n-1} into train/val/test index arrays."""
    idx = rng.permutation(n)
    n_tr = max(1, int(round(ratios[0] * n)))
    n_val = max(1, int(round(ratios[1] * n)))
    n_tr = min(n_tr, n - 2)
    n_val = min(n_val, n - n_tr - 1)
    return idx[:n_tr], idx[n_tr : n_tr + n_val], idx[n_tr + n_val :]


def _estimate_noise(model: StructuralModel, train: Dataset, Z: LatentAssignment):
    """Per-node residual scales from mechanism-consistency and objective fit."""
    Xs = _standardize_x(model, train.X)
    states = _estep_states(model, Xs, Z)
    n = Xs.shape[0]
    noise = {}
    for j in model.skeleton.latent_names:
        out = model.mechanisms[j].forward(_parent_matrix(model, j, states, n))
        noise[j] = np.std(Z.values[j] - out, axis=0)
    obj = model.skeleton.objective
    out = model.mechanisms[obj].forward(_parent_matrix(model, obj, states, n))
    ys = (train.y - model.y_mean) / model.y_std
    noise[obj] = np.array([float(np.std(out[:, 0] - ys))])
    return noise


def learn_oar(
    data: Dataset,
    skeleton: CausalSkeleton,
    config: TrainConfig | None = None,
    seed: int = 0,
) -> StructuralModel:
    """Full training procedure: split once, multi-start, warm-up fit, then
    alternating latent-inference / mechanism-refit rounds; returns the start
    with the smallest held-out test error (recorded as ``mse_test``)."""
    cfg = config or TrainConfig()
    if len(data) < 10:
        raise InsufficientData(f"need at least 10 samples, got {len(data)}")
    _check_reachable(skeleton)

    tr_idx, val_idx, te_idx = split_indices(len(data), cfg.split, stream(seed, "split"))
    train, val, test = data.subset(tr_idx), data.subset(val_idx), data.subset(te_idx)

    best_model: StructuralModel | None = None
    best_test = np.inf
    fit_log: dict = {"starts": []}

    for s in range(cfg.starts):
        rng_s = stream(seed, "start", s)
        model = build_model(skeleton, cfg.family, cfg.hidden, cfg.activation, rng_s)
        if cfg.standardize:
            model.x_mean = train.X.mean(axis=0)
            model.x_std = np.where(train.X.std(axis=0) > 1e-12, train.X.std(axis=0), 1.0)
            model.y_mean = float(train.y.mean())
            model.y_std = float(train.y.std()) if train.y.std() > 1e-12 else 1.0

        model = stage0_fit(model, train, val, cfg)
        Z = init_latents(model, train)

        best_val = _mse_raw(model, val)
        best_ckpt = (model.copy(), Z.copy())
        val_curve = [best_val]
        stale = 0
        for _ in range(cfg.rounds):
            Z = e_step(model, Z, train, cfg.lam, cfg.e_steps, cfg.lr_latent)
            model = m_step(model, Z, train, val, cfg.gamma, cfg)
            v = _mse_raw(model, val)
            if v < best_val - 1e-12:
                best_val = v
                best_ckpt = (model.copy(), Z.copy())
                stale = 0
            else:
                stale += 1
            val_curve.append(best_val)
            if stale >= cfg.patience:
                break

        model, Z = best_ckpt
        test_mse = _mse_raw(model, test)
        fit_log["starts"].append({"val_curve": val_curve, "test_mse": test_mse})
        if test_mse < best_test:
            best_test = test_mse
            model.noise_std = _estimate_noise(model, train, Z)
            best_model = model

    assert best_model is not None
    best_model.mse_test = float(best_test)
    best_model.fit_log = fit_log
    return best_model


# ---------------------------------------------------------------------------
# Data ingestion and the replica as a stochastic system
# ---------------------------------------------------------------------------


def load_history_csv(path, skeleton: CausalSkeleton | None = None) -> Dataset:
    """Read `x1..xd,y` rows; extra named columns become observed internals."""
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(c) for c in row] for row in reader if row]
    if not rows:
        raise InsufficientData(f"no data rows in {path}")
    cols = {name: i for i, name in enumerate(header)}
    x_names = sorted((n for n in cols if n.startswith("x") and n[1:].isdigit()),
                     key=lambda n: int(n[1:]))
    if "y" not in cols or not x_names:
        raise InvalidInput("history CSV needs x1..xd and y columns")
    arr = np.array(rows, dtype=float)
    X = arr[:, [cols[n] for n in x_names]]
    y = arr[:, cols["y"]]
    latents: dict[str, np.ndarray] = {}
    if skeleton is not None:
        for name in skeleton.latent_names:
            if name in cols:
                latents[name] = arr[:, [cols[name]]]
    return Dataset(X, y, latents)


def save_history_csv(data: Dataset, path) -> None:
    d = data.X.shape[1]
    header = [f"x{i + 1}" for i in range(d)] + ["y"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(data)):
            cells = [format(v, ".9g") for v in data.X[i]] + [format(data.y[i], ".9g")]
            fh.write(",".join(cells) + "\n")


class ReplicaSystem(StochasticSystem):
    """A learned structural model exposed as a cheap stochastic system.

    Each mechanism output is perturbed with the model's per-node residual
    scale, so the replica is itself a noisy objective like the real system.
    """

    def __init__(self, model: StructuralModel, bounds, integrality=None, description="", noisy=True):
        _check_reachable(model.skeleton)
        self.model = model
        self._bounds = np.asarray(bounds, dtype=float)
        self._integrality = (
            np.zeros(model.input_dim, dtype=bool)
            if integrality is None
            else np.asarray(integrality, dtype=bool)
        )
        self.description = description
        self.noisy = noisy

    @property
    def dimension(self) -> int:
        return self.model.input_dim

    @property
    def bounds(self) -> np.ndarray:
        return self._bounds

    @property
    def integrality(self) -> np.ndarray:
        return self._integrality

    def evaluate(self, x, rng):
        Xs = _standardize_x(self.model, np.asarray(x, dtype=float)[None, :])
        states, _ = _forward_internal(self.model, Xs, rng=rng if self.noisy else None)
        obj = self.model.skeleton.objective
        return float(states[obj][0, 0] * self.model.y_std + self.model.y_mean)
