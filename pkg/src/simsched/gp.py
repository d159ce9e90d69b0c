"""Gaussian-process surrogate (Matérn 5/2, per-dimension lengthscales) and
the acquisition rules used by the model-based optimizer.  All formulas are
for minimization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import erf

from .errors import IllConditioned, InvalidInput

SQRT5 = math.sqrt(5.0)
JITTERS = (1e-10, 1e-8, 1e-6, 1e-4)


def matern52(X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray, signal_var: float):
    """Matérn kernel with smoothness 5/2 and ARD lengthscales."""
    A = np.atleast_2d(X1) / lengthscales
    B = np.atleast_2d(X2) / lengthscales
    d2 = np.maximum(
        np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T,
        0.0,
    )
    r = np.sqrt(d2)
    return signal_var * (1.0 + SQRT5 * r + (5.0 / 3.0) * d2) * np.exp(-SQRT5 * r)


@dataclass
class GPHyperparams:
    lengthscales: np.ndarray
    signal_var: float = 1.0
    noise_var: float = 1e-4

    def to_dict(self) -> dict:
        return {
            "lengthscales": list(map(float, self.lengthscales)),
            "signal_var": float(self.signal_var),
            "noise_var": float(self.noise_var),
        }

    @classmethod
    def from_dict(cls, doc) -> "GPHyperparams":
        return cls(np.array(doc["lengthscales"], float), doc["signal_var"], doc["noise_var"])


@dataclass
class GPSurrogate:
    """Fitted posterior state: standardized targets plus a cached factorization."""

    X: np.ndarray
    hyper: GPHyperparams
    y_mean: float = 0.0
    y_scale: float = 1.0
    ys_std: np.ndarray = field(default_factory=lambda: np.zeros(0))
    chol: np.ndarray | None = None
    alpha: np.ndarray | None = None
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.X.shape[0]


def _default_lengthscales(xs: np.ndarray, bounds=None) -> np.ndarray:
    if bounds is not None:
        span = np.asarray(bounds)[:, 1] - np.asarray(bounds)[:, 0]
    elif len(xs) > 1:
        span = xs.max(axis=0) - xs.min(axis=0)
    else:
        span = np.ones(xs.shape[1])
    return np.where(span > 1e-12, 0.5 * span, 1.0)


def _factorize(K: np.ndarray):
    for jitter in JITTERS:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(K.shape[0]))
            return L, jitter
        except np.linalg.LinAlgError:
            continue
    raise IllConditioned("kernel matrix not positive definite after jitter escalation")


def log_marginal_likelihood(xs, ys_std, hyper: GPHyperparams) -> float:
    n = len(ys_std)
    K = matern52(xs, xs, hyper.lengthscales, hyper.signal_var)
    K[np.diag_indices(n)] += hyper.noise_var
    try:
        L, _ = _factorize(K)
    except IllConditioned:
        return -np.inf
    a = solve_triangular(L, ys_std, lower=True)
    return float(-0.5 * a @ a - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi))


def _coordinate_search(xs, ys_std, start: GPHyperparams, sweeps=2, step=math.log(3.0)):
    """Axis-wise multiplicative search on the log hyperparameters."""
    logs = np.concatenate(
        [np.log(start.lengthscales), [math.log(start.signal_var), math.log(start.noise_var)]]
    )

    def unpack(v):
        d = len(start.lengthscales)
        return GPHyperparams(np.exp(v[:d]), math.exp(v[d]), math.exp(v[d + 1]))

    best = log_marginal_likelihood(xs, ys_std, unpack(logs))
    for _ in range(sweeps):
        for i in range(len(logs)):
            width = step
            for _ in range(3):
                improved = False
                for direction in (+1.0, -1.0):
                    trial = logs.copy()
                    trial[i] += direction * width
                    val = log_marginal_likelihood(xs, ys_std, unpack(trial))
                    if val > best:
                        best, logs, improved = val, trial, True
                if not improved:
                    width *= 0.5
    return unpack(logs), best


def gp_fit(
    xs,
    ys,
    hyper: GPHyperparams | None = None,
    optimize: bool = False,
    n_starts: int = 20,
    bounds=None,
    rng: np.random.Generator | None = None,
) -> GPSurrogate:
    """Fit the surrogate; with ``optimize`` the hyperparameters maximize the
    log marginal likelihood via an ``n_starts`` coordinate search on log
    parameters, otherwise fixed values (or data-scaled defaults) are used.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.shape[0] != ys.shape[0]:
        raise InvalidInput("xs and ys must have matching lengths")
    n, d = xs.shape if xs.size else (0, xs.shape[1] if xs.ndim == 2 else 1)

    if n == 0:
        hp = hyper or GPHyperparams(np.ones(d if d else 1))
        return GPSurrogate(X=xs.reshape(0, len(hp.lengthscales)), hyper=hp)

    y_mean = float(ys.mean())
    y_scale = float(ys.std())
    if y_scale <= 1e-12:
        y_scale = 1.0
    ys_std = (ys - y_mean) / y_scale

    if hyper is None:
        hyper = GPHyperparams(_default_lengthscales(xs, bounds), 1.0, 1e-4)
    hp = hyper

    if optimize and n >= 2:
        rng = rng if rng is not None else np.random.default_rng(0)
        base_ls = _default_lengthscales(xs, bounds)
        candidates = [GPHyperparams(base_ls.copy(), 1.0, 1e-4)]
        for _ in range(max(0, n_starts - 1)):
            candidates.append(
                GPHyperparams(
                    base_ls * np.exp(rng.uniform(-2.0, 2.0, size=d)),
                    math.exp(rng.uniform(math.log(0.2), math.log(5.0))),
                    math.exp(rng.uniform(math.log(1e-6), math.log(0.5))),
                )
            )
        scored = sorted(
            candidates,
            key=lambda c: log_marginal_likelihood(xs, ys_std, c),
            reverse=True,
        )
        best_hp, best_val = None, -np.inf
        for cand in scored[:3]:  # polish only the most promising starts
            hp_c, val = _coordinate_search(xs, ys_std, cand)
            if val > best_val:
                best_hp, best_val = hp_c, val
        hp = best_hp if best_hp is not None else hp

    K = matern52(xs, xs, hp.lengthscales, hp.signal_var)
    K[np.diag_indices(n)] += hp.noise_var
    L, jitter = _factorize(K)
    alpha = cho_solve((L, True), ys_std)
    return GPSurrogate(
        X=xs, hyper=hp, y_mean=y_mean, y_scale=y_scale, ys_std=ys_std,
        chol=L, alpha=alpha, jitter=jitter,
    )


def gp_posterior_batch(gp: GPSurrogate, X: np.ndarray):
    """Posterior mean and standard deviation on the original y scale."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    prior_var = gp.hyper.signal_var
    if gp.n == 0:
        mu = np.full(X.shape[0], gp.y_mean)
        sd = np.full(X.shape[0], math.sqrt(prior_var) * gp.y_scale)
        return mu, sd
    Ks = matern52(X, gp.X, gp.hyper.lengthscales, gp.hyper.signal_var)
    mu_std = Ks @ gp.alpha
    V = solve_triangular(gp.chol, Ks.T, lower=True)
    var = np.maximum(prior_var - np.sum(V * V, axis=0), 0.0)
    return gp.y_mean + gp.y_scale * mu_std, gp.y_scale * np.sqrt(var)


def gp_posterior(gp: GPSurrogate, x) -> tuple[float, float]:
    mu, sd = gp_posterior_batch(gp, np.asarray(x, dtype=float)[None, :])
    return float(mu[0]), float(sd[0])


# ---------------------------------------------------------------------------
# Acquisition functions (minimization)
# ---------------------------------------------------------------------------

ACQUISITION_KINDS = ("EI", "UCB", "PI")


@dataclass
class AcquisitionKind:
    kind: str = "EI"
    kappa: float = 2.0  # exploration constant (UCB)
    xi: float = 0.0  # improvement margin (EI / PI)

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in ACQUISITION_KINDS:
            raise InvalidInput(f"unknown acquisition {self.kind!r}")
        if self.kappa < 0 or self.xi < 0:
            raise InvalidInput("kappa and xi must be non-negative")


def _norm_cdf(z):
    return 0.5 * (1.0 + erf(z / math.sqrt(2.0)))


def _norm_pdf(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def acquisition(mu, sigma, best: float, kind: AcquisitionKind):
    """Score candidate posteriors; larger is better.

    EI  = (best - mu - xi) Phi(z) + sigma phi(z),  z = (best - mu - xi) / sigma
    PI  = Phi(z)
    UCB = -(mu - kappa sigma)   (maximizing this minimizes the lower bound)
    With sigma = 0 the improvement-based rules collapse to their limits.
    """
    scalar = np.ndim(mu) == 0
    mu_arr, sd_arr = np.broadcast_arrays(
        np.atleast_1d(np.asarray(mu, dtype=float)),
        np.atleast_1d(np.asarray(sigma, dtype=float)),
    )
    if np.any(sd_arr < 0):
        raise InvalidInput("sigma must be non-negative")
    if kind.kind == "UCB":
        out = -(mu_arr - kind.kappa * sd_arr)
    else:
        gap = best - mu_arr - kind.xi
        out = np.empty_like(mu_arr, dtype=float)
        zero = sd_arr <= 0.0
        nz = ~zero
        z = gap[nz] / sd_arr[nz]
        if kind.kind == "EI":
            out[zero] = np.maximum(gap[zero], 0.0)
            out[nz] = gap[nz] * _norm_cdf(z) + sd_arr[nz] * _norm_pdf(z)
        else:  # PI
            out[zero] = (gap[zero] > 0.0).astype(float)
            out[nz] = _norm_cdf(z)
    return float(out[0]) if scalar else out


def propose_next_bo(
    gp: GPSurrogate,
    bounds: np.ndarray,
    kind: AcquisitionKind,
    n_candidates: int,
    rng: np.random.Generator,
    best: float | None = None,
) -> np.ndarray:
    """Pick the acquisition argmax over random candidates plus jittered
    copies (1% of the range) of every previously evaluated point."""
    if n_candidates < 1:
        raise InvalidInput("need at least one candidate")
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    span = hi - lo
    cands = lo + rng.random((n_candidates, len(lo))) * span
    if gp.n > 0:
        jittered = gp.X + rng.normal(size=gp.X.shape) * (0.01 * span)
        cands = np.vstack([cands, np.clip(jittered, lo, hi)])
    if best is None:
        best = float(np.min(gp.y_mean + gp.y_scale * gp.ys_std)) if gp.n else 0.0
    mu, sd = gp_posterior_batch(gp, cands)
    scores = acquisition(mu, sd, best, kind)
    return cands[int(np.argmax(scores))]
