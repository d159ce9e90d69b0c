from __future__ import annotations

import numpy as np
import pytest

from simsched.core import StochasticSystem
from simsched.skeleton import CausalSkeleton, VariableSpec


class Bowl(StochasticSystem):
    """Noisy quadratic test objective with minimum at 0.5 in every coordinate."""

    description = "noisy quadratic bowl"

    def __init__(self, d: int = 3, noise: float = 0.01, lo: float = -2.0, hi: float = 3.0):
        self.d, self.noise = d, noise
        self._bounds = np.array([[lo, hi]] * d)

    @property
    def dimension(self) -> int:
        return self.d

    @property
    def bounds(self) -> np.ndarray:
        return self._bounds

    def evaluate(self, x, rng):
        return float(np.sum((np.asarray(x) - 0.5) ** 2) + self.noise * rng.normal())


class DeterministicSystem(StochasticSystem):
    """Wraps a plain function of x; ignores the noise stream."""

    description = "deterministic test function"

    def __init__(self, fn, d=1, lo=0.0, hi=1.0, integrality=None):
        self.fn, self.d = fn, d
        self._bounds = np.array([[lo, hi]] * d)
        self._integrality = (
            np.zeros(d, dtype=bool) if integrality is None else np.asarray(integrality, bool)
        )

    @property
    def dimension(self) -> int:
        return self.d

    @property
    def bounds(self) -> np.ndarray:
        return self._bounds

    @property
    def integrality(self) -> np.ndarray:
        return self._integrality

    def evaluate(self, x, rng):
        return float(self.fn(np.asarray(x, dtype=float)))


@pytest.fixture
def bowl():
    return Bowl()


@pytest.fixture
def chain_skeleton():
    variables = [
        VariableSpec("x", "input level", kind="input"),
        VariableSpec("z", "internal state", kind="latent"),
        VariableSpec("y", "objective", kind="objective"),
    ]
    return CausalSkeleton(variables, {("x", "z"), ("z", "y")})


@pytest.fixture
def direct_skeleton():
    variables = [
        VariableSpec("x", "input level", kind="input"),
        VariableSpec("y", "objective", kind="objective"),
    ]
    return CausalSkeleton(variables, {("x", "y")})
