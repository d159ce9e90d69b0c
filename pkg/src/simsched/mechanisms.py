"""Small parametric mechanisms (linear maps, one-or-more hidden-layer MLPs)
with analytic gradients for both parameters and inputs.

Datasets here are small by premise, so everything is full-batch numpy.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInput

FAMILIES = ("linear", "mlp")
ACTIVATIONS = ("tanh", "relu")


class Mechanism:
    """One node's map from concatenated parent states to its own state."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        family: str = "mlp",
        hidden: tuple[int, ...] = (16,),
        activation: str = "tanh",
        rng: np.random.Generator | None = None,
    ):
        if family not in FAMILIES:
            raise InvalidInput(f"unknown mechanism family {family!r}")
        if activation not in ACTIVATIONS:
            raise InvalidInput(f"unknown activation {activation!r}")
        if out_dim < 1 or in_dim < 0:
            raise InvalidInput("bad mechanism dimensions")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.family = family
        self.hidden = tuple(int(h) for h in hidden) if family == "mlp" else ()
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        dims = [in_dim, *self.hidden, out_dim]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for a, b in zip(dims[:-1], dims[1:]):
            scale = 1.0 / np.sqrt(max(a, 1))
            self.weights.append(rng.normal(0.0, scale, size=(a, b)))
            self.biases.append(np.zeros(b))

    # -- forward / backward -------------------------------------------------

    def _act(self, a: np.ndarray) -> np.ndarray:
        return np.tanh(a) if self.activation == "tanh" else np.maximum(a, 0.0)

    def _act_grad(self, a: np.ndarray, h: np.ndarray) -> np.ndarray:
        return 1.0 - h * h if self.activation == "tanh" else (a > 0).astype(float)

    def forward(self, X: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cache(X)
        return out

    def forward_cache(self, X: np.ndarray):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        acts = [X]
        pre = []
        h = X
        n_layers = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ W + b
            pre.append(a)
            h = self._act(a) if i < n_layers - 1 else a
            acts.append(h)
        return acts[-1], (acts, pre)

    def backprop(self, cache, G: np.ndarray):
        """Given dL/d(output), return (param grads, dL/d(input))."""
        acts, pre = cache
        gW = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        g = np.asarray(G, dtype=float)
        for i in range(len(self.weights) - 1, -1, -1):
            gW[i] = acts[i].T @ g
            gb[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                g = g * self._act_grad(pre[i - 1], acts[i])
        return list(zip(gW, gb)), g

    def apply_grads(self, grads, lr: float) -> None:
        for i, (gW, gb) in enumerate(grads):
            self.weights[i] -= lr * gW
            self.biases[i] -= lr * gb

    # -- (de)serialization ---------------------------------------------------

    def copy(self) -> "Mechanism":
        other = Mechanism.__new__(Mechanism)
        other.in_dim, other.out_dim = self.in_dim, self.out_dim
        other.family, other.hidden, other.activation = self.family, self.hidden, self.activation
        other.weights = [W.copy() for W in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def get_flat(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[k] = flat[i : i + W.size].reshape(W.shape).copy()
            i += W.size
            self.biases[k] = flat[i : i + b.size].reshape(b.shape).copy()
            i += b.size

    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def to_dict(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "family": self.family,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Mechanism":
        mech = cls(
            doc["in_dim"],
            doc["out_dim"],
            family=doc["family"],
            hidden=tuple(doc.get("hidden", ())),
            activation=doc.get("activation", "tanh"),
        )
        mech.weights = [np.array(W, dtype=float).reshape(np.shape(W)) for W in doc["weights"]]
        mech.biases = [np.array(b, dtype=float) for b in doc["biases"]]
        return mech


def linear_mechanism(matrix, bias=None) -> Mechanism:
    """Build a linear mechanism with fixed coefficients (handy in tests)."""
    W = np.atleast_2d(np.asarray(matrix, dtype=float))
    mech = Mechanism(W.shape[0], W.shape[1], family="linear")
    mech.weights = [W.copy()]
    mech.biases = [np.zeros(W.shape[1]) if bias is None else np.asarray(bias, dtype=float)]
    return mech
