"""Dense multilayer perceptrons: ReLU hidden layers, linear output."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatch
from .tensor import Tensor

__all__ = ["Mlp", "mlp_forward"]


@dataclass
class Mlp:
    """Weights are (n_in, n_out) matrices, biases (1, n_out) rows.

    Initialisation is scaled-uniform with bound sqrt(6 / (fan_in +
    fan_out)) from a seeded generator; biases start at zero.
    """

    layer_sizes: list[int]
    weights: list[Tensor] = field(default_factory=list)
    biases: list[Tensor] = field(default_factory=list)

    @classmethod
    def create(cls, layer_sizes: list[int], rng: np.random.Generator) -> "Mlp":
        weights, biases = [], []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = np.sqrt(6.0 / (n_in + n_out))
            weights.append(
                Tensor(rng.uniform(-bound, bound, size=(n_in, n_out)),
                       requires_grad=True)
            )
            biases.append(Tensor(np.zeros((1, n_out)), requires_grad=True))
        return cls(layer_sizes=list(layer_sizes), weights=weights, biases=biases)

    def forward(self, x: Tensor) -> Tensor:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = h.relu()
        return h

    def forward_arrays(self, x: np.ndarray) -> np.ndarray:
        """Plain-numpy forward pass (no tape) for inference."""
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.data + b.data
            if i != last:
                np.maximum(h, 0.0, out=h)
        return h

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    @property
    def n_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def to_arrays(self) -> list[np.ndarray]:
        """Parameter arrays in checkpoint order (layer-major, weights then
        bias, row-major)."""
        return [p.data for p in self.parameters()]

    def load_arrays(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise DimensionMismatch("parameter count mismatch")
        for p, a in zip(params, arrays):
            if p.data.shape != a.shape:
                raise DimensionMismatch(
                    f"parameter shape {a.shape} != expected {p.data.shape}"
                )
            p.data = np.array(a, dtype=np.float64)


def mlp_forward(m: Mlp, x: np.ndarray) -> np.ndarray:
    """Batched forward pass over plain arrays."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.layer_sizes[0]:
        raise DimensionMismatch(
            f"input shape {x.shape} incompatible with layer sizes {m.layer_sizes}"
        )
    return m.forward_arrays(x)
