"""Array-valued reverse-mode autodiff.

Covers exactly the operation set the models need: dense matmul, add
(with row-vector bias broadcast), elementwise multiply, ReLU, square,
mean, concatenation, row indexing, and fixed sparse operators applied to
dense operands.  Data is always float64.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch, GraphNotBuilt

__all__ = ["Tensor", "concat", "csr_matmul"]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in parents
        )
        self._parents = parents
        self._backward_fn = backward_fn

    # -- graph plumbing ----------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-mode pass seeding d(self)/d(self) = 1."""
        if not self._parents and not self.requires_grad:
            raise GraphNotBuilt("tensor has no recorded forward graph")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- ops ------------------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def __matmul__(self, other: "Tensor") -> "Tensor":
        a, b = self, other
        if a.data.shape[-1] != b.data.shape[0]:
            raise DimensionMismatch(
                f"matmul {a.data.shape} @ {b.data.shape}"
            )
        out_data = a.data @ b.data

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)

        return Tensor(out_data, parents=(a, b), backward_fn=bwd)

    def __add__(self, other) -> "Tensor":
        b = other if isinstance(other, Tensor) else Tensor(other)
        a = self
        out_data = a.data + b.data

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor(out_data, parents=(a, b), backward_fn=bwd)

    def __sub__(self, other) -> "Tensor":
        b = other if isinstance(other, Tensor) else Tensor(other)
        a = self
        out_data = a.data - b.data

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.data.shape))

        return Tensor(out_data, parents=(a, b), backward_fn=bwd)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            a = self
            s = float(other)

            def bwd_scalar(g):
                if a.requires_grad:
                    a._accumulate(s * g)

            return Tensor(a.data * s, parents=(a,), backward_fn=bwd_scalar)
        a, b = self, other
        out_data = a.data * b.data

        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor(out_data, parents=(a, b), backward_fn=bwd)

    __rmul__ = __mul__

    def relu(self) -> "Tensor":
        a = self
        mask = a.data > 0  # subgradient 0 at exactly 0

        def bwd(g):
            if a.requires_grad:
                a._accumulate(g * mask)

        return Tensor(a.data * mask, parents=(a,), backward_fn=bwd)

    def square(self) -> "Tensor":
        a = self

        def bwd(g):
            if a.requires_grad:
                a._accumulate(2.0 * a.data * g)

        return Tensor(a.data * a.data, parents=(a,), backward_fn=bwd)

    def mean(self) -> "Tensor":
        a = self
        n = a.data.size

        def bwd(g):
            if a.requires_grad:
                a._accumulate(np.full(a.data.shape, float(g) / n))

        return Tensor(a.data.mean(), parents=(a,), backward_fn=bwd)

    def sum(self) -> "Tensor":
        a = self

        def bwd(g):
            if a.requires_grad:
                a._accumulate(np.full(a.data.shape, float(g)))

        return Tensor(a.data.sum(), parents=(a,), backward_fn=bwd)

    def rows(self, index) -> "Tensor":
        """Row-index (gather); index is an integer array or slice."""
        a = self
        out_data = a.data[index]

        def bwd(g):
            if a.requires_grad:
                acc = np.zeros_like(a.data)
                np.add.at(acc, index, g)
                a._accumulate(acc)

        return Tensor(out_data, parents=(a,), backward_fn=bwd)

    def cols(self, j0: int, j1: int) -> "Tensor":
        a = self
        out_data = a.data[:, j0:j1]

        def bwd(g):
            if a.requires_grad:
                acc = np.zeros_like(a.data)
                acc[:, j0:j1] = g
                a._accumulate(acc)

        return Tensor(out_data, parents=(a,), backward_fn=bwd)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    offsets = np.cumsum([0] + [d.shape[axis] for d in datas])

    def bwd(g):
        for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(a, b)
                t._accumulate(g[tuple(sl)])

    return Tensor(out_data, parents=tuple(tensors), backward_fn=bwd)


def csr_matmul(mat, mat_t, x: Tensor) -> Tensor:
    """Apply a fixed sparse operator to a dense tensor.

    ``mat_t`` must be the transpose of ``mat`` (precomputed CSR); the
    operator itself is constant, gradients flow through ``x`` only.
    """
    out_data = mat @ x.data

    def bwd(g):
        if x.requires_grad:
            x._accumulate(mat_t @ g)

    return Tensor(out_data, parents=(x,), backward_fn=bwd)
