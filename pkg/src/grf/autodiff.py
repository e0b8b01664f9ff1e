"""Reverse-mode automatic differentiation over dense float64 arrays.

A small tape engine: every operation records its parent tensors and a
closure that routes the output gradient back to them.  It implements
exactly the primitives the residual flows need -- broadcast arithmetic,
2-D matmul, ELU together with its derivative as a first-class op (the
Jacobian-vector products of a residual block reference ``elu_prime``
directly, so its own gradient must be available), and a full-sum
reduction.  Everything else stays in plain numpy where no gradient is
required.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over the axes numpy broadcasting added or stretched."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_prime(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


class Tensor:
    """Array node in the computation tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # Make numpy defer binary ops to our reflected operators instead of
    # trying to coerce Tensor into an object array.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction helpers ------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _node(data, parents, backward) -> "Tensor":
        if any(p.requires_grad for p in parents):
            return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
        return Tensor(data)

    def _add_grad(self, g: np.ndarray) -> None:
        self.grad += _unbroadcast(g, self.data.shape)

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other)
        out_parents = (self, other)

        def backward(out):
            if self.requires_grad:
                self._add_grad(out.grad)
            if other.requires_grad:
                other._add_grad(out.grad)

        return Tensor._node(self.data + other.data, out_parents, backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(out):
            if self.requires_grad:
                self._add_grad(-out.grad)

        return Tensor._node(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)

        def backward(out):
            if self.requires_grad:
                self._add_grad(out.grad * other.data)
            if other.requires_grad:
                other._add_grad(out.grad * self.data)

        return Tensor._node(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return self * (1.0 / float(other))

    def __matmul__(self, other):
        other = Tensor._lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul is restricted to 2-D operands")

        def backward(out):
            if self.requires_grad:
                self._add_grad(out.grad @ other.data.T)
            if other.requires_grad:
                other._add_grad(self.data.T @ out.grad)

        return Tensor._node(self.data @ other.data, (self, other), backward)

    def __rmatmul__(self, other):
        return Tensor._lift(other) @ self

    # -- nonlinearities and reductions ------------------------------------

    def elu(self):
        x = self.data

        def backward(out):
            if self.requires_grad:
                self._add_grad(out.grad * _elu_prime(x))

        return Tensor._node(_elu(x), (self,), backward)

    def elu_prime(self):
        x = self.data
        # d/dx elu'(x) = exp(x) on the negative branch, 0 elsewhere
        second = np.where(x >= 0.0, 0.0, np.exp(np.minimum(x, 0.0)))

        def backward(out):
            if self.requires_grad:
                self._add_grad(out.grad * second)

        return Tensor._node(_elu_prime(x), (self,), backward)

    def sum(self):
        def backward(out):
            if self.requires_grad:
                self._add_grad(np.broadcast_to(out.grad, self.data.shape))

        return Tensor._node(self.data.sum(), (self,), backward)

    # -- backward pass ----------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar node; leaf gradients land in `.grad`."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        for node in topo:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node)


# Dispatch helpers: flow code is written once against these and runs on
# plain arrays (no tape) or Tensors (tape) depending on the inputs.

def elu(x):
    return x.elu() if isinstance(x, Tensor) else _elu(np.asarray(x, dtype=np.float64))


def elu_prime(x):
    return x.elu_prime() if isinstance(x, Tensor) else _elu_prime(np.asarray(x, dtype=np.float64))


def sum_all(x):
    return x.sum() if isinstance(x, Tensor) else float(np.sum(x))


def value_of(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)
