"""Minimal reverse-mode differentiation on numpy arrays.

A Tape records Tensor nodes in creation order; backward() replays them in
reverse, accumulating vector-Jacobian products into each node's gradient
slot. The op set is exactly what the set networks and point-set losses
need: matmul, broadcast add/sub/mul, relu, max/min reductions, gathers,
sums/means, square/sqrt, log-sum-exp, and the shifted softplus.

Reduction ties (max, min, argsort-based gathers) break toward the lowest
index. Gradients flow only into leaves created with requires_grad=True.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError


class Tape:
    """Creation-ordered record of one forward pass; single-use for backward."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False

    def _register(self, t: "Tensor") -> "Tensor":
        self.nodes.append(t)
        return t


class Tensor:
    """A value on the tape with an optional gradient slot."""

    __slots__ = ("values", "grad", "requires_grad", "tape", "_parents", "_vjp")

    def __init__(self, tape: Tape, values, requires_grad=False, parents=(), vjp=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = tape
        self._parents = parents
        self._vjp = vjp
        tape._register(self)

    @property
    def shape(self):
        return self.values.shape


def leaf(tape: Tape, values, requires_grad: bool = True) -> Tensor:
    return Tensor(tape, values, requires_grad=requires_grad)


def _needs_grad(*tensors) -> bool:
    return any(t.requires_grad for t in tensors)


def _node(tape, values, parents, vjp) -> Tensor:
    return Tensor(tape, values, requires_grad=_needs_grad(*parents),
                  parents=parents, vjp=vjp)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to the given shape, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _node(a.tape, a.values + b.values, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _node(a.tape, a.values - b.values, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)
    return _node(a.tape, a.values * b.values, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.tape, a.values * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c) -> Tensor:
    return _node(a.tape, a.values + c, (a,), lambda g: (g,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def divide(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * a.values / b.values**2, b.shape),
        )
    return _node(a.tape, a.values / b.values, (a, b), vjp)


def logaddexp_const(a: Tensor, c: float) -> Tensor:
    """log(exp(a) + exp(c)) elementwise for a constant c."""
    vals = np.logaddexp(a.values, c)
    w = 0.5 * (1.0 + np.tanh(0.5 * (a.values - c)))
    return _node(a.tape, vals, (a,), lambda g: (g * w,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return g @ b.values.T, a.values.T @ g
    return _node(a.tape, a.values @ b.values, (a, b), vjp)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return _node(a.tape, np.where(mask, a.values, 0.0), (a,),
                 lambda g: (g * mask,))


def square(a: Tensor) -> Tensor:
    return _node(a.tape, a.values**2, (a,), lambda g: (2.0 * g * a.values,))


def sqrt(a: Tensor) -> Tensor:
    root = np.sqrt(a.values)
    # clamp keeps the subgradient finite when a distance is exactly zero
    safe = np.maximum(root, 1e-12)
    return _node(a.tape, root, (a,), lambda g: (g * 0.5 / safe,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _node(a.tape, a.values.reshape(shape), (a,),
                 lambda g: (g.reshape(old),))


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    def vjp(g):
        if axis is None:
            return (np.full(a.shape, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
    return _node(a.tape, a.values.sum(axis=axis), (a,), vjp)


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    n = a.values.size if axis is None else a.shape[axis]
    return scale(reduce_sum(a, axis=axis), 1.0 / n)


def _argreduce_vjp(a, idx, axis):
    def vjp(g):
        out = np.zeros(a.shape)
        np.put_along_axis(out, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis)
        return (out,)
    return vjp


def reduce_max(a: Tensor, axis: int) -> Tensor:
    """Max over one axis; ties route the gradient to the lowest index."""
    idx = a.values.argmax(axis=axis)
    vals = np.take_along_axis(a.values, np.expand_dims(idx, axis), axis).squeeze(axis)
    return _node(a.tape, vals, (a,), _argreduce_vjp(a, idx, axis))


def reduce_min(a: Tensor, axis: int) -> Tensor:
    """Min over one axis; ties route the gradient to the lowest index."""
    idx = a.values.argmin(axis=axis)
    vals = np.take_along_axis(a.values, np.expand_dims(idx, axis), axis).squeeze(axis)
    return _node(a.tape, vals, (a,), _argreduce_vjp(a, idx, axis))


def gather(a: Tensor, idx: np.ndarray, axis: int) -> Tensor:
    """Select entries along an axis with fixed indices (no grad through idx)."""
    vals = np.take_along_axis(a.values, idx, axis)

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, _gather_slices(idx, axis), g)
        return (out,)
    return _node(a.tape, vals, (a,), vjp)


def _gather_slices(idx: np.ndarray, axis: int):
    grids = list(np.ogrid[tuple(slice(s) for s in idx.shape)])
    grids[axis] = idx
    return tuple(grids)


def logsumexp_axis(a: Tensor, axis: int) -> Tensor:
    """Stable log-sum-exp over one axis; gradient is the softmax."""
    m = a.values.max(axis=axis, keepdims=True)
    shifted = np.exp(a.values - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = (m + np.log(total)).squeeze(axis)
    soft = shifted / total

    def vjp(g):
        return (np.expand_dims(g, axis) * soft,)
    return _node(a.tape, out, (a,), vjp)


def softplus_shifted(a: Tensor) -> Tensor:
    """SP(x) = 2*log(1 + e^x) - 2*log(2); SP(0) = 0, SP'(0) = 1."""
    x = a.values
    vals = 2.0 * (np.logaddexp(0.0, x) - np.log(2.0))
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))

    def vjp(g):
        return (g * 2.0 * sig,)
    return _node(a.tape, vals, (a,), vjp)


def backward(tape: Tape, output: Tensor, output_grad=1.0) -> None:
    """Accumulate gradients of output into every requires_grad node.

    The tape is consumed: a second backward on it raises ContractError.
    """
    if tape.consumed:
        raise ContractError("tape already consumed by a previous backward pass")
    if output.tape is not tape:
        raise ContractError("output tensor does not belong to this tape")
    tape.consumed = True
    output.grad = np.broadcast_to(
        np.asarray(output_grad, dtype=np.float64), output.shape).copy()
    for node in reversed(tape.nodes):
        if node.grad is None or node._vjp is None:
            continue
        contribs = node._vjp(node.grad)
        for parent, g in zip(node._parents, contribs):
            if not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros(parent.shape)
            parent.grad += g


def grad_or_zero(t: Tensor) -> np.ndarray:
    return t.grad if t.grad is not None else np.zeros(t.shape)
