"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every primitive applied during a forward pass.
Walking the tape backwards accumulates exact gradients into the leaves.
Only the handful of primitives the encoder and the objectives need are
provided.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    __slots__ = ("value", "parents", "backward_fn", "grad", "tape", "name")

    def __init__(self, value, tape, parents=(), backward_fn=None, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name!r})"


class Tape:
    """Ordered record of a forward computation."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.leaves: dict[str, Var] = {}

    def leaf(self, value, name=None) -> Var:
        v = Var(np.asarray(value, dtype=np.float64), self, name=name)
        self.nodes.append(v)
        if name is not None:
            self.leaves[name] = v
        return v

    def record(self, value, parents, backward_fn) -> Var:
        v = Var(value, self, parents, backward_fn)
        self.nodes.append(v)
        return v

    def backward(self, output: Var, upstream=None) -> dict[str, np.ndarray]:
        """Reverse accumulation from ``output``; returns gradients of named leaves."""
        for node in self.nodes:
            node.grad = None
        if upstream is None:
            upstream = np.ones_like(output.value)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != output.value.shape:
            raise ValueError(
                f"upstream gradient shape {upstream.shape} != output shape {output.value.shape}"
            )
        output.grad = upstream.copy()
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            for parent, g in zip(node.parents, node.backward_fn(node.grad)):
                if parent is None or g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        return {
            name: (v.grad if v.grad is not None else np.zeros_like(v.value))
            for name, v in self.leaves.items()
        }


def _lift(x, tape):
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x, dtype=np.float64), tape)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def add(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    sa, sb = a.value.shape, b.value.shape
    return tape.record(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    sa, sb = a.value.shape, b.value.shape
    return tape.record(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    return tape.record(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    out = av / bv
    return tape.record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    return tape.record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def sqrt(a: Var) -> Var:
    out = np.sqrt(a.value)
    return a.tape.record(out, (a,), lambda g: (g * 0.5 / out,))


def square(a: Var) -> Var:
    av = a.value
    return a.tape.record(av * av, (a,), lambda g: (2.0 * g * av,))


def relu(a: Var) -> Var:
    mask = (a.value > 0).astype(np.float64)
    return a.tape.record(a.value * mask, (a,), lambda g: (g * mask,))


def total(a: Var, axis=None, keepdims=False) -> Var:
    shape = a.value.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return a.tape.record(np.asarray(out), (a,), back)


def mean(a: Var) -> Var:
    n = a.value.size
    return mul(total(a), 1.0 / n)


def gather_rows(table: Var, index) -> Var:
    index = np.asarray(index, dtype=np.int64)

    def back(g):
        out = np.zeros_like(table.value)
        np.add.at(out, index, g)
        return (out,)

    return table.tape.record(table.value[index], (table,), back)


def segment_mean(a: Var, lengths) -> Var:
    """Means of consecutive row blocks of sizes ``lengths`` (all positive)."""
    lengths = np.asarray(lengths, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    scale = 1.0 / lengths.astype(np.float64)[:, None]
    out = np.add.reduceat(a.value, starts, axis=0) * scale
    return a.tape.record(out, (a,), lambda g: (np.repeat(g * scale, lengths, axis=0),))


def take_columns(a: Var, cols) -> Var:
    shape = a.value.shape

    def back(g):
        out = np.zeros(shape)
        out[..., cols] = g
        return (out,)

    return a.tape.record(a.value[..., cols], (a,), back)


def interleave(re: Var, im: Var) -> Var:
    """Stack ``re``/``im`` (..., d) into the realized layout (..., 2d)."""
    shape = re.value.shape[:-1] + (2 * re.value.shape[-1],)
    out = np.empty(shape)
    out[..., 0::2] = re.value
    out[..., 1::2] = im.value
    return re.tape.record(out, (re, im), lambda g: (g[..., 0::2], g[..., 1::2]))


def logsumexp(a: Var, axis=-1) -> Var:
    av = a.value
    m = av.max(axis=axis, keepdims=True)
    e = np.exp(av - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (m + np.log(s)).squeeze(axis)
    soft = e / s
    return a.tape.record(out, (a,), lambda g: (np.expand_dims(g, axis) * soft,))


def transpose(a: Var) -> Var:
    return a.tape.record(a.value.T, (a,), lambda g: (g.T,))


def cos(a: Var) -> Var:
    av = a.value
    return a.tape.record(np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def sin(a: Var) -> Var:
    av = a.value
    return a.tape.record(np.sin(av), (a,), lambda g: (g * np.cos(av),))
