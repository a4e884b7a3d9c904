"""Minimal reverse-mode autodiff over numpy arrays.

Every op appends one node to the tape owning its inputs; nodes are created in
topological order, so ``backward`` walks the list in reverse and visits each
node exactly once.
"""
from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "tape", "name")

    def __init__(self, value, tape, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    @property
    def T(self):
        return swap_last(self)


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, requires_grad=True, name=None) -> Var:
        v = Var(np.asarray(value, dtype=np.float64), self, requires_grad=requires_grad, name=name)
        self.nodes.append(v)
        return v

    def const(self, value, name=None) -> Var:
        return self.leaf(value, requires_grad=False, name=name)

    def _record(self, value, parents, backward_fn) -> Var:
        needs = any(p.requires_grad for p in parents)
        v = Var(value, self, parents if needs else (), backward_fn if needs else None, needs)
        self.nodes.append(v)
        return v

    def backward(self, out: Var, seed=None):
        if seed is None:
            if out.value.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(out.value)
        for node in self.nodes:
            node.grad = None
        out.grad = np.asarray(seed, dtype=np.float64)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def _lift(x, tape) -> Var:
    if isinstance(x, Var):
        return x
    return tape.const(np.asarray(x, dtype=np.float64))


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    sa, sb = a.value.shape, b.value.shape
    return tape._record(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    sa, sb = a.value.shape, b.value.shape
    return tape._record(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value
    return tape._record(
        av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def matmul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    av, bv = a.value, b.value

    def back(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return tape._record(av @ bv, (a, b), back)


def swap_last(x: Var) -> Var:
    return x.tape._record(np.swapaxes(x.value, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def permute(x: Var, axes) -> Var:
    inv = np.argsort(axes)
    return x.tape._record(np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inv),))


def reshape(x: Var, shape) -> Var:
    old = x.value.shape
    return x.tape._record(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def take(x: Var, idx) -> Var:
    """Basic or integer-array indexing; gradients scatter-add back."""
    shape = x.value.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return x.tape._record(x.value[idx], (x,), back)


def concat(xs, axis=0) -> Var:
    tape = _tape_of(*xs)
    xs = [_lift(x, tape) for x in xs]
    sizes = [x.value.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return tape._record(
        np.concatenate([x.value for x in xs], axis=axis),
        tuple(xs),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def sum_(x: Var, axis=None, keepdims=False) -> Var:
    shape = x.value.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return x.tape._record(np.asarray(x.value.sum(axis=axis, keepdims=keepdims)), (x,), back)


def mean(x: Var) -> Var:
    return mul(sum_(x), 1.0 / x.value.size)


def exp(x: Var) -> Var:
    out = np.exp(x.value)
    return x.tape._record(out, (x,), lambda g: (g * out,))


def log(x: Var) -> Var:
    xv = x.value
    return x.tape._record(np.log(xv), (x,), lambda g: (g / xv,))


def abs_(x: Var) -> Var:
    xv = x.value
    return x.tape._record(np.abs(xv), (x,), lambda g: (g * np.sign(xv),))


def sin(x: Var) -> Var:
    xv = x.value
    return x.tape._record(np.sin(xv), (x,), lambda g: (g * np.cos(xv),))


def cos(x: Var) -> Var:
    xv = x.value
    return x.tape._record(np.cos(xv), (x,), lambda g: (-g * np.sin(xv),))


def sigmoid(x: Var) -> Var:
    out = _sigmoid(x.value)
    return x.tape._record(out, (x,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(x: Var) -> Var:
    xv = x.value
    out = -np.logaddexp(0.0, -xv)
    return x.tape._record(out, (x,), lambda g: (g * _sigmoid(-xv),))


def silu(x: Var) -> Var:
    xv = x.value
    s = _sigmoid(xv)
    return x.tape._record(xv * s, (x,), lambda g: (g * (s + xv * s * (1.0 - s)),))


def power(x: Var, p: float) -> Var:
    xv = x.value
    if p == 2.0:
        return x.tape._record(xv * xv, (x,), lambda g: (g * 2.0 * xv,))
    return x.tape._record(xv**p, (x,), lambda g: (g * p * xv ** (p - 1.0),))


def _sigmoid(x):
    # tanh form: one ufunc, no overflow for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def masked_softmax(x: Var, blocked=None) -> Var:
    """Softmax over the last axis with ``blocked`` entries forced to exactly 0.

    The row max is taken over unblocked entries only, so values in blocked
    columns cannot influence other entries even through rounding. Rows with
    every entry blocked come out as all-zero vectors.
    """
    xv = x.value
    if blocked is None:
        m = xv.max(axis=-1, keepdims=True)
        e = np.exp(xv - m)
        out = e / e.sum(axis=-1, keepdims=True)
    else:
        blocked = np.broadcast_to(blocked, xv.shape)
        masked = np.where(blocked, -np.inf, xv)
        m = masked.max(axis=-1, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        e = np.where(blocked, 0.0, np.exp(masked - m))
        s = e.sum(axis=-1, keepdims=True)
        out = np.divide(e, s, out=np.zeros_like(e), where=s > 0.0)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return x.tape._record(out, (x,), back)


def layer_norm(x: Var, gamma: Var, beta: Var, eps=1e-5) -> Var:
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv = gamma.value

    def back(g):
        gx = g * gv
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        dgamma = _unbroadcast(g * xhat, gv.shape)
        dbeta = _unbroadcast(g, beta.value.shape)
        return dx, dgamma, dbeta

    return x.tape._record(xhat * gv + beta.value, (x, gamma, beta), back)
