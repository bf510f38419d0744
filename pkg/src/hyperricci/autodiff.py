"""A small reverse-mode differentiation tape over numpy arrays.

Only the primitives the learned diffusion model needs are provided.  Every
operation records its primal value and a vector-Jacobian product on the tape;
:meth:`Tape.backward` replays the record in reverse creation order, which is
a valid topological order because inputs always exist before outputs.

Example
-------
>>> tape = Tape()
>>> x = tape.var(np.array([1.0, 2.0]), name="x")
>>> y = tsum(mul(x, x))
>>> tape.backward(y)
>>> x.grad
array([2., 4.])
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tape",
    "Var",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "spmm",
    "relu",
    "tsum",
    "rowdot",
    "normalize_rows",
    "cross_entropy",
    "reshape",
]


class Var:
    """A value on a tape; ``grad`` is filled by :meth:`Tape.backward`."""

    def __init__(self, tape: "Tape", value: np.ndarray, parents=(), requires_grad: bool = True,
                 name: Optional[str] = None):
        self.tape = tape
        self.value = value
        self.parents = parents          # tuple of (Var, vjp)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self.index = tape._record(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"


class Tape:
    """Ordered record of every value produced in one forward pass."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.relu_masks: list[np.ndarray] = []   # on/off pattern of every relu, in order

    def _record(self, v: Var) -> int:
        self.nodes.append(v)
        return len(self.nodes) - 1

    def var(self, value, name: Optional[str] = None) -> Var:
        """A differentiable leaf."""
        return Var(self, np.array(value, dtype=np.float64), name=name)

    def const(self, value) -> Var:
        return Var(self, np.asarray(value, dtype=np.float64), requires_grad=False)

    def backward(self, root: Var, seed: Optional[np.ndarray] = None) -> None:
        """Accumulate d(root)/d(v) into ``v.grad`` for every recorded ``v``."""
        if root.tape is not self:
            raise ValueError("root belongs to another tape")
        for v in self.nodes:
            v.grad = None
        root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=np.float64)
        for v in reversed(self.nodes[: root.index + 1]):
            if v.grad is None or not v.parents:
                continue
            for parent, vjp in v.parents:
                if not parent.requires_grad:
                    continue
                g = vjp(v.grad)
                if g.shape != parent.value.shape:
                    raise AssertionError(f"adjoint shape {g.shape} != primal shape {parent.value.shape}")
                parent.grad = g if parent.grad is None else parent.grad + g


def _lift(tape: Tape, x) -> Var:
    return x if isinstance(x, Var) else tape.const(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(tape: Tape, value, parents) -> Var:
    live = tuple((p, f) for p, f in parents if p.requires_grad)
    return Var(tape, value, live, requires_grad=bool(live))


def add(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return _make(t, a.value + b.value, (
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ))


def sub(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return _make(t, a.value - b.value, (
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: -_unbroadcast(g, b.shape)),
    ))


def mul(a, b) -> Var:
    """Elementwise product with numpy broadcasting."""
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return _make(t, a.value * b.value, (
        (a, lambda g: _unbroadcast(g * b.value, a.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.shape)),
    ))


def scale(a: Var, c: float) -> Var:
    return _make(a.tape, a.value * c, ((a, lambda g: g * c),))


def matmul(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return _make(t, a.value @ b.value, (
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    ))


def spmm(A: sp.spmatrix, x: Var) -> Var:
    """Constant sparse matrix times a dense ``Var``."""
    A = sp.csr_matrix(A)
    At = A.T.tocsr()
    return _make(x.tape, np.asarray(A @ x.value), ((x, lambda g: np.asarray(At @ g)),))


def relu(x: Var) -> Var:
    mask = x.value > 0
    x.tape.relu_masks.append(mask)
    return _make(x.tape, np.where(mask, x.value, 0.0), ((x, lambda g: g * mask),))


def tsum(x: Var) -> Var:
    return _make(x.tape, np.array(x.value.sum()), ((x, lambda g: np.broadcast_to(g, x.shape).copy()),))


def reshape(x: Var, shape) -> Var:
    old = x.shape
    return _make(x.tape, x.value.reshape(shape), ((x, lambda g: g.reshape(old)),))


def rowdot(a, b) -> Var:
    """Row-wise inner products as an ``(n, 1)`` column."""
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    val = np.einsum("ij,ij->i", a.value, b.value)[:, None]
    return _make(t, val, (
        (a, lambda g: g * b.value),
        (b, lambda g: g * a.value),
    ))


def normalize_rows(x: Var, floor: float = 1e-12) -> Var:
    """``x_i / max(||x_i||, floor)`` with the exact Jacobian."""
    raw = np.linalg.norm(x.value, axis=1, keepdims=True)
    clipped = raw < floor
    norms = np.maximum(raw, floor)
    y = x.value / norms

    def vjp(g):
        radial = np.where(clipped, 0.0, np.sum(y * g, axis=1, keepdims=True))
        return (g - y * radial) / norms

    return _make(x.tape, y, ((x, vjp),))


def cross_entropy(logits: Var, labels: np.ndarray, index: Optional[Sequence[int]] = None) -> Var:
    """Mean softmax cross-entropy over the rows in ``index``."""
    labels = np.asarray(labels)
    idx = np.arange(logits.shape[0]) if index is None else np.asarray(index)
    z = logits.value[idx]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(idx.size), labels[idx]].mean()

    def vjp(g):
        p = np.exp(logp)
        p[np.arange(idx.size), labels[idx]] -= 1.0
        out = np.zeros_like(logits.value)
        np.add.at(out, idx, p * (float(g) / idx.size))
        return out

    return _make(logits.tape, np.array(loss), ((logits, vjp),))
