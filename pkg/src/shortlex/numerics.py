"""Dense array math with a small reverse-mode tape.

Every op accepts plain ``numpy`` arrays or :class:`Var` nodes. When no argument
is a ``Var`` the op is a plain numpy computation and nothing is recorded, so the
same model code serves training (on a tape) and inference (bare arrays).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class Var:
    """A node on a :class:`Tape`."""

    __slots__ = ("value", "grad", "tape", "name")

    def __init__(self, value: np.ndarray, tape: "Tape", name: Optional[str] = None):
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.tape = tape
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(name={self.name!r}, shape={self.value.shape})"


class Tape:
    """Ordered record of primitive ops, replayed backwards by :meth:`backward`.

    ``block(x, name)`` inserts a named boundary: downstream gradient arriving
    at the boundary is recorded in ``blocked[name]`` but not propagated to
    ``x``. The same upstream node can still receive gradient through any other
    path that uses ``x`` directly.
    """

    def __init__(self):
        self._ops: list[tuple[Var, tuple, Callable]] = []
        self.params: dict[str, Var] = {}
        self.blocked: dict[str, np.ndarray] = {}

    def param(self, value: np.ndarray, name: str) -> Var:
        v = Var(np.asarray(value), self, name)
        self.params[name] = v
        return v

    def const(self, value) -> Var:
        return Var(np.asarray(value), self)

    def record(self, out: Var, parents: tuple, backward: Callable) -> Var:
        self._ops.append((out, parents, backward))
        return out

    def block(self, x: Var, name: str) -> Var:
        out = Var(x.value, self, name)

        def back(g):
            acc = self.blocked.get(name)
            self.blocked[name] = g.copy() if acc is None else acc + g
            return (None,)

        return self.record(out, (x,), back)

    def __len__(self):
        return len(self._ops)

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        if loss.value.size != 1:
            raise ShapeError("backward() needs a scalar loss")
        loss.grad = np.ones_like(loss.value)
        for out, parents, back in reversed(self._ops):
            if out.grad is None:
                continue
            grads = back(out.grad)
            for p, g in zip(parents, grads):
                if g is None or not isinstance(p, Var):
                    continue
                if p.grad is None:
                    p.grad = g
                else:
                    p.grad = p.grad + g
        return {
            name: (v.grad if v.grad is not None else np.zeros_like(v.value))
            for name, v in self.params.items()
        }


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x)


def _tape_of(*args) -> Optional[Tape]:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b):
    out_v = value(a) + value(b)
    tape = _tape_of(a, b)
    if tape is None:
        return out_v
    sa, sb = np.shape(value(a)), np.shape(value(b))
    return tape.record(
        Var(out_v, tape), (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b):
    out_v = value(a) - value(b)
    tape = _tape_of(a, b)
    if tape is None:
        return out_v
    sa, sb = np.shape(value(a)), np.shape(value(b))
    return tape.record(
        Var(out_v, tape), (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
    )


def mul(a, b):
    av, bv = value(a), value(b)
    out_v = av * bv
    tape = _tape_of(a, b)
    if tape is None:
        return out_v
    sa, sb = np.shape(av), np.shape(bv)
    return tape.record(
        Var(out_v, tape),
        (a, b),
        lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)),
    )


def relu(x):
    xv = value(x)
    out_v = np.maximum(xv, 0.0)
    tape = _tape_of(x)
    if tape is None:
        return out_v
    return tape.record(Var(out_v, tape), (x,), lambda g: (g * (xv > 0),))


def sigmoid(x):
    """Logistic function, evaluated without overflow for any finite input."""
    xv = value(x)
    out_v = np.exp(-np.logaddexp(0.0, -xv))
    tape = _tape_of(x)
    if tape is None:
        return out_v
    return tape.record(Var(out_v, tape), (x,), lambda g: (g * out_v * (1.0 - out_v),))


def log_sigmoid(x):
    """log(sigmoid(x)) computed as -softplus(-x); never materializes log(0)."""
    xv = value(x)
    out_v = -np.logaddexp(0.0, -xv)
    tape = _tape_of(x)
    if tape is None:
        return out_v
    # d/dx log sigmoid(x) = sigmoid(-x)
    return tape.record(
        Var(out_v, tape), (x,), lambda g: (g * np.exp(-np.logaddexp(0.0, xv)),)
    )


def softmax(x, axis: int = -1):
    xv = value(x)
    if xv.size == 0 or xv.shape[axis] == 0:
        raise ShapeError("softmax of an empty vector")
    e = np.exp(xv - xv.max(axis=axis, keepdims=True))
    out_v = e / e.sum(axis=axis, keepdims=True)
    tape = _tape_of(x)
    if tape is None:
        return out_v

    def back(g):
        return (out_v * (g - (g * out_v).sum(axis=axis, keepdims=True)),)

    return tape.record(Var(out_v, tape), (x,), back)


def log_softmax(x, axis: int = -1):
    xv = value(x)
    if xv.size == 0 or xv.shape[axis] == 0:
        raise ShapeError("log_softmax of an empty vector")
    shifted = xv - xv.max(axis=axis, keepdims=True)
    out_v = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    tape = _tape_of(x)
    if tape is None:
        return out_v

    def back(g):
        return (g - np.exp(out_v) * g.sum(axis=axis, keepdims=True),)

    return tape.record(Var(out_v, tape), (x,), back)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    av, bv = value(a), value(b)
    if av.ndim == 0 or bv.ndim == 0 or av.shape[-1] != bv.shape[-2 if bv.ndim > 1 else 0]:
        raise ShapeError(f"matmul shape mismatch: {av.shape} x {bv.shape}")
    out_v = av @ bv
    tape = _tape_of(a, b)
    if tape is None:
        return out_v

    def back(g):
        if bv.ndim == 2 and av.ndim > 2:
            ga = g @ bv.T
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return tape.record(Var(out_v, tape), (a, b), back)


def layer_norm(x, gain, bias, eps: float = 1e-6):
    xv, gv = value(x), value(gain)
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_v = xhat * gv + value(bias)
    tape = _tape_of(x, gain, bias)
    if tape is None:
        return out_v
    n = xv.shape[-1]

    def back(g):
        gx_hat = g * gv
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        flat = g.reshape(-1, n)
        return gx, (flat * xhat.reshape(-1, n)).sum(axis=0), flat.sum(axis=0)

    return tape.record(Var(out_v, tape), (x, gain, bias), back)


# ---------------------------------------------------------------- shape ops


def reshape(x, shape):
    xv = value(x)
    out_v = xv.reshape(shape)
    tape = _tape_of(x)
    if tape is None:
        return out_v
    return tape.record(Var(out_v, tape), (x,), lambda g: (g.reshape(xv.shape),))


def transpose(x, axes):
    out_v = np.transpose(value(x), axes)
    tape = _tape_of(x)
    if tape is None:
        return out_v
    inv = np.argsort(axes)
    return tape.record(Var(out_v, tape), (x,), lambda g: (np.transpose(g, inv),))


def take_rows(table, ids):
    """Gather rows ``table[ids]``; the backward pass scatter-adds into the table."""
    tv = value(table)
    ids = np.asarray(ids)
    out_v = tv[ids]
    tape = _tape_of(table)
    if tape is None:
        return out_v

    def back(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, tv.shape[-1]))
        return (gt,)

    return tape.record(Var(out_v, tape), (table,), back)


def sum_all(x, axis=None):
    xv = value(x)
    out_v = np.asarray(xv.sum(axis=axis))
    tape = _tape_of(x)
    if tape is None:
        return out_v

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, xv.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), xv.shape).copy(),)

    return tape.record(Var(out_v, tape), (x,), back)


def masked_max(x, mask, axis: int):
    """Max over ``axis`` ignoring positions where ``mask`` is False.

    ``mask`` has the shape of ``x`` with every axis except ``axis`` of size 1
    (or broadcastable to it). Masked entries act as -inf.
    """
    xv = value(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), xv.shape)
    if not mask.any(axis=axis).all():
        raise ValueError("masked_max: every position masked along the pooled axis")
    filled = np.where(mask, xv, -np.inf)
    idx = np.expand_dims(filled.argmax(axis=axis), axis)
    out_v = np.take_along_axis(xv, idx, axis=axis).squeeze(axis)
    tape = _tape_of(x)
    if tape is None:
        return out_v

    def back(g):
        gx = np.zeros_like(xv)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return tape.record(Var(out_v, tape), (x,), back)


def maxpool_cols(m, mask: Optional[Sequence[bool]] = None):
    """Row-wise max over the unmasked columns of a ``rows x cols`` matrix.

    ``mask[j]`` True means column j is padding and is ignored.
    """
    mv = value(m)
    if mv.ndim != 2:
        raise ShapeError("maxpool_cols expects a matrix")
    keep = np.ones(mv.shape[1], dtype=bool) if mask is None else ~np.asarray(mask, bool)
    if keep.shape != (mv.shape[1],):
        raise ShapeError("mask length must equal the number of columns")
    return masked_max(m, keep[None, :], axis=1)


# ---------------------------------------------------------------- gradient oracle


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4
) -> np.ndarray:
    """Central-difference gradient of a scalar function at ``x``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-10) -> float:
    """||a - b|| / max(||a||, ||b||, floor), Euclidean norms over all entries."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def check_finite(arrays: Iterable[np.ndarray]) -> bool:
    return all(np.isfinite(a).all() for a in arrays)
