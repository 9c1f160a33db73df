"""Differentiation engine.

Two pieces live here:

* :class:`Jet` -- forward propagation of value, gradient and Hessian of a
  scalar program with respect to a handful of tracked inputs.  Works on
  plain floats or on numpy arrays (vectorised over points).
* :class:`Tape` / :class:`Var` -- an array-valued reverse-mode tape.  Every
  primitive records its inputs, so a loss built from network input
  derivatives (computed by explicit layer recurrences) still has exact
  parameter gradients.

All arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np


class UnsupportedPrimitiveError(TypeError):
    """A program used an operation the engine does not differentiate."""


class TapeConsumedError(RuntimeError):
    """Backward was requested twice on one tape."""


class DerivativeRequestError(ValueError):
    """A derivative was requested that the chosen activation cannot supply."""


# ---------------------------------------------------------------------------
# forward jets
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _pairs(k: int) -> tuple[np.ndarray, np.ndarray]:
    iu = np.triu_indices(k)
    return iu[0], iu[1]


def _outer(ga: np.ndarray, gb: np.ndarray) -> np.ndarray:
    """Symmetrised outer product ga_i gb_j + ga_j gb_i on the upper triangle."""
    i, j = _pairs(ga.shape[-1])
    return ga[..., i] * gb[..., j] + ga[..., j] * gb[..., i]


class Jet:
    """Second-order forward jet.

    ``value`` has the batch shape, ``grad`` the batch shape plus ``(k,)``,
    ``hess`` the batch shape plus ``(k(k+1)/2,)`` -- the upper triangle in
    ``np.triu_indices`` order.  ``kink`` marks entries where relu/abs were
    evaluated exactly at zero.
    """

    __slots__ = ("value", "grad", "hess", "kink")
    __array_ufunc__ = None  # set below, after the dispatch table exists

    def __init__(self, value, grad, hess, kink=False):
        self.value = value
        self.grad = grad
        self.hess = hess
        self.kink = kink

    @property
    def k(self) -> int:
        return self.grad.shape[-1]

    def hessian(self) -> np.ndarray:
        k = self.k
        i, j = _pairs(k)
        out = np.zeros(np.shape(self.value) + (k, k))
        out[..., i, j] = self.hess
        out[..., j, i] = self.hess
        return out

    def __repr__(self):
        return f"Jet(value={self.value!r}, grad={self.grad!r}, hess={self.hess!r})"

    # -- helpers ----------------------------------------------------------
    def _lift(self, c) -> "Jet":
        c = np.asarray(c, dtype=float)
        shape = np.broadcast_shapes(np.shape(self.value), c.shape)
        return Jet(
            np.broadcast_to(c, shape).astype(float),
            np.zeros(shape + (self.k,)),
            np.zeros(shape + (self.hess.shape[-1],)),
        )

    def _chain(self, f0, f1, f2, kink=False) -> "Jet":
        f1e = np.asarray(f1)[..., None]
        f2e = np.asarray(f2)[..., None]
        i, j = _pairs(self.k)
        g = self.grad
        return Jet(
            f0,
            f1e * g,
            f2e * (g[..., i] * g[..., j]) + f1e * self.hess,
            np.logical_or(self.kink, kink),
        )

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.value + other.value, self.grad + other.grad,
                       self.hess + other.hess, np.logical_or(self.kink, other.kink))
        if isinstance(other, Var):
            return NotImplemented
        v = self.value + np.asarray(other, dtype=float)
        return Jet(v, np.broadcast_to(self.grad, np.shape(v) + (self.k,)).copy(),
                   np.broadcast_to(self.hess, np.shape(v) + self.hess.shape[-1:]).copy(),
                   self.kink)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.value, -self.grad, -self.hess, self.kink)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            a, b = self, other
            av, bv = np.asarray(a.value)[..., None], np.asarray(b.value)[..., None]
            return Jet(
                a.value * b.value,
                a.grad * bv + av * b.grad,
                a.hess * bv + _outer(a.grad, b.grad) + av * b.hess,
                np.logical_or(a.kink, b.kink),
            )
        if isinstance(other, Var):
            return NotImplemented
        c = np.asarray(other, dtype=float)
        ce = c[..., None]
        return Jet(self.value * c, self.grad * ce, self.hess * ce, self.kink)

    __rmul__ = __mul__

    def reciprocal(self):
        v = np.asarray(self.value, dtype=float)
        r = 1.0 / v
        return self._chain(r, -r * r, 2.0 * r * r * r)

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        if isinstance(other, Var):
            return NotImplemented
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, other):
        if isinstance(other, Jet):
            return jexp(other * jlog(self))
        c = float(other)
        v = np.asarray(self.value, dtype=float)
        if c == 2.0:
            return self * self
        return self._chain(v ** c, c * v ** (c - 1.0), c * (c - 1.0) * v ** (c - 2.0))

    def __rpow__(self, other):
        return jexp(self * np.log(float(other)))

    def __abs__(self):
        return jabs(self)


def _binary_chain(y: Jet, x: Jet, f0, fy, fx, fyy, fxy, fxx) -> Jet:
    fy_, fx_ = np.asarray(fy)[..., None], np.asarray(fx)[..., None]
    i, j = _pairs(y.k)
    gy, gx = y.grad, x.grad
    hess = (
        np.asarray(fyy)[..., None] * gy[..., i] * gy[..., j]
        + np.asarray(fxy)[..., None] * (gy[..., i] * gx[..., j] + gx[..., i] * gy[..., j])
        + np.asarray(fxx)[..., None] * gx[..., i] * gx[..., j]
        + fy_ * y.hess
        + fx_ * x.hess
    )
    return Jet(f0, fy_ * gy + fx_ * gx, hess, np.logical_or(y.kink, x.kink))


def jexp(a: Jet) -> Jet:
    e = np.exp(a.value)
    return a._chain(e, e, e)


def jlog(a: Jet) -> Jet:
    v = np.asarray(a.value, dtype=float)
    return a._chain(np.log(v), 1.0 / v, -1.0 / (v * v))


def jsqrt(a: Jet) -> Jet:
    s = np.sqrt(a.value)
    with np.errstate(divide="ignore"):
        return a._chain(s, 0.5 / s, -0.25 / (s * s * s))


def jsin(a: Jet) -> Jet:
    s, c = np.sin(a.value), np.cos(a.value)
    return a._chain(s, c, -s)


def jcos(a: Jet) -> Jet:
    s, c = np.sin(a.value), np.cos(a.value)
    return a._chain(c, -s, -c)


def jtanh(a: Jet) -> Jet:
    t = np.tanh(a.value)
    d = 1.0 - t * t
    return a._chain(t, d, -2.0 * t * d)


def jrelu(a: Jet) -> Jet:
    v = np.asarray(a.value, dtype=float)
    # derivative at exactly 0 is taken as 0 and flagged
    return a._chain(np.maximum(v, 0.0), (v > 0).astype(float), np.zeros_like(v), kink=(v == 0))


def jabs(a: Jet) -> Jet:
    v = np.asarray(a.value, dtype=float)
    return a._chain(np.abs(v), np.sign(v), np.zeros_like(v), kink=(v == 0))


def jatan2(y, x) -> Jet:
    if not isinstance(y, Jet):
        y = x._lift(y)
    if not isinstance(x, Jet):
        x = y._lift(x)
    yv, xv = np.asarray(y.value, dtype=float), np.asarray(x.value, dtype=float)
    r2 = xv * xv + yv * yv
    r4 = r2 * r2
    return _binary_chain(
        y, x, np.arctan2(yv, xv),
        xv / r2, -yv / r2,
        -2.0 * xv * yv / r4, (yv * yv - xv * xv) / r4, 2.0 * xv * yv / r4,
    )


def _bin(name: str, rname: str):
    def f(a, b):
        return getattr(a, name)(b) if isinstance(a, Jet) else getattr(b, rname)(a)
    return f


_JET_UFUNCS = {
    np.add: _bin("__add__", "__radd__"),
    np.subtract: _bin("__sub__", "__rsub__"),
    np.multiply: _bin("__mul__", "__rmul__"),
    np.true_divide: _bin("__truediv__", "__rtruediv__"),
    np.power: _bin("__pow__", "__rpow__"),
    np.negative: lambda a: -a,
    np.positive: lambda a: a,
    np.exp: jexp,
    np.log: jlog,
    np.sqrt: jsqrt,
    np.sin: jsin,
    np.cos: jcos,
    np.tanh: jtanh,
    np.absolute: jabs,
    np.arctan2: jatan2,
    np.square: lambda a: a * a,
}


def _jet_array_ufunc(self, ufunc, method, *inputs, **kwargs):
    if method != "__call__" or kwargs or ufunc not in _JET_UFUNCS:
        raise UnsupportedPrimitiveError(f"jet: unsupported primitive {ufunc.__name__}")
    return _JET_UFUNCS[ufunc](*inputs)


Jet.__array_ufunc__ = _jet_array_ufunc


@dataclass
class Jet2:
    """Result of :func:`jet_eval` at a single point."""

    value: float
    grad: np.ndarray
    hess: np.ndarray  # upper triangle, np.triu_indices order
    nondifferentiable: bool = False

    def hessian(self) -> np.ndarray:
        k = self.grad.shape[0]
        i, j = _pairs(k)
        out = np.zeros((k, k))
        out[i, j] = self.hess
        out[j, i] = self.hess
        return out


def seed_jets(points: np.ndarray, directions: Sequence[int]) -> list:
    """Input jets for a batch of points (shape ``(n, dim)`` or ``(dim,)``)."""
    points = np.asarray(points, dtype=float)
    directions = list(directions)
    if not directions:
        raise ValueError("at least one direction is required")
    if len(set(directions)) != len(directions):
        raise ValueError("directions must be distinct")
    k = len(directions)
    npair = k * (k + 1) // 2
    batch = points.shape[:-1]
    inputs = []
    for c in range(points.shape[-1]):
        v = points[..., c].copy()
        g = np.zeros(batch + (k,))
        if c in directions:
            g[..., directions.index(c)] = 1.0
        inputs.append(Jet(v, g, np.zeros(batch + (npair,))))
    return inputs


def jet_eval_batch(program: Callable, points: np.ndarray, directions: Sequence[int]) -> Jet:
    """Propagate a jet through ``program(*coords)`` at many points at once."""
    inputs = seed_jets(points, directions)
    out = program(*inputs)
    if not isinstance(out, Jet):
        out = inputs[0]._lift(out)
    return out


def jet_eval(program: Callable, point, directions: Sequence[int]) -> Jet2:
    """Value, gradient and Hessian of ``program`` at one point.

    >>> j = jet_eval(lambda x, y: x * y, [2.0, 3.0], [0, 1])
    >>> j.grad.tolist(), j.hessian().tolist()
    ([3.0, 2.0], [[0.0, 1.0], [1.0, 0.0]])
    """
    out = jet_eval_batch(program, np.asarray(point, dtype=float), directions)
    return Jet2(float(out.value), np.array(out.grad, dtype=float),
                np.array(out.hess, dtype=float), bool(np.any(out.kink)))


def fd_check(program: Callable, point, step: float = 1e-4, directions=None) -> float:
    """Worst deviation between jet derivatives and central differences.

    Deviation is ``|analytic - numeric| / max(1, |analytic|)``.  Points where
    relu/abs sit exactly on their kink are excluded (returns 0.0).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.asarray(point, dtype=float)
    if directions is None:
        directions = list(range(x0.size))
    with np.errstate(all="ignore"):
        jet = jet_eval(program, x0, directions)
    if jet.nondifferentiable:
        return 0.0

    def f(x):
        with np.errstate(all="ignore"):
            return float(program(*[float(c) for c in x]))

    h = step
    f0 = f(x0)
    H = jet.hessian()
    worst = 0.0
    for a, da in enumerate(directions):
        ea = np.zeros_like(x0)
        ea[da] = h
        fp, fm = f(x0 + ea), f(x0 - ea)
        num_g = (fp - fm) / (2 * h)
        num_h = (fp - 2 * f0 + fm) / (h * h)
        pairs = [(jet.grad[a], num_g), (H[a, a], num_h)]
        for b in range(a + 1, len(directions)):
            eb = np.zeros_like(x0)
            eb[directions[b]] = h
            num = (f(x0 + ea + eb) - f(x0 + ea - eb) - f(x0 - ea + eb) + f(x0 - ea - eb)) / (4 * h * h)
            pairs.append((H[a, b], num))
        for ana, num in pairs:
            if not (np.isfinite(ana) and np.isfinite(num)):
                return float("inf")
            worst = max(worst, abs(ana - num) / max(1.0, abs(ana)))
    return worst


# ---------------------------------------------------------------------------
# reverse tape
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _matmul_vjp(g, out, a, b):
    a2 = a if a.ndim > 1 else a[None, :]
    b2 = b if b.ndim > 1 else b[:, None]
    g2 = g
    if a.ndim == 1:
        g2 = g2[..., None, :]
    if b.ndim == 1:
        g2 = g2[..., None]
    ga = g2 @ np.swapaxes(b2, -1, -2)
    gb = np.swapaxes(a2, -1, -2) @ g2
    if a.ndim == 1:
        ga = ga[..., 0, :]
    if b.ndim == 1:
        gb = gb[..., 0]
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _take_vjp(g, out, a, idx=None, axis=0):
    ga = np.zeros_like(a)
    if axis == 0:
        np.add.at(ga, idx, g)
    else:
        ga_m = np.moveaxis(ga, axis, 0)
        np.add.at(ga_m, idx, np.moveaxis(g, axis, 0))
    return (ga,)


def _is_basic_key(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, type(None), type(Ellipsis))) for k in parts)


def _getitem_vjp(g, out, a, key=None):
    ga = np.zeros_like(a)
    if _is_basic_key(key):
        ga[key] = g  # basic indexing never repeats an element
    else:
        np.add.at(ga, key, g)
    return (ga,)


def _concat_vjp(g, out, *xs, axis=0):
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, sizes, axis=axis))


def _sum_vjp(g, out, a, axis=None):
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape),)


def _power_vjp(g, out, a, b):
    ga = g * b * np.power(a, b - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        gb = g * out * np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), 0.0)
    return ga, gb


# op name -> (forward, vjp).  vjp(g, out, *inputs, **kw) returns one cotangent
# per positional input (before unbroadcasting).
_OPS: dict[str, tuple[Callable, Callable]] = {
    "add": (np.add, lambda g, o, a, b: (g, g)),
    "sub": (np.subtract, lambda g, o, a, b: (g, -g)),
    "mul": (np.multiply, lambda g, o, a, b: (g * b, g * a)),
    "div": (np.divide, lambda g, o, a, b: (g / b, -g * o / b)),
    "neg": (np.negative, lambda g, o, a: (-g,)),
    "exp": (np.exp, lambda g, o, a: (g * o,)),
    "log": (np.log, lambda g, o, a: (g / a,)),
    "sqrt": (np.sqrt, lambda g, o, a: (0.5 * g / o,)),
    "sin": (np.sin, lambda g, o, a: (g * np.cos(a),)),
    "cos": (np.cos, lambda g, o, a: (-g * np.sin(a),)),
    "tanh": (np.tanh, lambda g, o, a: (g * (1.0 - o * o),)),
    "relu": (lambda a: np.maximum(a, 0.0), lambda g, o, a: (g * (a > 0),)),
    "abs": (np.abs, lambda g, o, a: (g * np.sign(a),)),
    "atan2": (np.arctan2, lambda g, o, y, x: (g * x / (x * x + y * y), -g * y / (x * x + y * y))),
    "power": (np.power, _power_vjp),
    "matmul": (np.matmul, _matmul_vjp),
    "sum": (lambda a, axis=None: np.sum(a, axis=axis), _sum_vjp),
    "reshape": (lambda a, shape=None: np.reshape(a, shape), lambda g, o, a, shape=None: (g.reshape(a.shape),)),
    "getitem": (lambda a, key=None: a[key], _getitem_vjp),
    "take": (lambda a, idx=None, axis=0: np.take(a, idx, axis=axis), _take_vjp),
    "concat": (lambda *xs, axis=0: np.concatenate(xs, axis=axis), _concat_vjp),
}

_NO_UNBROADCAST = {"matmul", "sum", "reshape", "getitem", "take", "concat"}


class _Node:
    __slots__ = ("op", "args", "kwargs", "value")

    def __init__(self, op, args, kwargs, value):
        self.op = op
        self.args = args  # each entry: int node id or a numpy constant
        self.kwargs = kwargs
        self.value = value


class Tape:
    """Records primitives over array values for one backward pass."""

    def __init__(self, capacity: int = 0):
        self._nodes: list = [None] * capacity
        self._n = 0
        self.consumed = False

    def __len__(self):
        return self._n

    def _push(self, node: _Node) -> "Var":
        if self._n < len(self._nodes):
            self._nodes[self._n] = node
        else:
            self._nodes.append(node)
        self._n += 1
        return Var(self, self._n - 1)

    def leaf(self, value) -> "Var":
        return self._push(_Node(None, (), {}, np.array(value, dtype=float)))

    def record(self, op: str, *args, **kwargs) -> "Var":
        if op not in _OPS:
            raise UnsupportedPrimitiveError(f"tape: unsupported primitive {op}")
        ids, vals = [], []
        for a in args:
            if isinstance(a, Var):
                if a.tape is not self:
                    raise ValueError("mixing variables from different tapes")
                ids.append(a.index)
                vals.append(self._nodes[a.index].value)
            else:
                c = np.asarray(a, dtype=float)
                ids.append(c)
                vals.append(c)
        value = _OPS[op][0](*vals, **kwargs)
        return self._push(_Node(op, tuple(ids), kwargs, np.asarray(value, dtype=float)))

    def value(self, index: int) -> np.ndarray:
        return self._nodes[index].value

    def replay(self) -> list:
        """Recompute every node from the leaves; returns the value list."""
        vals = []
        for n in range(self._n):
            node = self._nodes[n]
            if node.op is None:
                vals.append(node.value)
                continue
            ins = [vals[a] if isinstance(a, int) else a for a in node.args]
            vals.append(np.asarray(_OPS[node.op][0](*ins, **node.kwargs), dtype=float))
        return vals

    def backward(self, out: "Var") -> list:
        """Cotangents of ``out`` (a scalar) for every node, in tape order."""
        if self.consumed:
            raise TapeConsumedError("tape already used for a backward pass")
        if out.tape is not self:
            raise ValueError("output does not belong to this tape")
        if np.size(out.value) != 1:
            raise ValueError("backward needs a scalar output")
        self.consumed = True
        grads: list = [None] * self._n
        grads[out.index] = np.ones_like(out.value)
        nodes = self._nodes
        for n in range(out.index, -1, -1):
            g = grads[n]
            node = nodes[n]
            if g is None or node.op is None:
                continue
            ins = [nodes[a].value if isinstance(a, int) else a for a in node.args]
            cots = _OPS[node.op][1](g, node.value, *ins, **node.kwargs)
            for a, x, c in zip(node.args, ins, cots):
                if not isinstance(a, int):
                    continue
                if node.op not in _NO_UNBROADCAST:
                    c = _unbroadcast(np.asarray(c), x.shape)
                grads[a] = c if grads[a] is None else grads[a] + c
        return grads


class Var:
    """Handle to a tape node.  Supports numpy-style arithmetic."""

    __slots__ = ("tape", "index")
    __array_priority__ = 1000

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.value(self.index)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"

    def _r(self, op, *args, **kw):
        return self.tape.record(op, *args, **kw)

    def __add__(self, o):
        return self._r("add", self, o)

    def __radd__(self, o):
        return self._r("add", o, self)

    def __sub__(self, o):
        return self._r("sub", self, o)

    def __rsub__(self, o):
        return self._r("sub", o, self)

    def __mul__(self, o):
        return self._r("mul", self, o)

    def __rmul__(self, o):
        return self._r("mul", o, self)

    def __truediv__(self, o):
        return self._r("div", self, o)

    def __rtruediv__(self, o):
        return self._r("div", o, self)

    def __neg__(self):
        return self._r("neg", self)

    def __pow__(self, o):
        return self._r("power", self, o)

    def __rpow__(self, o):
        return self._r("power", o, self)

    def __matmul__(self, o):
        return self._r("matmul", self, o)

    def __rmatmul__(self, o):
        return self._r("matmul", o, self)

    def __getitem__(self, key):
        return self._r("getitem", self, key=key)

    def sum(self, axis=None):
        return self._r("sum", self, axis=axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return self._r("reshape", self, shape=tuple(shape))

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs or ufunc not in _VAR_UFUNCS:
            raise UnsupportedPrimitiveError(f"tape: unsupported primitive {ufunc.__name__}")
        return self.tape.record(_VAR_UFUNCS[ufunc], *inputs)


_VAR_UFUNCS = {
    np.add: "add", np.subtract: "sub", np.multiply: "mul", np.true_divide: "div",
    np.negative: "neg", np.exp: "exp", np.log: "log", np.sqrt: "sqrt", np.sin: "sin",
    np.cos: "cos", np.tanh: "tanh", np.arctan2: "atan2", np.power: "power",
    np.absolute: "abs", np.matmul: "matmul",
}


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def relu(x):
    if isinstance(x, Var):
        return x.tape.record("relu", x)
    if isinstance(x, Jet):
        return jrelu(x)
    return np.maximum(x, 0.0)


def tanh(x):
    return np.tanh(x)


def atan2(y, x):
    t = _tape_of(y, x)
    if t is not None:
        return t.record("atan2", y, x)
    if isinstance(y, Jet) or isinstance(x, Jet):
        return jatan2(y, x)
    return np.arctan2(y, x)


def concat(xs: Sequence, axis: int = 0):
    t = _tape_of(*xs)
    if t is None:
        return np.concatenate(xs, axis=axis)
    return t.record("concat", *xs, axis=axis)


def take(a, idx, axis: int = 0):
    if isinstance(a, Var):
        return a.tape.record("take", a, idx=np.asarray(idx), axis=axis)
    return np.take(a, idx, axis=axis)


def vsum(a, axis=None):
    if isinstance(a, Var):
        return a.sum(axis=axis)
    return np.sum(a, axis=axis)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def tape_gradient(loss: Var, params: Var) -> np.ndarray:
    """dloss/dparams as a flat vector the size of ``params``."""
    grads = loss.tape.backward(loss)
    g = grads[params.index]
    if g is None:
        return np.zeros(params.value.size)
    return np.asarray(g, dtype=float).reshape(-1).copy()
