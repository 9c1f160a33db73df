"""1D reference solver for -(a u')' = f with an interior interface.

The flux a u' equals C - F(x) with F(x) = int_0^x f, so

    u(x) = int_0^x (C - F(s)) / a(s) ds,   C fixed by u(1) = 0.

f is taken piecewise linear between breakpoints (grid nodes plus the
interface point, each side using its own piece), which makes both
integrals exact per segment.  [u] = 0 and [a u'] = 0 hold by construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fieldgen import PiecewiseField


class CoefficientError(ValueError):
    pass


@dataclass(frozen=True)
class Grid1D:
    M: int

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("grid needs M >= 2")

    @property
    def h(self) -> float:
        return 1.0 / self.M

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.M + 1)


@dataclass
class Solution1D:
    nodes: np.ndarray
    u: np.ndarray
    x_gamma: float
    C: float
    # per-segment data for evaluation between breakpoints
    bp: np.ndarray
    a_seg: np.ndarray
    gl: np.ndarray
    gr: np.ndarray
    F_bp: np.ndarray
    u_bp: np.ndarray

    def evaluate(self, x) -> np.ndarray:
        """u at arbitrary points in [0, 1] (exact for the piecewise-linear source)."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        j = np.clip(np.searchsorted(self.bp, flat, side="right") - 1, 0, len(self.a_seg) - 1)
        s = flat - self.bp[j]
        L = self.bp[j + 1] - self.bp[j]
        slope = np.where(L > 0, (self.gr[j] - self.gl[j]) / np.where(L > 0, L, 1.0), 0.0)
        intF = self.F_bp[j] * s + self.gl[j] * s * s / 2 + slope * s ** 3 / 6
        return (self.u_bp[j] + (self.C * s - intF) / self.a_seg[j]).reshape(x.shape)

    def flux(self, x) -> np.ndarray:
        """a u' = C - F(x)."""
        x = np.asarray(x, dtype=float).reshape(-1)
        j = np.clip(np.searchsorted(self.bp, x, side="right") - 1, 0, len(self.a_seg) - 1)
        s = x - self.bp[j]
        L = self.bp[j + 1] - self.bp[j]
        slope = np.where(L > 0, (self.gr[j] - self.gl[j]) / np.where(L > 0, L, 1.0), 0.0)
        return self.C - (self.F_bp[j] + self.gl[j] * s + slope * s * s / 2)


def _side_values(f, xs: np.ndarray, plus: bool) -> np.ndarray:
    if isinstance(f, PiecewiseField):
        piece = f.plus if plus else f.minus
        return np.broadcast_to(np.asarray(piece(xs), dtype=float), xs.shape).astype(float)
    return np.broadcast_to(np.asarray(f(xs), dtype=float), xs.shape).astype(float)


def solve_interface_1d(a_plus: float, a_minus: float, x_gamma: float, f,
                       grid: Grid1D | int = 1000) -> Solution1D:
    """Solve on [0, 1] with u(0) = u(1) = 0 and homogeneous jump data.

    ``f`` is a :class:`PiecewiseField` (minus piece left of ``x_gamma``) or a
    single callable used on both sides.
    """
    if not (a_plus > 0 and a_minus > 0):
        raise CoefficientError("diffusion coefficients must be positive")
    if not 0.0 < x_gamma < 1.0:
        raise ValueError("interface point must lie in (0, 1)")
    grid = Grid1D(int(grid)) if isinstance(grid, (int, np.integer)) else grid
    nodes = grid.nodes

    k = int(np.searchsorted(nodes, x_gamma, side="right") - 1)
    on_node = nodes[k] == x_gamma
    left, right = nodes[: k + 1], nodes[k + 1:]
    if on_node:
        bp = nodes.copy()
        n_left = k  # segments [0..k-1] are minus
    else:
        bp = np.concatenate([left, [x_gamma], right])
        n_left = k + 1
    nseg = len(bp) - 1
    minus_seg = np.arange(nseg) < n_left
    a_seg = np.where(minus_seg, a_minus, a_plus)

    fm = _side_values(f, bp[: n_left + 1], plus=False)
    fp = _side_values(f, bp[n_left:], plus=True)
    gl = np.concatenate([fm[:-1], fp[:-1]])
    gr = np.concatenate([fm[1:], fp[1:]])
    L = np.diff(bp)

    F_bp = np.concatenate([[0.0], np.cumsum(L * (gl + gr) / 2)])
    A_seg = L / a_seg                                           # int 1/a
    B_seg = (F_bp[:-1] * L + L * L * (2 * gl + gr) / 6) / a_seg  # int F/a
    A = np.concatenate([[0.0], np.cumsum(A_seg)])
    B = np.concatenate([[0.0], np.cumsum(B_seg)])
    C = B[-1] / A[-1]
    u_bp = C * A - B
    u_bp[-1] = 0.0

    node_idx = np.arange(len(bp)) if on_node else np.delete(np.arange(len(bp)), k + 1)
    return Solution1D(nodes, u_bp[node_idx], float(x_gamma), float(C), bp, a_seg, gl, gr,
                      F_bp, u_bp)


def closed_form_constant_f(a_plus: float, a_minus: float, x_gamma: float, f0: float):
    """Exact piecewise quadratic for constant f = f0 (test oracle)."""
    p, ap, am = float(x_gamma), float(a_plus), float(a_minus)
    # unknowns: slope c1 of u- at 0 and the constant c2 in u+ = -f0 x^2/(2ap) + c3 x + c2
    # with u+(1) = 0 -> c2 = f0/(2ap) - c3; continuity and flux at p give a 2x2 system
    # am*(c1 - f0 p/am) = ap*(c3 - f0 p/ap)          (flux)
    # c1 p - f0 p^2/(2am) = -f0 p^2/(2ap) + c3 p + f0/(2ap) - c3   (value)
    M = np.array([[am, -ap], [p, -(p - 1.0)]])
    rhs = np.array([0.0, f0 * p * p / (2 * am) - f0 * p * p / (2 * ap) + f0 / (2 * ap)])
    c1, c3 = np.linalg.solve(M, rhs)
    c2 = f0 / (2 * ap) - c3

    def u(x):
        x = np.asarray(x, dtype=float)
        left = -f0 * x * x / (2 * am) + c1 * x
        right = -f0 * x * x / (2 * ap) + c3 * x + c2
        return np.where(x <= p, left, right)

    def du(x, side):
        x = np.asarray(x, dtype=float)
        if side == "minus":
            return -f0 * x / am + c1
        return -f0 * x / ap + c3

    u.derivative = du
    u.pieces = (lambda x: -f0 * np.asarray(x) ** 2 / (2 * am) + c1 * np.asarray(x),
                lambda x: -f0 * np.asarray(x) ** 2 / (2 * ap) + c3 * np.asarray(x) + c2)
    return u
