"""Input functions, problem data, exact solutions and jump homogenisation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np

from .diffcore import jet_eval_batch
from .geom import (Aug, Domain, LevelSet, Region, aug_value, rng_for, sample_interface,
                   sensor_grid)


class CholeskyError(np.linalg.LinAlgError):
    pass


class ParameterRangeError(ValueError):
    pass


class NoExactSolutionError(ValueError):
    pass


class JumpMismatchError(ValueError):
    pass


EXAMPLES = ("ex1", "ex2", "ex3", "ex3d", "ex6d")
GRID_1D = 1001


# ---------------------------------------------------------------------------
# Gaussian random fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GrfSpec:
    length: float
    jitter: float | None = None  # None -> 1e-10 * number of locations

    def kernel(self, x1, x2) -> np.ndarray:
        x1 = np.atleast_2d(np.asarray(x1, dtype=float).T).T
        x2 = np.atleast_2d(np.asarray(x2, dtype=float).T).T
        if x1.ndim == 1:
            x1 = x1[:, None]
        if x2.ndim == 1:
            x2 = x2[:, None]
        d2 = np.sum((x1[:, None, :] - x2[None, :, :]) ** 2, axis=-1)
        return np.exp(-d2 / (2.0 * self.length ** 2))


def _as_points(locations) -> np.ndarray:
    x = np.asarray(locations, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def grf_factor(spec: GrfSpec, locations) -> np.ndarray:
    """Lower Cholesky factor of K + lambda I, escalating lambda by 10 at most twice."""
    x = _as_points(locations)
    K = spec.kernel(x, x)
    lam = spec.jitter if spec.jitter is not None else 1e-10 * len(x)
    for attempt in range(3):
        try:
            return np.linalg.cholesky(K + lam * np.eye(len(x)))
        except np.linalg.LinAlgError:
            lam *= 10.0
    raise CholeskyError(f"Cholesky failed for l={spec.length} with jitter up to {lam / 10:g}")


@lru_cache(maxsize=16)
def _grid_factor(length: float, n: int, lo: float, hi: float) -> np.ndarray:
    return grf_factor(GrfSpec(length), np.linspace(lo, hi, n))


def grf_draw(spec: GrfSpec, locations, seed: int) -> np.ndarray:
    """One zero-mean draw at ``locations``.

    Locations are factorised in lexicographic order, so permuting them
    permutes the draw the same way.
    """
    x = _as_points(locations)
    order = np.lexsort(x.T[::-1])
    L = grf_factor(spec, x[order])
    out = np.empty(len(x))
    out[order] = L @ rng_for(seed, 0x6F).standard_normal(len(x))
    return out


# ---------------------------------------------------------------------------
# piecewise fields
# ---------------------------------------------------------------------------


def _coords(x: np.ndarray) -> list:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return [x[:, c] for c in range(x.shape[1])]


def _lap(hess: np.ndarray, d: int) -> np.ndarray:
    i, j = np.triu_indices(d)
    return hess[..., i == j].sum(axis=-1)


def field_jet(program: Callable, x: np.ndarray):
    """(value, gradient, Laplacian) of a closed-form program at points ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    jet = jet_eval_batch(program, x, range(x.shape[1]))
    return (np.broadcast_to(jet.value, (len(x),)).astype(float), jet.grad,
            _lap(jet.hess, x.shape[1]))


def const(c: float) -> Callable:
    c = float(c)
    return lambda *x: c


@dataclass
class PiecewiseField:
    """A field given separately on the plus and minus regions."""

    plus: Callable
    minus: Callable
    grid: np.ndarray | None = None  # set for tabulated 1D fields
    table_plus: np.ndarray | None = None
    table_minus: np.ndarray | None = None

    @classmethod
    def tabulated(cls, grid, values_plus, values_minus) -> "PiecewiseField":
        grid = np.asarray(grid, dtype=float)
        vp = np.asarray(values_plus, dtype=float)
        vm = np.asarray(values_minus, dtype=float)
        return cls(lambda x: np.interp(x, grid, vp), lambda x: np.interp(x, grid, vm),
                   grid, vp, vm)

    @property
    def is_tabulated(self) -> bool:
        return self.grid is not None

    def piece(self, side: Region) -> Callable:
        return self.plus if side is Region.PLUS else self.minus

    def value(self, x, side: Region) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = self.piece(side)(*_coords(x))
        return np.broadcast_to(np.asarray(v, dtype=float), (len(x),)).copy()

    def value_by_region(self, x, regions) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        regions = np.atleast_1d(regions)
        out = np.zeros(len(x))
        for side in (Region.PLUS, Region.MINUS):
            m = regions == side
            if np.any(m):
                out[m] = self.value(x[m], side)
        return out

    def jet(self, x, side: Region):
        """(value, gradient, Laplacian).  Tabulated fields are piecewise linear."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.is_tabulated:
            table = self.table_plus if side is Region.PLUS else self.table_minus
            xs = x[:, 0]
            k = np.clip(np.searchsorted(self.grid, xs, side="right") - 1, 0, len(self.grid) - 2)
            slope = (table[k + 1] - table[k]) / (self.grid[k + 1] - self.grid[k])
            return np.interp(xs, self.grid, table), slope[:, None], np.zeros(len(xs))
        return field_jet(self.piece(side), x)


@dataclass
class ExtensionField:
    """Closed-form v on the plus region (zero on the minus region)."""

    program: Callable

    def value(self, x, regions=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.broadcast_to(np.asarray(self.program(*_coords(x)), dtype=float), (len(x),))
        if regions is None:
            return v.copy()
        return np.where(np.atleast_1d(regions) == Region.PLUS, v, 0.0)


@dataclass
class ProblemSpec:
    example: str
    params: dict
    domain: Domain
    level_set: LevelSet
    aug: Aug
    a: PiecewiseField
    f: PiecewiseField
    h: Callable                      # boundary data, program over coordinates
    g_D: Callable | None = None      # None means identically zero
    g_N: Callable | None = None      # g_N(points, normals) -> values; None means zero
    b: PiecewiseField | None = None  # None means zero
    a0: float = 1.0
    exact: PiecewiseField | None = None
    extension: ExtensionField | None = None  # set once homogenised
    sensors: np.ndarray | None = None
    f_input: PiecewiseField | None = None  # source seen by the branch net; defaults to f
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def regions(self, x) -> np.ndarray:
        from .geom import region_of
        return np.atleast_1d(region_of(self.level_set, np.atleast_2d(x)))

    def h_value(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.broadcast_to(np.asarray(self.h(*_coords(x)), dtype=float), (len(x),)).copy()

    def g_D_value(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.g_D is None:
            return np.zeros(len(x))
        return np.broadcast_to(np.asarray(self.g_D(*_coords(x)), dtype=float), (len(x),)).copy()

    def g_N_value(self, x, normals) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.g_N is None:
            return np.zeros(len(x))
        return np.asarray(self.g_N(x, np.atleast_2d(normals)), dtype=float)

    def b_value(self, x, side: Region) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.b is None:
            return np.zeros(len(x))
        return self.b.value(x, side)

    def f_sensors(self) -> np.ndarray:
        src = self.f if self.f_input is None else self.f_input
        return src.value_by_region(self.sensors, self.regions(self.sensors))

    def phi_sensors(self) -> np.ndarray:
        return aug_value(self.level_set, self.aug, self.sensors)

    def recover(self, w, x) -> np.ndarray:
        """Map a homogenised solution back to u."""
        w = np.asarray(w, dtype=float)
        if self.extension is None:
            return w
        return w + self.extension.value(x, self.regions(x))


# ---------------------------------------------------------------------------
# example definitions
# ---------------------------------------------------------------------------

RANGES = {
    "ex1": {"p": (0.4, 0.7)},
    "ex2": {"r0": (0.4, 0.8), "p": (0.5, 2.0)},
    "ex3": {"r1": (0.5, 0.7), "r2": (7.0, 11.0), "p1_plus": (50.0, 100.0),
            "p2_plus": (1550.0, 1650.0), "p1_minus": (50.0, 100.0), "p2_minus": (1550.0, 1650.0)},
    "ex3d": {"r0": (0.45, 0.55), "t1": (0.0, 0.2), "t2": (-0.2, 0.0), "t3": (0.1, 0.2),
             "n1": (2.0, 4.0), "n2": (3.0, 5.0), "n3": (6.0, 8.0),
             "theta1": (0.3, 0.7), "theta2": (1.6, 2.0), "theta3": (-0.1, 0.1), "eps": (-0.1, 0.1)},
    "ex6d": {"r0": (0.4, 0.5)},
}

SENSOR_COUNTS = {"ex1": 100, "ex2": 60, "ex3": 100, "ex3d": 136, "ex6d": 233}

# held-out configurations used for reporting (all at exactness points)
TEST_SETS = {
    "ex2": [{"r0": r, "p": 1.0} for r in (0.5, 0.6, 0.7)],
    "ex3": [dict(r1=r1, r2=r2, p1_plus=80.0, p2_plus=1600.0, p1_minus=80.0, p2_minus=1600.0)
            for r1, r2 in ((0.5, 7.0), (0.6, 9.0), (0.7, 11.0))],
    "ex3d": [
        dict(r0=0.483, t1=0.10, t2=-0.10, t3=0.15, n1=3.0, n2=4.0, n3=7.0,
             theta1=0.5, theta2=1.8, theta3=0.0, eps=0.0),
        dict(r0=0.500, t1=0.00, t2=-0.10, t3=0.20, n1=3.0, n2=3.0, n3=6.0,
             theta1=0.6, theta2=1.9, theta3=0.1, eps=0.0),
        dict(r0=0.530, t1=0.20, t2=0.20, t3=0.00, n1=4.0, n2=5.0, n3=8.0,
             theta1=0.4, theta2=1.8, theta3=0.1, eps=0.0),
    ],
    "ex6d": [{"r0": r} for r in (0.4, 0.45, 0.5)],
}

EX1_A_MINUS, EX1_A_PLUS = 0.1, 0.5
EX1_LENGTHS = (0.2, 0.1)  # (plus, minus)
EX2_A_PLUS, EX2_A_MINUS = 1000.0, 1.0
EX3_A_PLUS, EX3_A_MINUS = 1.0, 2.0
EX6D_A_PLUS, EX6D_A_MINUS = 1.0, 1.0


def check_ranges(example: str, params: dict) -> None:
    for key, (lo, hi) in RANGES[example].items():
        if key not in params:
            raise ParameterRangeError(f"{example}: missing parameter {key!r}")
        v = float(params[key])
        if not (lo - 1e-12 <= v <= hi + 1e-12):
            raise ParameterRangeError(f"{example}: {key}={v} outside [{lo}, {hi}]")


def sample_params(example: str, rng: np.random.Generator) -> dict:
    return {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in RANGES[example].items()}


def domain_for(example: str) -> Domain:
    return {
        "ex1": Domain.interval(0.0, 1.0),
        "ex2": Domain.disk(1.0),
        "ex3": Domain.square(-1.0, 1.0),
        "ex3d": Domain.shell(0.151, 0.911),
        "ex6d": Domain.ball(6, 0.6),
    }[example]


def level_set_for(example: str, params: dict) -> LevelSet:
    if example == "ex1":
        return LevelSet.affine1d(params["p"])
    if example == "ex2":
        return LevelSet.circle(params["r0"])
    if example == "ex3":
        return LevelSet.polar_star_2d(params["r1"], params["r2"])
    if example == "ex3d":
        return LevelSet.star_3d(params["r0"], [params[f"t{k}"] for k in (1, 2, 3)],
                                [params[f"n{k}"] for k in (1, 2, 3)],
                                [params[f"theta{k}"] for k in (1, 2, 3)])
    if example == "ex6d":
        return LevelSet.sphere_nd(6, params["r0"])
    raise ValueError(f"unknown example {example!r}")


def example1_source(seed: int, p: float, sensors: np.ndarray | None = None):
    """Independent GRF pieces (l=0.2 plus, l=0.1 minus) on the 1001-node grid.

    Returns the tabulated field and its values at ``sensors``.
    """
    grid = np.linspace(0.0, 1.0, GRID_1D)
    rng = rng_for(seed, 0x6F)
    z = rng.standard_normal((2, GRID_1D))
    f_plus = _grid_factor(EX1_LENGTHS[0], GRID_1D, 0.0, 1.0) @ z[0]
    f_minus = _grid_factor(EX1_LENGTHS[1], GRID_1D, 0.0, 1.0) @ z[1]
    fld = PiecewiseField.tabulated(grid, f_plus, f_minus)
    if sensors is None:
        sensors = sensor_grid(Domain.interval(), SENSOR_COUNTS["ex1"])
    ys = np.atleast_2d(sensors)
    regions = np.where(ys[:, 0] > p, Region.PLUS, Region.MINUS)
    return fld, fld.value_by_region(ys, regions)


# -- closed forms --------------------------------------------------------------


def _r2(x):
    s = x[0] * x[0]
    for c in x[1:]:
        s = s + c * c
    return s


def _ex2_u(r0: float):
    ap, am = EX2_A_PLUS, EX2_A_MINUS
    # sign: u solves -div(a grad u) = 9 r, i.e. the negative of the printed profile
    plus = lambda *x: -(_r2(x) ** 1.5 / ap - 1.0 / ap)
    minus = lambda *x: -(_r2(x) ** 1.5 / am + (1.0 / ap - 1.0 / am) * r0 ** 3 - 1.0 / ap)
    return plus, minus


def _ex3_w(*x):
    return 1.0 / (1.0 + 10.0 * _r2(x))


def _ex3_source(p1: float, p2: float):
    def f(*x):
        s = _r2(x)
        q = 1.0 + 10.0 * s
        return p1 / (q * q) - p2 * s / (q * q * q)
    return f


def _ex3d_u():
    def minus(x, y, z):
        return np.sin(2.0 * x) * np.cos(2.0 * y) * np.exp(z)

    def plus(x, y, z):
        s = (y - x) / 3.0
        return 16.0 * s ** 5 - 20.0 * s ** 3 + 5.0 * s + np.log(x + y + 3.0) * np.cos(z)
    return plus, minus


def _ex3d_a_minus(x, y, z):
    return 10.0 + 2.0 * np.cos(2 * np.pi * (x + y)) * np.sin(2 * np.pi * (x - y)) * np.cos(z)


def _ex6d_u(r0: float):
    def plus(*x):
        s = np.sin(x[0])
        for k in range(1, 5):
            s = s + np.sin(x[k])
        return np.exp(r0 * r0 - _r2(x)) + s

    def minus(*x):
        s = np.sin(x[0])
        for k in range(1, 5):
            s = s + np.sin(x[k])
        return 1.0 + 2.0 * np.sin(r0 * r0 - _r2(x)) + s
    return plus, minus


def _div_source(a_prog: Callable, u_prog: Callable, shift: float = 0.0) -> Callable:
    """Value-only program for -div(a grad u) + shift, via jets of a and u."""
    def f(*x):
        pts = np.stack([np.broadcast_to(np.asarray(c, dtype=float), np.shape(x[0])) for c in x],
                       axis=-1)
        av, ag, _ = field_jet(a_prog, pts)
        _, ug, ul = field_jet(u_prog, pts)
        return -(av * ul + np.sum(ag * ug, axis=1)) + shift
    return f


def _flux_jump(a: PiecewiseField, u: PiecewiseField) -> Callable:
    def g_N(x, normals):
        ap, _, _ = a.jet(x, Region.PLUS)
        am, _, _ = a.jet(x, Region.MINUS)
        _, gp, _ = u.jet(x, Region.PLUS)
        _, gm, _ = u.jet(x, Region.MINUS)
        return ap * np.sum(gp * normals, axis=1) - am * np.sum(gm * normals, axis=1)
    return g_N


def _by_sign(ls: LevelSet, plus: Callable, minus: Callable) -> Callable:
    def g(*x):
        pts = np.stack([np.broadcast_to(np.asarray(c, dtype=float), np.shape(x[0])) for c in x], -1)
        return np.where(ls.value(np.atleast_2d(pts)).reshape(np.shape(x[0])) > 0,
                        plus(*x), minus(*x))
    return g


def _jump(u: PiecewiseField) -> Callable:
    return lambda *x: u.plus(*x) - u.minus(*x)


def exact_solution(example: str, params: dict) -> PiecewiseField:
    """Closed-form solution; only defined at the exactness parameters."""
    if example == "ex2":
        if abs(params["p"] - 1.0) > 1e-12:
            raise NoExactSolutionError("ex2 has a closed form only at p = 1")
        return PiecewiseField(*_ex2_u(params["r0"]))
    if example == "ex3":
        if any(abs(params[k] - v) > 1e-12 for k, v in
               (("p1_plus", 80.0), ("p2_plus", 1600.0), ("p1_minus", 80.0), ("p2_minus", 1600.0))):
            raise NoExactSolutionError("ex3 has a closed form only at (p1, p2) = (80, 1600)")
        return PiecewiseField(lambda *x: 2.0 * _ex3_w(*x), _ex3_w)
    if example == "ex3d":
        if abs(params.get("eps", 0.0)) > 0.0:
            raise NoExactSolutionError("ex3d has a closed form only at eps = 0")
        return PiecewiseField(*_ex3d_u())
    if example == "ex6d":
        return PiecewiseField(*_ex6d_u(params["r0"]))
    raise NoExactSolutionError(f"{example} has no closed-form solution")


def extension_for(example: str, params: dict) -> ExtensionField | None:
    """Closed-form extension of g_D into the plus region (None when g_D = 0)."""
    if example == "ex3":
        return ExtensionField(_ex3_w)
    if example == "ex3d":
        plus, minus = _ex3d_u()
        return ExtensionField(lambda x, y, z: plus(x, y, z) - minus(x, y, z))
    return None


def problem_for_example(example: str, params: dict, seed: int = 0, strict: bool = True,
                        sensors: np.ndarray | None = None) -> ProblemSpec:
    """Assemble the un-homogenised problem for one input-function sample."""
    if example not in EXAMPLES:
        raise ValueError(f"unknown example {example!r}")
    params = {k: float(v) for k, v in params.items()}
    if strict:
        check_ranges(example, params)
    domain = domain_for(example)
    ls = level_set_for(example, params)
    if sensors is None:
        sensors = sensor_grid(domain, SENSOR_COUNTS[example])
    zero = const(0.0)
    common = dict(example=example, params=params, domain=domain, level_set=ls,
                  aug=ls.default_aug, sensors=sensors)

    if example == "ex1":
        f, _ = example1_source(seed, params["p"], sensors)
        return ProblemSpec(a=PiecewiseField(const(EX1_A_PLUS), const(EX1_A_MINUS)), f=f, h=zero,
                           a0=EX1_A_MINUS, meta={"grf_seed": int(seed)}, **common)

    if example == "ex2":
        p = params["p"]
        src = lambda *x: 9.0 * p * np.sqrt(_r2(x))
        exact = exact_solution(example, params) if abs(p - 1.0) <= 1e-12 else None
        return ProblemSpec(a=PiecewiseField(const(EX2_A_PLUS), const(EX2_A_MINUS)),
                           f=PiecewiseField(src, src), h=zero, a0=EX2_A_MINUS, exact=exact, **common)

    if example == "ex3":
        f = PiecewiseField(_ex3_source(params["p1_plus"], params["p2_plus"]),
                           _ex3_source(params["p1_minus"], params["p2_minus"]))
        try:
            exact = exact_solution(example, params)
        except NoExactSolutionError:
            exact = None
        return ProblemSpec(a=PiecewiseField(const(EX3_A_PLUS), const(EX3_A_MINUS)), f=f,
                           h=lambda *x: 2.0 * _ex3_w(*x), g_D=_ex3_w, g_N=None,
                           a0=min(EX3_A_PLUS, EX3_A_MINUS), exact=exact, **common)

    if example == "ex3d":
        a = PiecewiseField(const(1.0), _ex3d_a_minus)
        u = PiecewiseField(*_ex3d_u())
        eps = params["eps"]
        f = PiecewiseField(_div_source(a.plus, u.plus, eps), _div_source(a.minus, u.minus, eps))
        return ProblemSpec(a=a, f=f, h=_by_sign(ls, u.plus, u.minus), g_D=_jump(u),
                           g_N=_flux_jump(a, u), a0=1.0,
                           exact=u if eps == 0.0 else None, **common)

    # ex6d
    a = PiecewiseField(const(EX6D_A_PLUS), const(EX6D_A_MINUS))
    u = exact_solution(example, params)
    f = PiecewiseField(_div_source(a.plus, u.plus), _div_source(a.minus, u.minus))
    # u+ - u- vanishes identically on the sphere, so the jump data is zero
    return ProblemSpec(a=a, f=f, h=u.plus, g_D=None, g_N=_flux_jump(a, u),
                       a0=min(EX6D_A_PLUS, EX6D_A_MINUS), exact=u, **common)


def homogenize(spec: ProblemSpec, v: ExtensionField | None, n_check: int = 128,
               tol: float = 1e-10):
    """Shift out a non-zero solution jump: w = u - v with v = 0 on the minus side.

    Returns the transformed problem and ``recover(w, x) -> u``.
    """
    if v is None:
        if spec.g_D is not None:
            raise JumpMismatchError("non-zero g_D needs an extension field")
        return spec, (lambda w, x: np.asarray(w, dtype=float))
    pts = sample_interface(spec.level_set, n_check, rng_for(0, 0x1F), spec.aug).points
    mismatch = np.max(np.abs(v.value(pts) - spec.g_D_value(pts)))
    if not mismatch <= tol:
        raise JumpMismatchError(f"extension misses the jump data by {mismatch:.3e}")

    a, b, f, h, g_N = spec.a, spec.b, spec.f, spec.h, spec.g_N

    def f_plus(*x):
        pts = np.stack([np.broadcast_to(np.asarray(c, dtype=float), np.shape(x[0])) for c in x], -1)
        pts = np.atleast_2d(pts)
        av, ag, _ = a.jet(pts, Region.PLUS)
        vv, vg, vl = field_jet(v.program, pts)
        bv = np.zeros(len(pts)) if b is None else b.value(pts, Region.PLUS)
        out = f.value(pts, Region.PLUS) + av * vl + np.sum(ag * vg, axis=1) - bv * vv
        return out.reshape(np.shape(x[0])) if np.ndim(x[0]) else out[0]

    def g_N_new(x, normals):
        av, _, _ = a.jet(x, Region.PLUS)
        _, vg, _ = field_jet(v.program, x)
        base = 0.0 if g_N is None else g_N(x, normals)
        return base - av * np.sum(vg * normals, axis=1)

    ls = spec.level_set

    def h_new(*x):
        pts = np.stack([np.broadcast_to(np.asarray(c, dtype=float), np.shape(x[0])) for c in x], -1)
        pts2 = np.atleast_2d(pts)
        plus = ls.value(pts2) > 0
        vv = np.where(plus, v.value(pts2), 0.0)
        out = np.broadcast_to(np.asarray(h(*x), dtype=float), np.shape(x[0])).reshape(-1) - vv
        return out.reshape(np.shape(x[0])) if np.ndim(x[0]) else out[0]

    new = replace(spec, f=PiecewiseField(f_plus, f.minus), g_N=g_N_new, h=h_new, g_D=None,
                  extension=v, f_input=spec.f if spec.f_input is None else spec.f_input)
    return new, new.recover


def homogenized_problem(example: str, params: dict, seed: int = 0, strict: bool = True,
                        sensors=None) -> ProblemSpec:
    spec = problem_for_example(example, params, seed, strict=strict, sensors=sensors)
    spec, _ = homogenize(spec, extension_for(example, params))
    return spec
