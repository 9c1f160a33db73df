"""Level sets, augmentation, domains and point samplers."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np

from .diffcore import atan2, jet_eval_batch

TAU = 1e-12


class SingularPointError(ValueError):
    pass


class DegenerateNormalError(ValueError):
    pass


class Region(enum.Enum):
    PLUS = "plus"
    MINUS = "minus"
    ON_INTERFACE = "interface"


class Aug(enum.Enum):
    ABS = "abs"
    RELU = "relu"


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Generator for a named sub-stream; ``(seed, *stream)`` fully determines it."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(s) for s in stream]]))


# ---------------------------------------------------------------------------
# level sets
# ---------------------------------------------------------------------------

FAMILIES = ("affine1d", "circle", "polar_star_2d", "star_3d", "sphere_nd")


@dataclass(frozen=True)
class LevelSet:
    """Parametric interface family; negative inside (minus), positive outside."""

    family: str
    params: tuple
    dim: int

    # constructors -------------------------------------------------------
    @classmethod
    def affine1d(cls, p: float) -> "LevelSet":
        return cls("affine1d", (float(p),), 1)

    @classmethod
    def circle(cls, r0: float) -> "LevelSet":
        return cls("circle", (float(r0),), 2)

    @classmethod
    def polar_star_2d(cls, r1: float, r2: float) -> "LevelSet":
        return cls("polar_star_2d", (float(r1), float(r2)), 2)

    @classmethod
    def star_3d(cls, r0, t, n, theta) -> "LevelSet":
        vals = (float(r0), *map(float, t), *map(float, n), *map(float, theta))
        if len(vals) != 10:
            raise ValueError("star_3d needs r0 and three each of t, n, theta")
        return cls("star_3d", vals, 3)

    @classmethod
    def sphere_nd(cls, d: int, r0: float) -> "LevelSet":
        return cls("sphere_nd", (float(r0),), int(d))

    @property
    def default_aug(self) -> Aug:
        # polar families are singular at the origin, which sits in the minus region
        return Aug.RELU if self.family in ("polar_star_2d", "star_3d") else Aug.ABS

    # evaluation -----------------------------------------------------------
    def program(self, *x):
        """phi as a program over coordinate arrays (floats, arrays, jets)."""
        f = self.family
        if f == "affine1d":
            return x[0] - self.params[0]
        if f == "circle":
            r0 = self.params[0]
            return x[0] * x[0] + x[1] * x[1] - r0 * r0
        if f == "sphere_nd":
            r0 = self.params[0]
            s = x[0] * x[0]
            for c in x[1:]:
                s = s + c * c
            return s - r0 * r0
        if f == "polar_star_2d":
            r1, r2 = self.params
            r = np.sqrt(x[0] * x[0] + x[1] * x[1])
            return r - r1 - np.sin(5.0 * atan2(x[1], x[0])) / r2
        if f == "star_3d":
            r0 = self.params[0]
            rho2 = x[0] * x[0] + x[1] * x[1]
            r2 = rho2 + x[2] * x[2]
            q = rho2 / r2
            return np.sqrt(r2) - r0 * (1.0 + q * q * _star_sum(self.params, atan2(x[1], x[0])))
        raise ValueError(f"unknown level-set family {f!r}")

    def singular_mask(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.family == "polar_star_2d":
            return (x[:, 0] == 0) & (x[:, 1] == 0)
        if self.family == "star_3d":
            # the azimuth is undefined on the polar axis (origin included)
            return (x[:, 0] == 0) & (x[:, 1] == 0)
        return np.zeros(len(x), dtype=bool)

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.asarray(self.program(*[x[:, c] for c in range(self.dim)]), dtype=float)

    def radius_along(self, directions: np.ndarray) -> np.ndarray:
        """Distance from the origin to the interface along unit ``directions``."""
        u = np.atleast_2d(directions)
        f = self.family
        if f in ("circle", "sphere_nd"):
            return np.full(len(u), self.params[0])
        if f == "polar_star_2d":
            r1, r2 = self.params
            return r1 + np.sin(5.0 * np.arctan2(u[:, 1], u[:, 0])) / r2
        if f == "star_3d":
            # phi(r u) = r - r0 (1 + q^2 S(angle)), q depends on u only
            q = (u[:, 0] ** 2 + u[:, 1] ** 2) / np.sum(u * u, axis=1)
            return self.params[0] * (1.0 + q * q * _star_sum(self.params, np.arctan2(u[:, 1], u[:, 0])))
        raise ValueError(f"radius_along undefined for {f}")


def _star_sum(params, ang):
    t, n, th = params[1:4], params[4:7], params[7:10]
    s = t[0] * np.cos(n[0] * (ang - th[0]))
    for k in (1, 2):
        s = s + t[k] * np.cos(n[k] * (ang - th[k]))
    return s


def _laplacian_from_upper(hess: np.ndarray, d: int) -> np.ndarray:
    i, j = np.triu_indices(d)
    return hess[..., i == j].sum(axis=-1)


def phi_eval_jet(ls: LevelSet, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(phi, grad phi, Hessian) at a point or a batch of points."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if np.any(ls.singular_mask(pts)):
        raise SingularPointError(f"{ls.family}: derivative requested at a singular point")
    jet = jet_eval_batch(ls.program, pts, range(ls.dim))
    H = jet.hessian()
    if single:
        return float(jet.value[0]), jet.grad[0], H[0]
    return jet.value, jet.grad, H


def region_of(ls: LevelSet, x, tau: float = TAU):
    if tau < 0:
        raise ValueError("tau must be non-negative")
    phi = ls.value(x)
    out = np.where(phi > tau, Region.PLUS, np.where(phi < -tau, Region.MINUS, Region.ON_INTERFACE))
    return out[0] if np.ndim(x) == 1 else out


def aug_eval(ls: LevelSet, aug: Aug, x, side: Region, tau: float = TAU):
    """(Phi, grad Phi, Laplacian Phi) on the requested side.

    Phi is snapped to exactly 0 where |phi| <= tau.  The relu variant never
    touches derivatives of phi on the minus side.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    n, d = pts.shape
    if aug is Aug.RELU and side is Region.MINUS:
        out = (np.zeros(n), np.zeros((n, d)), np.zeros(n))
    else:
        if side not in (Region.PLUS, Region.MINUS):
            raise ValueError("side must be PLUS or MINUS")
        if np.any(ls.singular_mask(pts)):
            raise SingularPointError(f"{ls.family}: derivative requested at a singular point")
        jet = jet_eval_batch(ls.program, pts, range(d))
        phi = np.asarray(jet.value, dtype=float)
        lap = _laplacian_from_upper(jet.hess, d)
        sign = 1.0 if side is Region.PLUS else -1.0
        big = np.abs(phi) > tau
        if aug is Aug.ABS:
            val = np.where(big, np.abs(phi), 0.0)
        else:
            val = np.where(big, np.maximum(phi, 0.0), 0.0)
        out = (val, sign * jet.grad, sign * lap)
    if single:
        return float(out[0][0]), out[1][0], float(out[2][0])
    return out


def aug_value(ls: LevelSet, aug: Aug, x, tau: float = TAU) -> np.ndarray:
    """Phi alone (no derivatives), snapped to 0 within tau of the interface."""
    phi = ls.value(x)
    val = np.abs(phi) if aug is Aug.ABS else np.maximum(phi, 0.0)
    return np.where(np.abs(phi) > tau, val, 0.0)


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------


def _unit_dirs(rng, n, d):
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(frozen=True)
class Domain:
    kind: str  # interval | disk | square | shell | ball
    dim: int
    lo: float
    hi: float  # bounding box [lo, hi]^dim; for radial kinds hi is the outer radius
    inner: float = 0.0

    @classmethod
    def interval(cls, a=0.0, b=1.0):
        return cls("interval", 1, float(a), float(b))

    @classmethod
    def disk(cls, R=1.0):
        return cls("disk", 2, -float(R), float(R))

    @classmethod
    def square(cls, a=-1.0, b=1.0):
        return cls("square", 2, float(a), float(b))

    @classmethod
    def shell(cls, r_in=0.151, r_out=0.911):
        return cls("shell", 3, -float(r_out), float(r_out), float(r_in))

    @classmethod
    def ball(cls, d=6, R=0.6):
        return cls("ball", int(d), -float(R), float(R))

    @property
    def radial(self) -> bool:
        return self.kind in ("disk", "shell", "ball")

    def contains(self, x, tol: float = 1e-12) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.radial:
            r = np.linalg.norm(x, axis=1)
            return (r <= self.hi + tol) & (r >= self.inner - tol)
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=1)

    def boundary_residual(self, x) -> np.ndarray:
        """Zero exactly on the boundary."""
        x = np.atleast_2d(x)
        if self.radial:
            r2 = np.sum(x * x, axis=1)
            res_out = r2 - self.hi ** 2
            if self.kind == "shell":
                res_in = r2 - self.inner ** 2
                return np.where(np.abs(res_in) < np.abs(res_out), res_in, res_out)
            return res_out
        return np.min(np.minimum(np.abs(x - self.lo), np.abs(x - self.hi)), axis=1)

    def uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        d = self.dim
        if self.kind in ("interval", "square"):
            return self.lo + (self.hi - self.lo) * rng.random((n, d))
        if self.kind == "disk":
            r = self.hi * np.sqrt(rng.random(n))
            th = 2 * np.pi * rng.random(n)
            return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
        if self.kind == "shell":
            a3, b3 = self.inner ** 3, self.hi ** 3
            r = np.cbrt(a3 + rng.random(n) * (b3 - a3))
            return _unit_dirs(rng, n, 3) * r[:, None]
        if self.kind == "ball":
            r = self.hi * rng.random(n) ** (1.0 / d)
            return _unit_dirs(rng, n, d) * r[:, None]
        raise ValueError(self.kind)

    def boundary(self, rng: np.random.Generator, n: int) -> np.ndarray:
        d = self.dim
        if self.kind == "interval":
            # both endpoints, alternating, so any n >= 2 covers the whole boundary
            return np.resize([self.lo, self.hi], n)[:, None].astype(float)
        if self.kind == "disk":
            th = 2 * np.pi * rng.random(n)
            return self.hi * np.stack([np.cos(th), np.sin(th)], axis=1)
        if self.kind == "square":
            L = self.hi - self.lo
            s = 4 * L * rng.random(n)
            side = np.minimum((s // L).astype(int), 3)
            t = self.lo + (s - side * L)
            # sides in order: bottom, right, top, left
            xs = np.select([side == 1, side == 3], [self.hi, self.lo], t)
            ys = np.select([side == 0, side == 2], [self.lo, self.hi], t)
            return np.stack([xs, ys], axis=1)
        if self.kind == "shell":
            w_in = self.inner ** 2 / (self.inner ** 2 + self.hi ** 2)
            r = np.where(rng.random(n) < w_in, self.inner, self.hi)
            return _unit_dirs(rng, n, 3) * r[:, None]
        if self.kind == "ball":
            return _unit_dirs(rng, n, d) * self.hi
        raise ValueError(self.kind)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


@dataclass
class InterfaceSet:
    points: np.ndarray
    normals: np.ndarray
    grad_plus: np.ndarray  # grad of the augmentation, approached from the plus side
    grad_minus: np.ndarray


@dataclass
class CollocationSet:
    interior: np.ndarray
    interior_region: np.ndarray  # object array of Region
    boundary: np.ndarray
    interface: InterfaceSet
    extra: dict = field(default_factory=dict)


def sample_interior(domain: Domain, ls: LevelSet, n: int, rng: np.random.Generator,
                    tau: float = TAU):
    """Uniform interior points with plus/minus labels; near-interface draws are redrawn."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pts = np.empty((0, domain.dim))
    while len(pts) < n:
        cand = domain.uniform(rng, n - len(pts))
        keep = np.abs(ls.value(cand)) > tau
        pts = np.concatenate([pts, cand[keep]])
    regions = region_of(ls, pts, tau)
    return pts, np.atleast_1d(regions)


def sample_boundary(domain: Domain, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return domain.boundary(rng, n)


def interface_frame(ls: LevelSet, aug: Aug, pts: np.ndarray) -> InterfaceSet:
    _, g, _ = phi_eval_jet(ls, np.atleast_2d(pts))
    norm = np.linalg.norm(g, axis=1)
    if not np.all(np.isfinite(norm)) or np.any(norm < 1e-12):
        raise DegenerateNormalError(f"{ls.family}: vanishing level-set gradient on the interface")
    normals = g / norm[:, None]
    minus = -g if aug is Aug.ABS else np.zeros_like(g)
    return InterfaceSet(np.atleast_2d(pts).copy(), normals, g.copy(), minus)


def sample_interface(ls: LevelSet, n: int, rng: np.random.Generator,
                     aug: Aug | None = None) -> InterfaceSet:
    if n < 1:
        raise ValueError("n must be >= 1")
    aug = ls.default_aug if aug is None else aug
    if ls.family == "affine1d":
        pts = np.full((n, 1), ls.params[0])
    elif ls.dim == 2:
        th = 2 * np.pi * rng.random(n)
        u = np.stack([np.cos(th), np.sin(th)], axis=1)
        pts = u * ls.radius_along(u)[:, None]
    else:
        u = _unit_dirs(rng, n, ls.dim)
        pts = u * ls.radius_along(u)[:, None]
    return interface_frame(ls, aug, pts)


def sensor_grid(domain: Domain, count: int) -> np.ndarray:
    """Coarsest equispaced bounding-box lattice with at least ``count`` points
    in the domain, truncated to ``count`` points in lexicographic order."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        centre = np.full((1, domain.dim), 0.5 * (domain.lo + domain.hi))
        if domain.contains(centre)[0]:
            return centre
    for m in itertools.count(2):
        axis = np.linspace(domain.lo, domain.hi, m)
        lattice = np.array(list(itertools.product(axis, repeat=domain.dim)))
        inside = lattice[domain.contains(lattice)]
        if len(inside) >= count:
            return inside[:count].copy()


def sample_collocation(domain: Domain, ls: LevelSet, n_interior: int, n_boundary: int,
                       n_interface: int, rng: np.random.Generator, aug: Aug | None = None,
                       tau: float = TAU) -> CollocationSet:
    """Interior, boundary and interface point sets drawn from one generator."""
    pts, regions = sample_interior(domain, ls, n_interior, rng, tau)
    return CollocationSet(pts, regions, sample_boundary(domain, n_boundary, rng),
                          sample_interface(ls, n_interface, rng, aug))
