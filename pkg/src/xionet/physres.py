"""Residuals and losses in the extended (x, z) coordinates.

For a smooth U(x, z), u(x) = U(x, Phi(x)) and the chain rule gives

    div(a grad u) = a (lap_x U + 2 grad Phi . grad_x U_z + |grad Phi|^2 U_zz + U_z lap Phi)
                    + grad a . (grad_x U + U_z grad Phi)

so the PDE residual, the interface flux jump and the boundary mismatch are
all linear in the channels of :class:`ExtendedDerivs`.  Every function
below works on numpy arrays and on tape variables alike.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import diffcore as dc
from .diffcore import jet_eval_batch
from .fieldgen import ProblemSpec
from .geom import (CollocationSet, DegenerateNormalError, InterfaceSet, Region, aug_eval,
                   aug_value, region_of)


class EmptyClassError(ValueError):
    """A loss term was requested over zero collocation points."""


@dataclass
class ExtendedDerivs:
    """U and its derivatives at trunk inputs (x, z); arrays have a leading point axis."""

    U: object
    grad_x: object          # (P, d)
    U_z: object             # (P,)
    lap_x: object = None    # (P,)
    mixed: object = None    # (P, d)  d^2 U / dx_i dz
    U_zz: object = None     # (P,)

    def rows(self, sl) -> "ExtendedDerivs":
        return ExtendedDerivs(*(None if v is None else v[sl] for v in
                                (getattr(self, f.name) for f in fields(self))))


@dataclass(frozen=True)
class LossWeights:
    interior: float = 1.0
    boundary: float = 100.0
    interface: float = 1.0


class SideMismatchError(ValueError):
    """A point was evaluated with the coefficients of the other region."""


class DataShapeError(ValueError):
    pass


def residual_terms(ed: ExtendedDerivs, *, a, grad_a, b, f, grad_Phi, lap_Phi):
    """-div(a grad u) + b u - f from per-point coefficient arrays."""
    grad_Phi = np.asarray(grad_Phi, dtype=float)
    gp2 = np.sum(grad_Phi * grad_Phi, axis=1)
    second = (ed.lap_x + 2.0 * dc.vsum(ed.mixed * grad_Phi, axis=1)
              + gp2 * ed.U_zz + np.asarray(lap_Phi) * ed.U_z)
    grad_a = np.asarray(grad_a, dtype=float)
    first = dc.vsum(ed.grad_x * grad_a, axis=1) + np.sum(grad_a * grad_Phi, axis=1) * ed.U_z
    return -np.asarray(a) * second - first + np.asarray(b) * ed.U - np.asarray(f)


def normal_flux(ed: ExtendedDerivs, a, grad_Phi, normals):
    """a (grad_x U + U_z grad Phi) . n"""
    normals = np.asarray(normals, dtype=float)
    gn = np.sum(np.asarray(grad_Phi, dtype=float) * normals, axis=1)
    return np.asarray(a) * (dc.vsum(ed.grad_x * normals, axis=1) + gn * ed.U_z)


def flux_jump_terms(ed_plus: ExtendedDerivs, ed_minus: ExtendedDerivs, *, a_plus, a_minus,
                    normals, grad_plus, grad_minus, g_N):
    """[a du/dn] - g_N with each side's augmentation gradient."""
    return (normal_flux(ed_plus, a_plus, grad_plus, normals)
            - normal_flux(ed_minus, a_minus, grad_minus, normals) - np.asarray(g_N))


def _squeeze(out, single):
    if single and not isinstance(out, dc.Var):
        return float(np.asarray(out).reshape(-1)[0])
    return out


def extended_residual(spec: ProblemSpec, D: ExtendedDerivs, x, side: Region):
    """PDE residual at interior points ``x`` that all lie in region ``side``."""
    single = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if side not in (Region.PLUS, Region.MINUS):
        raise ValueError("side must be PLUS or MINUS")
    if np.any(spec.regions(x) != side):
        raise SideMismatchError(f"point(s) outside the {side.name.lower()} region")
    sides = np.full(len(x), side)
    a, grad_a = _side_values(spec.a, x, sides)
    f = _side_plain(spec.f, x, sides)
    _, grad_Phi, lap_Phi = aug_eval(spec.level_set, spec.aug, x, side)
    out = residual_terms(D, a=a, grad_a=grad_a, b=spec.b_value(x, side), f=f,
                         grad_Phi=grad_Phi, lap_Phi=lap_Phi)
    return _squeeze(out, single)


def interface_flux_jump(spec: ProblemSpec, D_plus: ExtendedDerivs, D_minus: ExtendedDerivs,
                        pts: InterfaceSet):
    """Flux jump minus g_N at interface points; both records taken at z = 0."""
    norms = np.linalg.norm(pts.normals, axis=1)
    if not np.all(np.isfinite(norms)) or np.any(np.abs(norms - 1.0) > 1e-8):
        raise DegenerateNormalError("interface normals must be finite unit vectors")
    x = np.atleast_2d(pts.points)
    return flux_jump_terms(D_plus, D_minus, a_plus=spec.a.value(x, Region.PLUS),
                           a_minus=spec.a.value(x, Region.MINUS), normals=pts.normals,
                           grad_plus=pts.grad_plus, grad_minus=pts.grad_minus,
                           g_N=spec.g_N_value(x, pts.normals))


def boundary_mismatch(spec: ProblemSpec, U, x):
    """U - h at boundary points."""
    single = np.ndim(x) == 1
    return _squeeze(U - spec.h_value(np.atleast_2d(x)), single)


def mean_square(r, name: str = "residual"):
    if np.size(dc.value_of(r)) == 0:
        raise EmptyClassError(f"no {name} points")
    return dc.vsum(r * r) * (1.0 / np.size(dc.value_of(r)))


def combine_losses(res, bnd, ifc, weights: LossWeights = LossWeights()):
    """Weighted sum of per-class mean squares; returns (total, parts)."""
    parts = {"interior": mean_square(res, "interior"), "boundary": mean_square(bnd, "boundary"),
             "interface": mean_square(ifc, "interface")}
    total = (weights.interior * parts["interior"] + weights.boundary * parts["boundary"]
             + weights.interface * parts["interface"])
    return total, parts


def loss_data(pred, target):
    """Mean squared prediction error over every (sample, point) pair."""
    target = np.asarray(target, dtype=float)
    if dc.value_of(pred).shape != target.shape:
        raise DataShapeError(f"{dc.value_of(pred).shape} predictions for {target.shape} targets")
    return mean_square(pred - target, "data")


# ---------------------------------------------------------------------------
# per-point coefficients
# ---------------------------------------------------------------------------


@dataclass
class PhysicsPoints:
    """Trunk inputs and PDE coefficients for one or more problems' collocation sets."""

    X_int: np.ndarray
    fidx_int: np.ndarray
    side_int: np.ndarray
    a: np.ndarray
    grad_a: np.ndarray
    b: np.ndarray
    f: np.ndarray
    grad_Phi: np.ndarray
    lap_Phi: np.ndarray
    X_bnd: np.ndarray
    fidx_bnd: np.ndarray
    side_bnd: np.ndarray
    h: np.ndarray
    X_ifc: np.ndarray
    fidx_ifc: np.ndarray
    normals: np.ndarray
    a_plus: np.ndarray
    a_minus: np.ndarray
    grad_plus: np.ndarray
    grad_minus: np.ndarray
    g_N: np.ndarray

    _INT = ("X_int", "fidx_int", "side_int", "a", "grad_a", "b", "f", "grad_Phi", "lap_Phi")
    _BND = ("X_bnd", "fidx_bnd", "side_bnd", "h")
    _IFC = ("X_ifc", "fidx_ifc", "normals", "a_plus", "a_minus", "grad_plus", "grad_minus", "g_N")

    @property
    def counts(self) -> tuple:
        return len(self.X_int), len(self.X_bnd), len(self.X_ifc)

    @classmethod
    def concat(cls, items) -> "PhysicsPoints":
        items = list(items)
        return cls(**{f.name: np.concatenate([getattr(it, f.name) for it in items])
                      for f in fields(cls)})

    def subset(self, i_int, i_bnd, i_ifc) -> "PhysicsPoints":
        kw = {}
        for names, idx in ((self._INT, i_int), (self._BND, i_bnd), (self._IFC, i_ifc)):
            for n in names:
                kw[n] = getattr(self, n)[idx]
        return PhysicsPoints(**kw)

    def with_fidx(self, k: int) -> "PhysicsPoints":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        for n in ("fidx_int", "fidx_bnd", "fidx_ifc"):
            kw[n] = np.full_like(kw[n], k)
        return PhysicsPoints(**kw)


def _side_values(field_, x, sides, default=0.0):
    """Value, gradient and Laplacian of a piecewise field at labelled points."""
    n, d = x.shape
    val, grad = np.full(n, float(default)), np.zeros((n, d))
    if field_ is None:
        return val, grad
    for side in (Region.PLUS, Region.MINUS):
        m = sides == side
        if np.any(m):
            v, g, _ = field_.jet(x[m], side)
            val[m] = np.broadcast_to(v, (int(m.sum()),))
            grad[m] = np.broadcast_to(g, (int(m.sum()), d))
    return val, grad


def _side_plain(field_, x, sides):
    out = np.zeros(len(x))
    for side in (Region.PLUS, Region.MINUS):
        m = sides == side
        if np.any(m):
            out[m] = field_.value(x[m], side)
    return out


def physics_points(spec: ProblemSpec, coll: CollocationSet, fidx: int = 0) -> PhysicsPoints:
    """Evaluate every coefficient the residuals need, once per collocation set."""
    ls, aug = spec.level_set, spec.aug
    xi = np.atleast_2d(coll.interior)
    sides = np.asarray(coll.interior_region)
    n, d = xi.shape
    a, grad_a = _side_values(spec.a, xi, sides)
    f = _side_plain(spec.f, xi, sides)
    b = np.zeros(n)
    if spec.b is not None:
        for side in (Region.PLUS, Region.MINUS):
            m = sides == side
            if np.any(m):
                b[m] = spec.b_value(xi[m], side)
    Phi, gPhi, lPhi = np.zeros(n), np.zeros((n, d)), np.zeros(n)
    for side in (Region.PLUS, Region.MINUS):
        m = sides == side
        if np.any(m):
            Phi[m], gPhi[m], lPhi[m] = aug_eval(ls, aug, xi[m], side)

    xb = np.atleast_2d(coll.boundary)
    Xb = np.concatenate([xb, aug_value(ls, aug, xb)[:, None]], axis=1)

    itf = coll.interface
    xg = np.atleast_2d(itf.points)
    ng = len(xg)
    a_p = spec.a.value(xg, Region.PLUS)
    a_m = spec.a.value(xg, Region.MINUS)
    Xg = np.concatenate([xg, np.zeros((ng, 1))], axis=1)

    return PhysicsPoints(
        X_int=np.concatenate([xi, Phi[:, None]], axis=1), fidx_int=np.full(n, fidx),
        side_int=sides, a=a, grad_a=grad_a, b=b, f=f, grad_Phi=gPhi, lap_Phi=lPhi,
        X_bnd=Xb, fidx_bnd=np.full(len(xb), fidx),
        side_bnd=np.atleast_1d(region_of(ls, xb)), h=spec.h_value(xb),
        X_ifc=Xg, fidx_ifc=np.full(ng, fidx), normals=itf.normals,
        a_plus=a_p, a_minus=a_m, grad_plus=itf.grad_plus, grad_minus=itf.grad_minus,
        g_N=spec.g_N_value(xg, itf.normals),
    )


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


class AnalyticModel:
    """Extended field given by closed-form programs U_plus(*x, z), U_minus(*x, z).

    Serves as an oracle: a correct extension makes every residual vanish.
    """

    side_dependent = True

    def __init__(self, plus, minus, d: int):
        self.plus, self.minus, self.d = plus, minus, d

    def __call__(self, X, fidx, sides, order: int = 2) -> ExtendedDerivs:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        P, d = len(X), self.d
        U, gx, Uz = np.zeros(P), np.zeros((P, d)), np.zeros(P)
        lap, mixed, Uzz = np.zeros(P), np.zeros((P, d)), np.zeros(P)
        iu, ju = np.triu_indices(d + 1)
        for side, prog in ((Region.PLUS, self.plus), (Region.MINUS, self.minus)):
            m = np.asarray(sides) == side
            if not np.any(m):
                continue
            jet = jet_eval_batch(prog, X[m], range(d + 1))
            H = np.zeros((int(m.sum()), d + 1, d + 1))
            H[:, iu, ju] = jet.hess
            U[m] = jet.value
            gx[m] = jet.grad[:, :d]
            Uz[m] = jet.grad[:, d]
            lap[m] = np.trace(H[:, :d, :d], axis1=1, axis2=2)
            mixed[m] = H[:, :d, d]
            Uzz[m] = H[:, d, d]
        return ExtendedDerivs(U, gx, Uz, lap, mixed, Uzz)


class NetModel:
    """Adapter exposing an operator net (with bound parameters and inputs) as a model."""

    side_dependent = False

    def __init__(self, net, theta, sensors):
        self.net, self.theta, self.sensors = net, theta, sensors

    def __call__(self, X, fidx, sides=None, order: int = 2) -> ExtendedDerivs:
        from .opnet import derivs_points

        X = np.atleast_2d(X)
        if self.net.kind != "xi":
            X = X[:, :self.net.d]
        return derivs_points(self.net, self.theta, self.sensors, fidx, X, order=order)

    def values(self, X, fidx):
        from .opnet import forward_points

        X = np.atleast_2d(X)
        if self.net.kind != "xi":
            X = X[:, :self.net.d]
        return forward_points(self.net, self.theta, self.sensors, fidx, X)


def physics_terms(model, pts: PhysicsPoints):
    """(interior residual, boundary mismatch, interface flux jump) for a model."""
    ni, nb, ng = pts.counts
    if model.side_dependent:
        ed_i = model(pts.X_int, pts.fidx_int, pts.side_int)
        ed_b = model(pts.X_bnd, pts.fidx_bnd, pts.side_bnd, order=0)
        ed_p = model(pts.X_ifc, pts.fidx_ifc, np.full(ng, Region.PLUS), order=1)
        ed_m = model(pts.X_ifc, pts.fidx_ifc, np.full(ng, Region.MINUS), order=1)
    else:
        X = np.concatenate([pts.X_int, pts.X_bnd, pts.X_ifc])
        fidx = np.concatenate([pts.fidx_int, pts.fidx_bnd, pts.fidx_ifc])
        ed = model(X, fidx, None, order=2)
        ed_i = ed.rows(slice(0, ni))
        ed_b = ed.rows(slice(ni, ni + nb))
        ed_p = ed_m = ed.rows(slice(ni + nb, ni + nb + ng))
    res = residual_terms(ed_i, a=pts.a, grad_a=pts.grad_a, b=pts.b, f=pts.f,
                         grad_Phi=pts.grad_Phi, lap_Phi=pts.lap_Phi)
    bnd = ed_b.U - pts.h
    ifc = flux_jump_terms(ed_p, ed_m, a_plus=pts.a_plus, a_minus=pts.a_minus,
                          normals=pts.normals, grad_plus=pts.grad_plus,
                          grad_minus=pts.grad_minus, g_N=pts.g_N)
    return res, bnd, ifc


def loss_physics(model, pts: PhysicsPoints, weights: LossWeights = LossWeights()):
    """Weighted physics loss of ``model`` over a batch; returns (total, parts)."""
    res, bnd, ifc = physics_terms(model, pts)
    return combine_losses(res, bnd, ifc, weights)
