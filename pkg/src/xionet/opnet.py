"""Operator networks: MLP blocks, the two-branch XI model and a vanilla DeepONet.

Parameters live in one flat float64 vector.  Every function here accepts
either a numpy array (plain evaluation) or a tape :class:`~xionet.diffcore.Var`
(training), so the same code path produces values and parameter gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import DerivativeRequestError
from .geom import rng_for


class DimensionError(ValueError):
    pass


ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input to output; ``depth`` counts affine layers."""

    widths: tuple
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ValueError("an MLP needs at least one hidden layer")
        if any(int(w) < 1 for w in self.widths):
            raise ValueError("all widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def uniform(cls, n_in: int, width: int, depth: int, n_out: int | None = None,
                activation: str = "tanh") -> "MlpSpec":
        n_out = width if n_out is None else n_out
        return cls((n_in,) + (width,) * (depth - 1) + (n_out,), activation)

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @property
    def n_params(self) -> int:
        return sum(o * (i + 1) for i, o in zip(self.widths[:-1], self.widths[1:]))

    def shapes(self):
        for i, o in zip(self.widths[:-1], self.widths[1:]):
            yield (i, o), (o,)


@dataclass(frozen=True)
class OperatorNet:
    """``sum_i t_i * prod_j b_j,i + b0`` with one trunk and one or two branches.

    ``kind='xi'``: branches see (f, Phi) at the sensors, the trunk sees (x, z).
    ``kind='deeponet'``: one branch (f), trunk sees x only.
    """

    branches: tuple
    trunk: MlpSpec
    d: int
    kind: str = "xi"

    def __post_init__(self):
        m = self.trunk.widths[-1]
        if any(b.widths[-1] != m for b in self.branches):
            raise ValueError("branch and trunk outputs must share the latent width")
        want_in = self.d + 1 if self.kind == "xi" else self.d
        if self.trunk.widths[0] != want_in:
            raise ValueError(f"trunk input must be {want_in} for kind={self.kind}")
        if self.kind == "xi" and len(self.branches) != 2:
            raise ValueError("the XI model has two branches")
        if self.kind == "deeponet" and len(self.branches) != 1:
            raise ValueError("the baseline has one branch")

    @classmethod
    def xi(cls, sensors: int, d: int, width: int = 100, depth: int = 5,
           activation: str = "tanh") -> "OperatorNet":
        br = MlpSpec.uniform(sensors, width, depth, activation=activation)
        return cls((br, br), MlpSpec.uniform(d + 1, width, depth, activation=activation), d, "xi")

    @classmethod
    def deeponet(cls, sensors: int, d: int, width: int = 100, depth: int = 5,
                 activation: str = "tanh") -> "OperatorNet":
        br = MlpSpec.uniform(sensors, width, depth, activation=activation)
        return cls((br,), MlpSpec.uniform(d, width, depth, activation=activation), d, "deeponet")

    @property
    def m(self) -> int:
        return self.trunk.widths[-1]

    @property
    def sensors(self) -> int:
        return self.branches[0].widths[0]

    @property
    def has_z(self) -> bool:
        return self.kind == "xi"

    @property
    def activation(self) -> str:
        return self.trunk.activation

    @property
    def n_params(self) -> int:
        return sum(b.n_params for b in self.branches) + self.trunk.n_params + 1

    def layout(self):
        """[(name, offset, shape)] in storage order; b0 is last."""
        out, off = [], 0
        nets = [(f"branch{j + 1}", b) for j, b in enumerate(self.branches)] + [("trunk", self.trunk)]
        for name, spec in nets:
            for l, (ws, bs) in enumerate(spec.shapes()):
                out.append((f"{name}.W{l}", off, ws))
                off += ws[0] * ws[1]
                out.append((f"{name}.c{l}", off, bs))
                off += bs[0]
        out.append(("b0", off, ()))
        return out

    def unpack(self, theta):
        """Split the flat vector into {'branch1': [(W, c), ...], ..., 'b0': b0}."""
        if dc.value_of(theta).shape != (self.n_params,):
            raise DimensionError(f"parameter vector must have length {self.n_params}")
        parts: dict = {}
        items = self.layout()
        for k in range(0, len(items) - 1, 2):
            (wname, woff, ws), (_, coff, bs) = items[k], items[k + 1]
            net = wname.split(".")[0]
            W = theta[woff:woff + ws[0] * ws[1]].reshape(ws)
            c = theta[coff:coff + bs[0]]
            parts.setdefault(net, []).append((W, c))
        off = items[-1][1]
        parts["b0"] = theta[off:off + 1]
        return parts

    def describe(self) -> str:
        br = ";".join(",".join(map(str, b.widths)) for b in self.branches)
        return (f"kind={self.kind} activation={self.activation} sensors={self.sensors} d={self.d} "
                f"m={self.m} branches={br} trunk={','.join(map(str, self.trunk.widths))}")

    @classmethod
    def from_description(cls, text: str) -> "OperatorNet":
        kv = dict(tok.split("=", 1) for tok in text.split())
        act = kv["activation"]
        branches = tuple(MlpSpec(tuple(int(w) for w in b.split(",")), act)
                         for b in kv["branches"].split(";"))
        trunk = MlpSpec(tuple(int(w) for w in kv["trunk"].split(",")), act)
        return cls(branches, trunk, int(kv["d"]), kv["kind"])


def init_params(net: OperatorNet, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases and b0."""
    rng = rng_for(seed, 0x1A)
    theta = np.zeros(net.n_params)
    for name, off, shape in net.layout():
        if ".W" in name:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            theta[off:off + shape[0] * shape[1]] = rng.uniform(-bound, bound, shape[0] * shape[1])
    return theta


def _act(activation: str, x):
    return dc.tanh(x) if activation == "tanh" else dc.relu(x)


def mlp_forward(spec, layers, x):
    """Affine+activation stack, final layer affine only.

    ``spec`` is an :class:`MlpSpec` or a bare activation name; ``layers`` is a
    list of (W, c) pairs or a flat parameter vector for ``spec``.
    """
    activation = spec if isinstance(spec, str) else spec.activation
    if not isinstance(layers, list):
        layers = _split_flat(spec, layers)
    n_in = dc.value_of(layers[0][0]).shape[0]
    if dc.value_of(x).shape[-1] != n_in:
        raise DimensionError(f"input width {dc.value_of(x).shape[-1]} != {n_in}")
    h = x
    for l, (W, c) in enumerate(layers):
        h = h @ W + c
        if l < len(layers) - 1:
            h = _act(activation, h)
    return h


def _split_flat(spec: MlpSpec, flat):
    if dc.value_of(flat).shape != (spec.n_params,):
        raise DimensionError(f"parameter vector must have length {spec.n_params}")
    out, off = [], 0
    for ws, bs in spec.shapes():
        W = flat[off:off + ws[0] * ws[1]].reshape(ws)
        off += ws[0] * ws[1]
        out.append((W, flat[off:off + bs[0]]))
        off += bs[0]
    return out


def product_form(trunk_out, branch_outs, b0):
    """sum over latent index of trunk * prod(branches), plus b0."""
    prod = trunk_out
    for b in branch_outs:
        prod = prod * b
    return dc.vsum(prod, axis=-1) + b0


# ---------------------------------------------------------------------------
# trunk input derivatives by layer recurrences
# ---------------------------------------------------------------------------


def _second_order_terms(WJ, d: int, has_z: bool):
    """Products of first-derivative pre-activations for each tracked second derivative.

    Channel order: Laplacian in x, then (x_i, z) mixed for each i, then (z, z).
    """
    WJx = WJ[:, :d, :]
    lap = dc.vsum(WJx * WJx, axis=1).reshape(-1, 1, WJ.shape[-1])
    if not has_z:
        return lap
    WJz = WJ[:, d:d + 1, :]
    return dc.concat([lap, WJx * WJz, WJz * WJz], axis=1)


def trunk_jets(spec: MlpSpec, layers, X, d: int, has_z: bool, order: int = 2):
    """Trunk outputs and input derivatives at points ``X`` (P, n_in).

    Returns (T, TJ, TS): values (P, m), first derivatives (P, n_in, m),
    second-order channels (P, ns, m) or None.
    """
    if order >= 2 and spec.activation != "tanh":
        raise DerivativeRequestError("second derivatives need a tanh trunk")
    X = np.asarray(X, dtype=float)
    P, n_in = X.shape
    J = S = None
    h = X
    last = len(layers) - 1
    for l, (W, c) in enumerate(layers):
        w_out = dc.value_of(W).shape[1]
        pre = h @ W + c
        WJ = WS = None
        if order >= 1:
            if l == 0:
                WJ = W.reshape(1, n_in, w_out)  # identity input Jacobian, broadcast over points
            else:
                D = J if S is None else dc.concat([J, S], axis=1)
                WD = D @ W
                WJ = WD[:, :n_in, :]
                if S is not None:
                    WS = WD[:, n_in:, :]
        if l == last:
            return pre, WJ, WS
        if spec.activation == "tanh":
            h = dc.tanh(pre)
            if order >= 1:
                s1 = 1.0 - h * h
                J = s1.reshape(P, 1, w_out) * WJ
            if order >= 2:
                s2 = -2.0 * h * s1
                Q = _second_order_terms(WJ, d, has_z)
                S = s2.reshape(P, 1, w_out) * Q
                if WS is not None:
                    S = S + s1.reshape(P, 1, w_out) * WS
        else:
            h = dc.relu(pre)
            if order >= 1:
                step = (dc.value_of(pre) > 0).astype(float)
                J = step.reshape(P, 1, w_out) * WJ
    raise AssertionError("unreachable")


@dataclass
class BranchCoeffs:
    """Per-function latent coefficients prod_j b_j (F, m)."""

    coeffs: object
    b0: object


def branch_coeffs(net: OperatorNet, parts, sensors) -> BranchCoeffs:
    """``sensors`` is a list (one per branch) of (F, k) arrays."""
    if len(sensors) != len(net.branches):
        raise DimensionError(f"expected {len(net.branches)} sensor arrays")
    c = None
    for j, (spec, s) in enumerate(zip(net.branches, sensors)):
        s = np.atleast_2d(np.asarray(s, dtype=float))
        if s.shape[-1] != net.sensors:
            raise DimensionError(f"sensor vector length {s.shape[-1]} != {net.sensors}")
        out = mlp_forward(spec, parts[f"branch{j + 1}"], s)
        c = out if c is None else c * out
    return BranchCoeffs(c, parts["b0"])


def forward_points(net: OperatorNet, theta, sensors, fidx, X):
    """Network value at trunk inputs ``X`` (P, n_in); point p uses function fidx[p]."""
    parts = net.unpack(theta)
    bc = branch_coeffs(net, parts, sensors)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != net.trunk.widths[0]:
        raise DimensionError(f"trunk input width {X.shape[1]} != {net.trunk.widths[0]}")
    T = mlp_forward(net.trunk, parts["trunk"], X)
    C = dc.take(bc.coeffs, np.asarray(fidx, dtype=int), axis=0)
    return dc.vsum(T * C, axis=1) + bc.b0


def derivs_points(net: OperatorNet, theta, sensors, fidx, X, order: int = 2):
    """ExtendedDerivs of the network at trunk inputs ``X``."""
    from .physres import ExtendedDerivs

    parts = net.unpack(theta)
    bc = branch_coeffs(net, parts, sensors)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != net.trunk.widths[0]:
        raise DimensionError(f"trunk input width {X.shape[1]} != {net.trunk.widths[0]}")
    d, has_z = net.d, net.has_z
    T, TJ, TS = trunk_jets(net.trunk, parts["trunk"], X, d, has_z, order)
    P, m = X.shape[0], net.m
    C = dc.take(bc.coeffs, np.asarray(fidx, dtype=int), axis=0)
    chans = [T.reshape(P, 1, m)] + [c for c in (TJ, TS) if c is not None]
    allc = dc.concat(chans, axis=1) if len(chans) > 1 else chans[0]
    V = dc.vsum(allc * C.reshape(P, 1, m), axis=2)  # (P, channels)
    n_in = X.shape[1]
    U = V[:, 0] + bc.b0
    grad_x = U_z = lap = mixed = U_zz = None
    if order >= 1:
        grad_x = V[:, 1:1 + d]
        U_z = V[:, 1 + d] if has_z else np.zeros(P)
    if order >= 2:
        s0 = 1 + n_in
        lap = V[:, s0]
        if has_z:
            mixed, U_zz = V[:, s0 + 1:s0 + 1 + d], V[:, s0 + 1 + d]
        else:
            mixed, U_zz = np.zeros((P, d)), np.zeros(P)
    return ExtendedDerivs(U, grad_x, U_z, lap, mixed, U_zz)


# ---------------------------------------------------------------------------
# single-sample conveniences
# ---------------------------------------------------------------------------


def opnet_forward(net: OperatorNet, theta, f_sensors, phi_sensors, trunk_input):
    """Value at one or more trunk inputs (x, z) for one input-function pair."""
    if net.kind != "xi":
        raise ValueError("opnet_forward needs the two-branch model")
    X = np.atleast_2d(np.asarray(trunk_input, dtype=float))
    out = forward_points(net, theta, [np.atleast_2d(f_sensors), np.atleast_2d(phi_sensors)],
                         np.zeros(len(X), dtype=int), X)
    if isinstance(out, dc.Var):
        return out
    return float(out[0]) if np.ndim(trunk_input) == 1 else out


def deeponet_baseline_forward(net: OperatorNet, theta, f_sensors, x):
    if net.kind != "deeponet":
        raise ValueError("baseline forward needs the single-branch model")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if net.d == 1 and X.shape == (1, len(np.atleast_1d(x))) and np.ndim(x) == 1 and len(x) > 1:
        X = X.T
    out = forward_points(net, theta, [np.atleast_2d(f_sensors)], np.zeros(len(X), dtype=int), X)
    if isinstance(out, dc.Var):
        return out
    return float(out[0]) if len(out) == 1 else out


def opnet_extended_derivs(net: OperatorNet, theta, f_sensors, phi_sensors, x, z):
    """U and the extended-coordinate derivatives at points (x, z) for one sample."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    X = np.concatenate([x, z[:, None]], axis=1)
    return derivs_points(net, theta, [np.atleast_2d(f_sensors), np.atleast_2d(phi_sensors)],
                         np.zeros(len(X), dtype=int), X, order=2)
