"""Adam training loop with step-keyed minibatches, checkpoints and loss history.

Every random choice made at step ``s`` comes from ``rng_for(seed, STREAM, s)``,
so a run resumed from a checkpoint replays the uninterrupted run exactly.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .data import Dataset, trunk_inputs
from .geom import rng_for, sample_collocation
from .opnet import OperatorNet, forward_points, init_params
from .physres import (LossWeights, NetModel, PhysicsPoints, combine_losses, loss_data,
                      physics_points, physics_terms)

MODES = ("DD", "PI")
CKPT_MAGIC = "xionet-ckpt v1"
HISTORY_HEADER = "step,lr,total_loss,loss_interior,loss_boundary,loss_interface"
_STREAM = 0x7A


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, index: int, value: float):
        super().__init__(f"non-finite gradient {value} at parameter {index}")
        self.index = index


class DatasetModeError(ValueError):
    pass


class CheckpointFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "PI"
    iterations: int = 40000
    lr: float = 1e-3
    decay: float = 0.95
    decay_every: int = 1000
    batch_functions: int = 100
    batch_interior: int = 0   # 0 means every point of the class
    batch_boundary: int = 0
    batch_interface: int = 0
    batch_data: int = 0
    weights: LossWeights = LossWeights()
    seed: int = 0
    ckpt_every: int = 0       # 0 disables intermediate checkpoints
    clip_norm: float = 0.0    # 0 disables clipping
    resample: bool = False
    workers: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay factor must lie in (0, 1]")
        if self.decay_every < 1 or self.batch_functions < 1 or self.workers < 1:
            raise ValueError("decay_every, batch_functions and workers must be >= 1")

    def lr_at(self, step: int) -> float:
        return self.lr * self.decay ** (step // self.decay_every)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray, lr: float):
    """One bias-corrected Adam update; returns (new_state, new_params)."""
    if not (len(params) == len(grads) == len(state.m)):
        raise ValueError("parameter, gradient and moment lengths differ")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NonFiniteGradientError(int(bad[0]), float(grads[bad[0]]))
    b1, b2 = state.beta1, state.beta2
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads * grads
    t = state.t + 1
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    new = params - lr * mhat / (np.sqrt(vhat) + state.eps)
    return replace(state, m=m, v=v, t=t), new


def clip_gradient(g: np.ndarray, max_norm: float) -> np.ndarray:
    """Rescale to ``max_norm`` when larger; untouched otherwise (and when max_norm <= 0)."""
    if max_norm <= 0:
        return g
    norm = float(np.sqrt(np.dot(g, g)))
    return g if norm <= max_norm else g * (max_norm / norm)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    net: OperatorNet
    mode: str
    params: np.ndarray
    step: int = 0
    adam: AdamState | None = None
    loss_summary: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        arrays = [self.params] + ([self.adam.m, self.adam.v] if self.adam is not None else [])
        block = b"".join(np.asarray(a, dtype="<f8").tobytes() for a in arrays)
        summary = " ".join(f"{k}={'%.17g' % v}" for k, v in sorted(self.loss_summary.items()))
        counts = f"params={len(self.params)} adam={int(self.adam is not None)} step={self.step}"
        if self.adam is not None:
            a = self.adam
            counts += (f" adam_t={a.t} beta1={'%.17g' % a.beta1} beta2={'%.17g' % a.beta2}"
                       f" eps={'%.17g' % a.eps}")
        if summary:
            counts += " " + summary
        head = f"{CKPT_MAGIC}\nmode={self.mode} {self.net.describe()}\n{counts}\n{len(block)}\n"
        return head.encode("ascii") + block

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        lines, pos = [], 0
        for _ in range(4):
            end = raw.find(b"\n", pos)
            if end < 0:
                raise CheckpointFormatError("truncated checkpoint header")
            lines.append(raw[pos:end].decode("ascii"))
            pos = end + 1
        if lines[0] != CKPT_MAGIC:
            raise CheckpointFormatError(f"bad magic line {lines[0]!r}")
        mode_tok, _, desc = lines[1].partition(" ")
        mode = mode_tok.split("=", 1)[1]
        net = OperatorNet.from_description(desc)
        counts = dict(tok.split("=", 1) for tok in lines[2].split())
        nbytes = int(lines[3])
        block = raw[pos:]
        if len(block) != nbytes:
            raise CheckpointFormatError(f"expected {nbytes} data bytes, found {len(block)}")
        n = int(counts["params"])
        if n != net.n_params:
            raise CheckpointFormatError("parameter count disagrees with the architecture")
        vals = np.frombuffer(block, dtype="<f8").astype(float)
        has_adam = counts["adam"] == "1"
        if len(vals) != n * (3 if has_adam else 1):
            raise CheckpointFormatError("data block length disagrees with the counts line")
        adam = None
        if has_adam:
            adam = AdamState(vals[n:2 * n].copy(), vals[2 * n:].copy(), int(counts["adam_t"]),
                             float(counts["beta1"]), float(counts["beta2"]), float(counts["eps"]))
        reserved = {"params", "adam", "step", "adam_t", "beta1", "beta2", "eps"}
        summary = {k: float(v) for k, v in counts.items() if k not in reserved}
        return cls(net, mode, vals[:n].copy(), int(counts["step"]), adam, summary)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# loss history
# ---------------------------------------------------------------------------


@dataclass
class HistoryRow:
    step: int
    lr: float
    total: float
    interior: float
    boundary: float
    interface: float

    def csv(self) -> str:
        return ",".join([str(self.step)] + ["%.17g" % v for v in
                                            (self.lr, self.total, self.interior, self.boundary,
                                             self.interface)])


def write_history(rows, path: str | Path) -> None:
    Path(path).write_text(HISTORY_HEADER + "\n" + "".join(r.csv() + "\n" for r in rows))


def read_history(path: str | Path) -> list:
    out = []
    for line in Path(path).read_text().splitlines()[1:]:
        p = line.split(",")
        out.append(HistoryRow(int(p[0]), *map(float, p[1:])))
    return out


# ---------------------------------------------------------------------------
# minibatches
# ---------------------------------------------------------------------------


def _pick(rng, n: int, k: int) -> np.ndarray:
    if k <= 0 or k >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, k, replace=False))


@dataclass
class Batch:
    functions: np.ndarray
    points: PhysicsPoints | None = None
    X: np.ndarray | None = None
    fidx: np.ndarray | None = None
    target: np.ndarray | None = None


def _physics_batch(cfg: TrainConfig, ds: Dataset, pts_all: list, step: int, funcs) -> Batch:
    rng = rng_for(cfg.seed, _STREAM, step, 1)
    parts = []
    for k, j in enumerate(funcs):
        if cfg.resample:
            sp, c = ds.train[j].spec, ds.config
            coll = sample_collocation(sp.domain, sp.level_set, c.n_interior, c.n_boundary,
                                      c.n_interface, rng, aug=sp.aug)
            p = physics_points(sp, coll)
        else:
            p = pts_all[j]
        ni, nb, ng = p.counts
        sub = p.subset(_pick(rng, ni, cfg.batch_interior), _pick(rng, nb, cfg.batch_boundary),
                       _pick(rng, ng, cfg.batch_interface))
        parts.append(sub.with_fidx(k))
    return Batch(funcs, points=PhysicsPoints.concat(parts))


def _data_batch(cfg: TrainConfig, ds: Dataset, step: int, funcs, xi: bool) -> Batch:
    rng = rng_for(cfg.seed, _STREAM, step, 1)
    Xs, fid, tg = [], [], []
    for k, j in enumerate(funcs):
        s = ds.train[j]
        sel = _pick(rng, len(s.data_x), cfg.batch_data)
        x = s.data_x[sel]
        Xs.append(trunk_inputs(s.spec, x) if xi else x)
        fid.append(np.full(len(sel), k))
        tg.append(s.data_u[sel])
    return Batch(funcs, X=np.concatenate(Xs), fidx=np.concatenate(fid), target=np.concatenate(tg))


def make_batch(cfg: TrainConfig, ds: Dataset, net: OperatorNet, step: int, pts_all=None) -> Batch:
    funcs = _pick(rng_for(cfg.seed, _STREAM, step, 0), len(ds.train), cfg.batch_functions)
    if cfg.mode == "PI":
        return _physics_batch(cfg, ds, pts_all, step, funcs)
    return _data_batch(cfg, ds, step, funcs, net.kind == "xi")


def _branch_inputs(ds: Dataset, net: OperatorNet, funcs, cache) -> list:
    if "all" not in cache:
        cache["all"] = ds.branch_inputs("train")
    F, Phi = cache["all"]
    return [F[funcs], Phi[funcs]] if net.kind == "xi" else [F[funcs]]


# ---------------------------------------------------------------------------
# loss and gradient
# ---------------------------------------------------------------------------


def _chunks(n: int, workers: int) -> list:
    return [c for c in np.array_split(np.arange(n), workers) if len(c)]


def _loss_grad_one(net, theta, cfg, batch: Batch, sensors, scale=None, capacity=0):
    """Tape-tracked loss for (part of) a batch; ``scale`` rescales per-class means."""
    tape = dc.Tape(capacity)
    v = tape.leaf(theta)
    model = NetModel(net, v, sensors)
    if cfg.mode == "PI":
        res, bnd, ifc = physics_terms(model, batch.points)
        total, parts = combine_losses(res, bnd, ifc, cfg.weights)
        if scale is not None:
            w = cfg.weights
            total = (w.interior * scale[0] * parts["interior"]
                     + w.boundary * scale[1] * parts["boundary"]
                     + w.interface * scale[2] * parts["interface"])
            parts = {k: s * p for (k, p), s in zip(parts.items(), scale)}
    else:
        pred = model.values(batch.X, batch.fidx)
        total = loss_data(pred, batch.target)
        if scale is not None:
            total = scale[0] * total
        parts = {"interior": total, "boundary": 0.0, "interface": 0.0}
    grad = dc.tape_gradient(total, v)
    vals = {k: float(dc.value_of(p)) for k, p in parts.items()}
    return float(dc.value_of(total)), vals, grad, len(tape)


def loss_and_grad(net, theta, cfg: TrainConfig, batch: Batch, sensors, pool=None, capacity=0):
    """(total, parts, gradient, tape length).  With a pool the batch is split by function
    and the partial gradients are summed in a fixed order."""
    nf = len(batch.functions)
    if pool is None or cfg.workers <= 1 or nf < 2:
        return _loss_grad_one(net, theta, cfg, batch, sensors, capacity=capacity)
    jobs = []
    for ch in _chunks(nf, cfg.workers):
        lo, hi = ch[0], ch[-1] + 1
        sub_sens = [s[lo:hi] for s in sensors]
        if cfg.mode == "PI":
            P = batch.points
            masks = [(P.fidx_int >= lo) & (P.fidx_int < hi), (P.fidx_bnd >= lo) & (P.fidx_bnd < hi),
                     (P.fidx_ifc >= lo) & (P.fidx_ifc < hi)]
            sub = P.subset(*masks)
            sub.fidx_int, sub.fidx_bnd, sub.fidx_ifc = (sub.fidx_int - lo, sub.fidx_bnd - lo,
                                                        sub.fidx_ifc - lo)
            scale = [m.sum() / max(len(m), 1) for m in masks]
            part = Batch(batch.functions[lo:hi], points=sub)
        else:
            m = (batch.fidx >= lo) & (batch.fidx < hi)
            scale = [m.sum() / len(m)]
            part = Batch(batch.functions[lo:hi], X=batch.X[m], fidx=batch.fidx[m] - lo,
                         target=batch.target[m])
        jobs.append(pool.submit(_loss_grad_one, net, theta, cfg, part, sub_sens, scale))
    results = [j.result() for j in jobs]
    total = sum(r[0] for r in results)
    parts = {k: sum(r[1][k] for r in results) for k in results[0][1]}
    grad = results[0][2].copy()
    for r in results[1:]:
        grad += r[2]
    return total, parts, grad, max(r[3] for r in results)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def check_compatible(cfg: TrainConfig, ds: Dataset, net: OperatorNet) -> None:
    if cfg.mode == "DD" and not ds.has_targets:
        raise DatasetModeError("data-driven training needs a dataset with targets")
    if cfg.mode == "PI" and net.activation != "tanh":
        raise DatasetModeError("physics-informed training needs a tanh network")
    if net.sensors != ds.k or net.d != ds.d:
        raise DatasetModeError(f"network expects k={net.sensors}, d={net.d}; "
                               f"dataset has k={ds.k}, d={ds.d}")


def train(cfg: TrainConfig, ds: Dataset, net: OperatorNet, resume: Checkpoint | None = None,
          stop_at: int | None = None, out_dir: str | Path | None = None,
          log=None, earlier=()):
    """Run (or continue) training; returns (Checkpoint, history rows for the steps run).

    ``stop_at`` ends early after that many total steps (an interrupted run).  With
    ``out_dir``, every periodic checkpoint also rewrites ``history.csv`` as
    ``earlier`` plus the rows so far, so a killed run can be resumed losslessly.
    """
    check_compatible(cfg, ds, net)
    if resume is not None:
        if resume.net != net:
            raise CheckpointFormatError("checkpoint architecture differs from the network")
        theta, step, prior = resume.params.copy(), resume.step, resume.loss_summary
        adam = resume.adam or AdamState.zeros(net.n_params, cfg.beta1, cfg.beta2, cfg.eps)
    else:
        theta, step, prior = init_params(net, cfg.seed), 0, {}
        adam = AdamState.zeros(net.n_params, cfg.beta1, cfg.beta2, cfg.eps)
    end = cfg.iterations if stop_at is None else min(stop_at, cfg.iterations)
    pts_all = ds.physics_points() if cfg.mode == "PI" and not cfg.resample else None
    out = Path(out_dir) if out_dir is not None else None
    history, cache, capacity = [], {}, 0
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        while step < end:
            batch = make_batch(cfg, ds, net, step, pts_all)
            sensors = _branch_inputs(ds, net, batch.functions, cache)
            total, parts, grad, n_ops = loss_and_grad(net, theta, cfg, batch, sensors, pool,
                                                      capacity)
            capacity = max(capacity, n_ops)
            lr = cfg.lr_at(step)
            history.append(HistoryRow(step, lr, total, parts["interior"], parts["boundary"],
                                      parts["interface"]))
            adam, theta = adam_step(adam, theta, clip_gradient(grad, cfg.clip_norm), lr)
            step += 1
            if log is not None and (step % 500 == 0 or step == end):
                log(f"step {step} lr {lr:.3e} loss {total:.4e}")
            if out is not None and cfg.ckpt_every and step % cfg.ckpt_every == 0:
                _checkpoint(net, cfg, theta, step, adam, history, prior).save(out / f"ckpt_{step:07d}.ckpt")
                write_history(list(earlier) + history, out / "history.csv")
    finally:
        if pool is not None:
            pool.shutdown()
    ckpt = _checkpoint(net, cfg, theta, step, adam, history, prior)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ckpt.save(out / "final.ckpt")
    return ckpt, history


def _checkpoint(net, cfg, theta, step, adam, history, prior=None) -> Checkpoint:
    summary = dict(prior or {})
    if history:
        best = min(r.total for r in history)
        summary = {"last_loss": history[-1].total,
                   "min_loss": min(best, summary.get("min_loss", best))}
    return Checkpoint(net, cfg.mode, theta.copy(), step, adam, summary)


def predict(net: OperatorNet, theta, ds: Dataset, split: str, index: int, x) -> np.ndarray:
    """Network output (u, or w for homogenized problems) for one sample at points x."""
    s = ds.samples(split)[index]
    x = np.atleast_2d(x)
    X = trunk_inputs(s.spec, x) if net.kind == "xi" else x
    sens = [s.f_sensors[None], s.phi_sensors[None]] if net.kind == "xi" else [s.f_sensors[None]]
    return forward_points(net, theta, sens, np.zeros(len(x), dtype=int), X)


__all__ = ["AdamState", "Checkpoint", "CheckpointFormatError", "DatasetModeError",
           "HistoryRow", "NonFiniteGradientError", "TrainConfig", "adam_step", "clip_gradient",
           "loss_and_grad", "make_batch", "predict", "read_history", "train", "write_history"]
