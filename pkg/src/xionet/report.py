"""Evaluation on equispaced test grids and CSV exports."""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, reference_solution
from .geom import TAU, Domain, LevelSet, region_of
from .opnet import OperatorNet
from .trainer import Checkpoint, predict

DEFAULT_RESOLUTION = {1: 1001, 2: 201, 3: 61, 6: 9}


class ZeroReferenceError(ZeroDivisionError):
    pass


class ArchitectureMismatchError(ValueError):
    pass


def fmt(v) -> str:
    return "%.17g" % float(v)


def relative_l2(predicted, reference) -> float:
    """||pred - ref|| / ||ref|| with the root-mean-square norm over the grid."""
    p = np.asarray(predicted, dtype=float).reshape(-1)
    r = np.asarray(reference, dtype=float).reshape(-1)
    if p.shape != r.shape:
        raise ValueError(f"length mismatch: {p.size} vs {r.size}")
    ref = np.sqrt(np.mean(r * r))
    if ref == 0.0:
        raise ZeroReferenceError("reference has zero norm")
    return float(np.sqrt(np.mean((p - r) ** 2)) / ref)


@dataclass
class TestGrid:
    __test__ = False  # not a pytest class despite the name

    nodes: np.ndarray
    regions: np.ndarray
    resolution: int

    @classmethod
    def build(cls, domain: Domain, ls: LevelSet, resolution: int | None = None) -> "TestGrid":
        """Bounding-box lattice clipped to the domain, minus nodes on the interface."""
        d = domain.dim
        n = DEFAULT_RESOLUTION.get(d, 9) if resolution is None else int(resolution)
        if n < 2:
            raise ValueError("resolution must be >= 2")
        axis = np.linspace(domain.lo, domain.hi, n)
        mesh = np.meshgrid(*([axis] * d), indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        pts = pts[domain.contains(pts)]
        pts = pts[np.abs(ls.value(pts)) > TAU]
        return cls(pts, np.atleast_1d(region_of(ls, pts)), n)


@dataclass
class EvalReport:
    errors: np.ndarray
    n_params: int
    runtime: float
    digest: str
    resolution: int
    grid_sizes: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def max(self) -> float:
        return float(np.max(self.errors))

    def errors_csv(self) -> str:
        return "sample,rel_l2\n" + "".join(f"{i},{fmt(e)}\n" for i, e in enumerate(self.errors))

    def summary(self) -> str:
        return (f"samples={len(self.errors)} mean_rel_l2={fmt(self.mean)} max_rel_l2={fmt(self.max)} "
                f"params={self.n_params} resolution={self.resolution} digest={self.digest}")


def field_csv(nodes, pred, ref) -> str:
    d = nodes.shape[1]
    head = ",".join([f"x{j + 1}" for j in range(d)] + ["pred", "ref", "abs_err"])
    rows = [",".join([fmt(v) for v in x] + [fmt(p), fmt(r), fmt(abs(p - r))])
            for x, p, r in zip(nodes, pred, ref)]
    return head + "\n" + "".join(r + "\n" for r in rows)


def sample_field(net: OperatorNet, theta, ds: Dataset, index: int, split: str = "test",
                 resolution: int | None = None):
    """(nodes, predicted u, reference u) for one sample on its test grid."""
    s = ds.samples(split)[index]
    grid = TestGrid.build(s.spec.domain, s.spec.level_set, resolution)
    w = np.asarray(predict(net, theta, ds, split, index, grid.nodes))
    pred = s.spec.recover(w, grid.nodes)
    ref = reference_solution(s.spec)(grid.nodes)
    return grid.nodes, pred, ref


def check_architecture(net: OperatorNet, ds: Dataset) -> None:
    if net.sensors != ds.k or net.d != ds.d:
        raise ArchitectureMismatchError(
            f"checkpoint expects {net.sensors} sensors in {net.d}D; dataset has {ds.k} in {ds.d}D")


def eval_operator(ckpt: Checkpoint, ds: Dataset, resolution: int | None = None,
                  out_dir: str | Path | None = None, fields=(), split: str = "test",
                  digest: str | None = None) -> EvalReport:
    """Relative L2 error of every sample in ``split``; optional CSV exports."""
    check_architecture(ckpt.net, ds)
    t0 = time.perf_counter()
    errs, sizes = [], []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for i in range(len(ds.samples(split))):
        nodes, pred, ref = sample_field(ckpt.net, ckpt.params, ds, i, split, resolution)
        errs.append(relative_l2(pred, ref))
        sizes.append(len(nodes))
        if out is not None and i in set(fields):
            (out / f"field_{i}.csv").write_text(field_csv(nodes, pred, ref))
    if digest is None:
        digest = hashlib.sha256(repr(ds.config).encode()).hexdigest()[:16]
    res = resolution if resolution is not None else DEFAULT_RESOLUTION.get(ds.d, 9)
    rep = EvalReport(np.array(errs), ckpt.net.n_params, time.perf_counter() - t0, digest, res, sizes)
    if out is not None:
        (out / "errors.csv").write_text(rep.errors_csv())
    return rep


def read_errors(path: str | Path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if lines[0] != "sample,rel_l2":
        raise ValueError("not an errors.csv file")
    return np.array([float(line.split(",")[1]) for line in lines[1:]])
