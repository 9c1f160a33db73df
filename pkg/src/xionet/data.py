"""Datasets of input-function samples: generation, reference solutions and on-disk format.

A dataset directory holds

    meta          key=value lines (generation settings)
    samples.csv   sample,split,grf_seed,<parameters...>
    sensors.csv   sample,split,branch,s1..sk     (branch is f or phi)
    colloc.csv    sample,class,region,x1..xd,n1..nd  (training split; n is the interface normal)
    targets.csv   sample,x1..xd,u                (only when data targets were requested)

Problems are rebuilt from ``samples.csv`` on load; every number is written
with 17 significant digits so a reload is exact.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import fieldgen as fg
from .fieldgen import ProblemSpec
from .geom import (CollocationSet, Region, aug_value, interface_frame, region_of, rng_for,
                   sample_collocation, sensor_grid)
from .physres import PhysicsPoints, physics_points
from .refsolve import solve_interface_1d

FORMAT = "xionet-data v1"
SPLITS = ("train", "test")


class DatasetFormatError(ValueError):
    pass


def fmt(v) -> str:
    return "%.17g" % float(v)


@dataclass(frozen=True)
class DataConfig:
    example: str
    n_train: int = 100
    n_test: int = 10
    n_interior: int = 200
    n_boundary: int = 20
    n_interface: int = 20
    n_data: int = 0          # target points per training function (data-driven mode)
    seed: int = 0
    fixed: tuple = ()        # ((name, value), ...) pinned parameters
    homogenize: str = "auto"  # auto | yes | no
    test_set: str = "auto"    # auto (curated sets where available) | random
    sensor_count: int = 0     # 0 means the example's default count

    def __post_init__(self):
        if self.example not in fg.EXAMPLES:
            raise ValueError(f"unknown example {self.example!r}")
        if self.homogenize not in ("auto", "yes", "no"):
            raise ValueError("homogenize must be auto, yes or no")
        if self.test_set not in ("auto", "random"):
            raise ValueError("test_set must be auto or random")
        if self.sensor_count < 0:
            raise ValueError("sensor_count must be >= 0")
        for name in ("n_train", "n_interior", "n_boundary", "n_interface"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def sensors(self) -> int:
        return self.sensor_count or fg.SENSOR_COUNTS[self.example]

    def to_meta(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["fixed"] = ",".join(f"{k}:{fmt(v)}" for k, v in self.fixed)
        return {k: str(v) for k, v in out.items()}

    @classmethod
    def from_meta(cls, meta: dict) -> "DataConfig":
        kw = {}
        for f in fields(cls):
            raw = meta[f.name]
            if f.name == "fixed":
                kw["fixed"] = tuple((k, float(v)) for k, v in
                                    (item.split(":") for item in raw.split(",") if item))
            elif f.name in ("example", "homogenize", "test_set"):
                kw[f.name] = raw
            else:
                kw[f.name] = int(raw)
        return cls(**kw)


@dataclass
class Sample:
    index: int
    split: str
    params: dict
    grf_seed: int
    spec: ProblemSpec
    f_sensors: np.ndarray
    phi_sensors: np.ndarray
    colloc: CollocationSet | None = None
    data_x: np.ndarray | None = None
    data_u: np.ndarray | None = None


@dataclass
class Dataset:
    config: DataConfig
    sensors: np.ndarray
    train: list
    test: list
    _points: list | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.sensors.shape[1]

    @property
    def k(self) -> int:
        return len(self.sensors)

    @property
    def has_targets(self) -> bool:
        return all(s.data_x is not None and len(s.data_x) > 0 for s in self.train)

    def samples(self, split: str) -> list:
        return self.train if split == "train" else self.test

    def branch_inputs(self, split: str = "train") -> list:
        ss = self.samples(split)
        return [np.stack([s.f_sensors for s in ss]), np.stack([s.phi_sensors for s in ss])]

    def physics_points(self) -> list:
        """Per training sample PhysicsPoints (fidx 0), built once."""
        if self._points is None:
            self._points = [physics_points(s.spec, s.colloc) for s in self.train]
        return self._points


# ---------------------------------------------------------------------------
# problems and references
# ---------------------------------------------------------------------------


def _wants_homogenize(cfg: DataConfig, params: dict) -> bool:
    if cfg.homogenize == "no":
        return False
    v = fg.extension_for(cfg.example, params)
    if cfg.homogenize == "yes" and v is None:
        raise ValueError(f"{cfg.example} has no extension field to homogenize with")
    return v is not None


def build_problem(cfg: DataConfig, params: dict, grf_seed: int, sensors: np.ndarray) -> ProblemSpec:
    spec = fg.problem_for_example(cfg.example, params, seed=grf_seed, sensors=sensors)
    if _wants_homogenize(cfg, params):
        spec, _ = fg.homogenize(spec, fg.extension_for(cfg.example, params))
    return spec


def reference_solution(spec: ProblemSpec):
    """u(x) for a problem: the closed form when known, else the 1D reference solver."""
    if spec.exact is not None:
        exact = spec.exact
        return lambda x: exact.value_by_region(np.atleast_2d(x), spec.regions(np.atleast_2d(x)))
    if spec.dim != 1:
        raise fg.NoExactSolutionError(f"{spec.example}: no reference available at {spec.params}")
    a_plus = float(spec.a.value(np.zeros((1, 1)), Region.PLUS)[0])
    a_minus = float(spec.a.value(np.zeros((1, 1)), Region.MINUS)[0])
    sol = solve_interface_1d(a_plus, a_minus, spec.params["p"], spec.f, grid=fg.GRID_1D - 1)
    return lambda x: sol.evaluate(np.atleast_2d(x)[:, 0])


def target_values(spec: ProblemSpec, x) -> np.ndarray:
    """What the network is trained to output at x (u, or u - v when homogenized)."""
    x = np.atleast_2d(x)
    u = reference_solution(spec)(x)
    if spec.extension is not None:
        u = u - spec.extension.value(x, spec.regions(x))
    return u


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _param_list(cfg: DataConfig, split: str) -> list:
    fixed = dict(cfg.fixed)
    if split == "test" and cfg.test_set == "auto" and cfg.example in fg.TEST_SETS:
        return [dict(p) for p in fg.TEST_SETS[cfg.example]]
    n = cfg.n_train if split == "train" else cfg.n_test
    out = []
    for i in range(n):
        p = fg.sample_params(cfg.example, rng_for(cfg.seed, 0x10, SPLITS.index(split), i))
        p.update(fixed)
        out.append(p)
    return out


def _grf_seed(cfg: DataConfig, split: str, i: int) -> int:
    return int(rng_for(cfg.seed, 0x11, SPLITS.index(split), i).integers(2 ** 62))


def _make_sample(cfg, split, i, params, grf_seed, sensors) -> Sample:
    spec = build_problem(cfg, params, grf_seed, sensors)
    return Sample(i, split, params, grf_seed, spec, spec.f_sensors(), spec.phi_sensors())


def generate(cfg: DataConfig) -> Dataset:
    sensors = sensor_grid(fg.domain_for(cfg.example), cfg.sensors)
    splits = {}
    for split in SPLITS:
        items = []
        for i, params in enumerate(_param_list(cfg, split)):
            s = _make_sample(cfg, split, i, params, _grf_seed(cfg, split, i), sensors)
            if split == "train":
                sp = s.spec
                s.colloc = sample_collocation(sp.domain, sp.level_set, cfg.n_interior,
                                              cfg.n_boundary, cfg.n_interface,
                                              rng_for(cfg.seed, 0x12, i), aug=sp.aug)
                if cfg.n_data > 0:
                    x = sp.domain.uniform(rng_for(cfg.seed, 0x13, i), cfg.n_data)
                    s.data_x, s.data_u = x, target_values(sp, x)
            items.append(s)
        splits[split] = items
    return Dataset(cfg, sensors, splits["train"], splits["test"])


# ---------------------------------------------------------------------------
# storage
# ---------------------------------------------------------------------------


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, list(r)


def save(ds: Dataset, out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg, d, k = ds.config, ds.d, ds.k
    meta = {"format": FORMAT, **cfg.to_meta(), "dim": str(d),
            "sensors": str(k), "grf_lengths": ",".join(fmt(v) for v in fg.EX1_LENGTHS)
            if cfg.example == "ex1" else ""}
    meta.update({f"range.{key}": f"{fmt(lo)}:{fmt(hi)}"
                 for key, (lo, hi) in fg.RANGES[cfg.example].items()})
    (out / "meta").write_text("".join(f"{key}={val}\n" for key, val in meta.items()))

    keys = sorted({key for s in ds.train + ds.test for key in s.params})
    _write_csv(out / "samples.csv", ["sample", "split", "grf_seed"] + keys,
               [[s.index, s.split, s.grf_seed] + [fmt(s.params[key]) for key in keys]
                for s in ds.train + ds.test])
    rows = []
    for s in ds.train + ds.test:
        rows.append([s.index, s.split, "f"] + [fmt(v) for v in s.f_sensors])
        rows.append([s.index, s.split, "phi"] + [fmt(v) for v in s.phi_sensors])
    _write_csv(out / "sensors.csv", ["sample", "split", "branch"] + [f"s{j + 1}" for j in range(k)],
               rows)
    xs = [f"x{j + 1}" for j in range(d)]
    rows = []
    zero = ["0"] * d
    for s in ds.train:
        c = s.colloc
        rows += [[s.index, "interior", r.value] + [fmt(v) for v in x] + zero
                 for x, r in zip(c.interior, c.interior_region)]
        b_reg = np.atleast_1d(region_of(s.spec.level_set, c.boundary))
        rows += [[s.index, "boundary", r.value] + [fmt(v) for v in x] + zero
                 for x, r in zip(c.boundary, b_reg)]
        rows += [[s.index, "interface", Region.ON_INTERFACE.value] + [fmt(v) for v in x]
                 + [fmt(v) for v in n] for x, n in zip(c.interface.points, c.interface.normals)]
    _write_csv(out / "colloc.csv", ["sample", "class", "region"] + xs
               + [f"n{j + 1}" for j in range(d)], rows)
    if cfg.n_data > 0:
        rows = [[s.index] + [fmt(v) for v in x] + [fmt(u)]
                for s in ds.train for x, u in zip(s.data_x, s.data_u)]
        _write_csv(out / "targets.csv", ["sample"] + xs + ["u"], rows)
    return out


def read_meta(path: str | Path) -> dict:
    meta = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, val = line.partition("=")
            meta[key.strip()] = val.strip()
    return meta


def load(path: str | Path) -> Dataset:
    path = Path(path)
    if not (path / "meta").exists():
        raise DatasetFormatError(f"{path}: not a dataset directory (no meta file)")
    meta = read_meta(path / "meta")
    if meta.get("format") != FORMAT:
        raise DatasetFormatError(f"{path}: unsupported format {meta.get('format')!r}")
    cfg = DataConfig.from_meta(meta)
    d = int(meta["dim"])
    sensors = sensor_grid(fg.domain_for(cfg.example), cfg.sensors)

    header, rows = _read_csv(path / "samples.csv")
    keys = header[3:]
    _, srows = _read_csv(path / "sensors.csv")
    sens = {(int(r[0]), r[1], r[2]): np.array(r[3:], dtype=float) for r in srows}
    splits = {"train": [], "test": []}
    for r in rows:
        i, split, seed = int(r[0]), r[1], int(r[2])
        params = {key: float(v) for key, v in zip(keys, r[3:])}
        spec = build_problem(cfg, params, seed, sensors)
        splits[split].append(Sample(i, split, params, seed, spec, sens[(i, split, "f")],
                                    sens[(i, split, "phi")]))

    _, crows = _read_csv(path / "colloc.csv")
    by_sample: dict = {}
    for r in crows:
        by_sample.setdefault(int(r[0]), {"interior": [], "boundary": [], "interface": []})[
            r[1]].append([float(v) for v in r[3:3 + d]])
    for s in splits["train"]:
        c = by_sample[s.index]
        ls = s.spec.level_set
        interior = np.array(c["interior"], dtype=float).reshape(-1, d)
        s.colloc = CollocationSet(interior, np.atleast_1d(region_of(ls, interior)),
                                  np.array(c["boundary"], dtype=float).reshape(-1, d),
                                  interface_frame(ls, s.spec.aug,
                                                  np.array(c["interface"]).reshape(-1, d)))
    if (path / "targets.csv").exists():
        _, trows = _read_csv(path / "targets.csv")
        arr = np.array([[float(v) for v in r] for r in trows]).reshape(-1, d + 2)
        for s in splits["train"]:
            m = arr[:, 0] == s.index
            s.data_x, s.data_u = arr[m, 1:1 + d], arr[m, 1 + d]
    return Dataset(cfg, sensors, splits["train"], splits["test"])


def trunk_inputs(spec: ProblemSpec, x) -> np.ndarray:
    """(x, Phi(x)) rows for the XI trunk."""
    x = np.atleast_2d(x)
    return np.concatenate([x, aug_value(spec.level_set, spec.aug, x)[:, None]], axis=1)


__all__ = ["DataConfig", "Dataset", "DatasetFormatError", "PhysicsPoints", "Sample",
           "build_problem", "generate", "load", "read_meta", "reference_solution", "save",
           "target_values", "trunk_inputs"]
