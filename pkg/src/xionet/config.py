"""Experiment configuration: sectioned ``key = value`` files with a fixed schema."""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .data import DataConfig
from .opnet import OperatorNet
from .physres import LossWeights
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


REQUIRED = object()

# section -> key -> default (REQUIRED marks keys that must be given)
SCHEMA: dict = {
    "problem": {"example": REQUIRED, "fixed": "", "homogenize": "auto", "test_set": "auto"},
    "sensors": {"count": 0},
    "data": {"n_train": 100, "n_test": 10, "n_interior": 200, "n_boundary": 20,
             "n_interface": 20, "n_data": 0},
    "run": {"seed": 0},
    "net": {"kind": "xi", "width": 100, "depth": 5, "activation": "auto"},
    "train": {"mode": "PI", "iterations": 40000, "lr": 1e-3, "decay": 0.95, "decay_every": 1000,
              "batch_functions": 100, "batch_interior": 0, "batch_boundary": 0,
              "batch_interface": 0, "batch_data": 0, "w_interior": 1.0, "w_boundary": 100.0,
              "w_interface": 1.0, "ckpt_every": 0, "clip_norm": 0.0, "resample": False,
              "workers": 1},
    "eval": {"resolution": 0, "fields": ""},
}

SHIPPED = ("ex1_dd", "ex1_pi", "ex1_baseline_fixed_gamma", "ex1_baseline_xi", "ex2_pi",
           "ex3_pi", "ex3d_pi", "ex6d_pi")


def shipped_config(name: str) -> Path:
    path = Path(__file__).parent / "configs" / f"{name}.ini"
    if not path.exists():
        raise ConfigError(f"no shipped config named {name!r}")
    return path


def _convert(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None
    return raw.strip()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class ExperimentConfig:
    values: dict  # section -> key -> typed value

    def __getitem__(self, key: str):
        sec, _, name = key.partition(".")
        return self.values[sec][name]

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        values = {}
        for sec in cp.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            for key in cp[sec]:
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"unknown key [{sec}] {key}")
        for sec, keys in SCHEMA.items():
            values[sec] = {}
            for key, default in keys.items():
                if cp.has_option(sec, key):
                    values[sec][key] = _convert(sec, key, cp[sec][key], default)
                elif default is REQUIRED:
                    raise ConfigError(f"missing required key [{sec}] {key}")
                else:
                    values[sec][key] = default
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            try:
                path = shipped_config(str(path))
            except ConfigError:
                raise ConfigError(f"config file {path} not found") from None
        return cls.from_text(path.read_text())

    def with_overrides(self, seed: int | None = None, workers: int | None = None):
        vals = {s: dict(k) for s, k in self.values.items()}
        if seed is not None:
            vals["run"]["seed"] = int(seed)
        if workers is not None:
            vals["train"]["workers"] = int(workers)
        out = ExperimentConfig(vals)
        out.validate()
        return out

    def validate(self) -> None:
        # building every derived object surfaces range errors early
        try:
            self.data_config()
            self.train_config()
            self.network(1, 1)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def resolved_text(self) -> str:
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {_fmt(self.values[sec][k])}" for k in keys]
            lines.append("")
        return "\n".join(lines)

    def write_resolved(self, directory: str | Path) -> Path:
        path = Path(directory) / "config.resolved.ini"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.resolved_text())
        return path

    # -- derived objects ---------------------------------------------------

    def _fixed(self) -> tuple:
        out = []
        for item in self["problem.fixed"].split(","):
            if not item.strip():
                continue
            name, sep, val = item.partition(":")
            if not sep:
                raise ConfigError(f"[problem] fixed: expected name:value, got {item!r}")
            try:
                out.append((name.strip(), float(val)))
            except ValueError:
                raise ConfigError(f"[problem] fixed: bad value in {item!r}") from None
        return tuple(out)

    def data_config(self) -> DataConfig:
        d = self.values["data"]
        return DataConfig(self["problem.example"], d["n_train"], d["n_test"], d["n_interior"],
                          d["n_boundary"], d["n_interface"], d["n_data"], self["run.seed"],
                          self._fixed(), self["problem.homogenize"], self["problem.test_set"],
                          self["sensors.count"])

    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        w = LossWeights(t["w_interior"], t["w_boundary"], t["w_interface"])
        keys = ("mode", "iterations", "lr", "decay", "decay_every", "batch_functions",
                "batch_interior", "batch_boundary", "batch_interface", "batch_data",
                "ckpt_every", "clip_norm", "resample", "workers")
        return TrainConfig(weights=w, seed=self["run.seed"], **{k: t[k] for k in keys})

    def activation(self) -> str:
        act = self["net.activation"]
        if act == "auto":
            return "relu" if self["train.mode"] == "DD" else "tanh"
        return act

    def network(self, sensors: int, d: int) -> OperatorNet:
        n = self.values["net"]
        if n["kind"] not in ("xi", "deeponet"):
            raise ConfigError(f"[net] kind must be xi or deeponet, got {n['kind']!r}")
        build = OperatorNet.xi if n["kind"] == "xi" else OperatorNet.deeponet
        return build(sensors, d, n["width"], n["depth"], self.activation())

    def eval_fields(self) -> tuple:
        raw = self["eval.fields"]
        try:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"[eval] fields: expected sample indices, got {raw!r}") from None
