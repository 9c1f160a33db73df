"""``xionet gen | train | eval | export``.

All commands share one run directory (``--out``):

    <out>/data/     dataset (gen)
    <out>/train/    checkpoints, history.csv (train)
    <out>/eval/     errors.csv, field_<i>.csv, summary.txt (eval)
    <out>/export/   field_<i>.csv (export)

Each of them also receives ``config.resolved.ini``.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import data as D
from . import report as R
from . import trainer as T
from .config import ConfigError, ExperimentConfig


class CliError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xionet", description="Interface operator learning experiments.")
    sub = p.add_subparsers(dest="command", metavar="{gen,train,eval,export}")
    sub.required = True
    for name, help_ in (("gen", "generate a dataset"), ("train", "train a network"),
                        ("eval", "evaluate a checkpoint on the test split"),
                        ("export", "dump one solution field")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="config file or shipped config name")
        sp.add_argument("--out", required=True, help="run directory")
        sp.add_argument("--seed", type=int, default=None, help="override [run] seed")
        sp.add_argument("--workers", type=int, default=None, help="override [train] workers")
        if name in ("train", "eval", "export"):
            sp.add_argument("--ckpt", default=None,
                            help="checkpoint (train: resume from it; eval/export: required)")
        if name == "export":
            sp.add_argument("--sample", type=int, default=None, help="test sample index")
    return p


def _load_data(cfg: ExperimentConfig, out: Path) -> D.Dataset:
    path = out / "data"
    if not (path / "meta").exists():
        raise CliError(f"no dataset in {path}; run `xionet gen` first")
    ds = D.load(path)
    if ds.config != cfg.data_config():
        raise CliError(f"dataset in {path} was generated from a different [problem]/[data] setup")
    return ds


def _need_ckpt(args) -> Path:
    if args.ckpt is None:
        raise CliError(f"{args.command} requires --ckpt PATH")
    path = Path(args.ckpt)
    if not path.exists():
        raise CliError(f"--ckpt: checkpoint {path} not found")
    return path


def cmd_gen(cfg: ExperimentConfig, args) -> None:
    out = Path(args.out) / "data"
    t0 = time.perf_counter()
    ds = D.generate(cfg.data_config())
    D.save(ds, out)
    cfg.write_resolved(out)
    print(f"gen: {len(ds.train)} train / {len(ds.test)} test samples -> {out} "
          f"({time.perf_counter() - t0:.1f}s)")


def cmd_train(cfg: ExperimentConfig, args) -> None:
    out = Path(args.out)
    ds = _load_data(cfg, out)
    net = cfg.network(ds.k, ds.d)
    tc = cfg.train_config()
    tdir = out / "train"
    resume, earlier = None, []
    if args.ckpt is not None:
        resume = T.Checkpoint.load(_need_ckpt(args))
        if (tdir / "history.csv").exists():
            earlier = [r for r in T.read_history(tdir / "history.csv") if r.step < resume.step]
    print(f"train: {net.n_params} parameters, mode {tc.mode}, {tc.iterations} iterations")
    ckpt, hist = T.train(tc, ds, net, resume=resume, out_dir=tdir, log=print,
                         earlier=earlier)
    T.write_history(earlier + hist, tdir / "history.csv")
    cfg.write_resolved(tdir)
    print(f"train: final loss {ckpt.loss_summary.get('last_loss', float('nan')):.4e} -> "
          f"{tdir / 'final.ckpt'}")


def cmd_eval(cfg: ExperimentConfig, args) -> None:
    ckpt = T.Checkpoint.load(_need_ckpt(args))
    out = Path(args.out)
    ds = _load_data(cfg, out)
    edir = out / "eval"
    res = cfg["eval.resolution"] or None
    rep = R.eval_operator(ckpt, ds, res, edir, cfg.eval_fields())
    (edir / "summary.txt").write_text(rep.summary() + "\n")
    cfg.write_resolved(edir)
    print("eval: " + rep.summary())


def cmd_export(cfg: ExperimentConfig, args) -> None:
    ckpt = T.Checkpoint.load(_need_ckpt(args))
    if args.sample is None:
        raise CliError("export requires --sample I")
    out = Path(args.out)
    ds = _load_data(cfg, out)
    R.check_architecture(ckpt.net, ds)
    if not 0 <= args.sample < len(ds.test):
        raise CliError(f"--sample: index {args.sample} outside 0..{len(ds.test) - 1}")
    nodes, pred, ref = R.sample_field(ckpt.net, ckpt.params, ds, args.sample,
                                      resolution=cfg["eval.resolution"] or None)
    xdir = out / "export"
    xdir.mkdir(parents=True, exist_ok=True)
    path = xdir / f"field_{args.sample}.csv"
    path.write_text(R.field_csv(nodes, pred, ref))
    cfg.write_resolved(xdir)
    print(f"export: {len(nodes)} nodes -> {path}")


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "export": cmd_export}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = ExperimentConfig.load(args.config).with_overrides(args.seed, args.workers)
        COMMANDS[args.command](cfg, args)
    except (CliError, ConfigError, D.DatasetFormatError, T.CheckpointFormatError,
            T.DatasetModeError, R.ArchitectureMismatchError) as exc:
        print(f"xionet {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
