"""End-to-end acceptance checks.  Each test reports one PASS/FAIL line."""
import filecmp
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.interpolate import CubicSpline

from xionet import data as D
from xionet import diffcore as dc
from xionet import fieldgen as F
from xionet.cli import main
from xionet.config import ExperimentConfig, shipped_config
from xionet.fieldgen import GrfSpec, PiecewiseField, grf_draw, grf_factor, homogenized_problem
from xionet.geom import Region, aug_eval, rng_for, sample_collocation, sample_interface
from xionet.opnet import OperatorNet, derivs_points, forward_points, init_params
from xionet.physres import AnalyticModel, NetModel, loss_physics, physics_points
from xionet.refsolve import closed_form_constant_f, solve_interface_1d
from xionet.report import read_errors
from xionet.trainer import Checkpoint, TrainConfig, read_history, train

# ---------------------------------------------------------------------------
# 1. derivatives of the extended network vs finite differences
# ---------------------------------------------------------------------------


def _fd_derivs(F_, X, d, h=1e-3):
    """Fourth-order central differences of every first and second derivative."""
    n_in, P = X.shape[1], X.shape[0]
    E = np.eye(n_in) * h
    w1 = np.array([1.0, -8.0, 8.0, -1.0]) / (12 * h)
    s1 = np.array([-2, -1, 1, 2])
    # gather every shifted copy of X, evaluate once
    shifts = [np.zeros(n_in)]
    for i in range(n_in):
        shifts += [s * E[i] for s in s1]
    for i in range(n_in):
        for j in range(i + 1, n_in):
            shifts += [a * E[i] + b * E[j] for a in s1 for b in s1]
    vals = F_(np.concatenate([X + s for s in shifts])).reshape(len(shifts), P)
    f0, k = vals[0], 1
    grad, diag = np.zeros((P, n_in)), np.zeros((P, n_in))
    for i in range(n_in):
        q = vals[k:k + 4]
        k += 4
        grad[:, i] = w1 @ q
        diag[:, i] = (-q[0] + 16 * q[1] - 30 * f0 + 16 * q[2] - q[3]) / (12 * h * h)
    cross = {}
    for i in range(n_in):
        for j in range(i + 1, n_in):
            q = vals[k:k + 16].reshape(4, 4, P)
            k += 16
            cross[i, j] = np.einsum("a,b,abp->p", w1, w1, q)
    lap = diag[:, :d].sum(axis=1)
    mixed = np.stack([cross[i, d] for i in range(d)], axis=1)
    return grad, lap, mixed, diag[:, d]


def _rel(a, b):
    return np.linalg.norm(np.ravel(a - b)) / np.linalg.norm(np.ravel(b))


def test_c1_derivatives_match_finite_differences(verdict):
    rng = np.random.default_rng(2024)
    worst, t0 = 0.0, time.perf_counter()
    for trial in range(100):
        d = int(rng.integers(1, 4))
        width, depth, k = int(rng.integers(4, 65)), int(rng.integers(2, 6)), int(rng.integers(2, 9))
        net = OperatorNet.xi(k, d, width, depth)
        th = init_params(net, trial) * rng.uniform(0.5, 1.5)
        sens = [rng.normal(size=(1, k)), rng.normal(size=(1, k))]
        X = np.concatenate([rng.uniform(-1, 1, (3, d)), rng.uniform(0, 1, (3, 1))], axis=1)
        fidx = np.zeros(3, dtype=int)
        ed = derivs_points(net, th, sens, fidx, X)
        grad, lap, mixed, uzz = _fd_derivs(
            lambda Y: forward_points(net, th, sens, np.zeros(len(Y), dtype=int), Y), X, d)
        errs = [_rel(ed.grad_x, grad[:, :d]), _rel(ed.U_z, grad[:, d]), _rel(ed.lap_x, lap),
                _rel(ed.mixed, mixed), _rel(ed.U_zz, uzz)]
        worst = max(worst, *errs)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed <= 60
    verdict(1, "extended derivatives vs FD", ok,
            f"worst relative error {worst:.2e} (<= 1e-6), {elapsed:.1f}s (<= 60s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. parameter gradient of the physics loss
# ---------------------------------------------------------------------------


def test_c2_parameter_gradient(verdict):
    spec = F.problem_for_example("ex1", {"p": 0.55}, seed=8)
    coll = sample_collocation(spec.domain, spec.level_set, 32, 2, 1, rng_for(8, 1))
    pts = physics_points(spec, coll)
    net = OperatorNet.xi(100, 1, 16, 4)
    sens = [spec.f_sensors()[None], spec.phi_sensors()[None]]
    theta = init_params(net, 7)
    tape = dc.Tape()
    v = tape.leaf(theta)
    g = dc.tape_gradient(loss_physics(NetModel(net, v, sens), pts)[0], v)
    idx = rng_for(7, 2).choice(len(theta), 20, replace=False)
    eps, fd = 1e-6, []
    for i in idx:
        e = np.zeros_like(theta)
        e[i] = eps
        lp = loss_physics(NetModel(net, theta + e, sens), pts)[0]
        lm = loss_physics(NetModel(net, theta - e, sens), pts)[0]
        fd.append((lp - lm) / (2 * eps))
    err = _rel(g[idx], np.array(fd))
    ok = err <= 1e-5
    verdict(2, "loss gradient vs FD", ok, f"relative error {err:.2e} over 20 parameters (<= 1e-5)")
    assert ok


# ---------------------------------------------------------------------------
# 3. analytic extended fields satisfy the operator equations
# ---------------------------------------------------------------------------


def _oracle_loss(example, params, model):
    spec = homogenized_problem(example, params)
    coll = sample_collocation(spec.domain, spec.level_set, 400, 100, 100, rng_for(31, 0x33),
                              spec.aug)
    return loss_physics(model, physics_points(spec, coll))[0]


def _ex2_model(r0):
    ap, am = F.EX2_A_PLUS, F.EX2_A_MINUS
    plus = lambda x, y, z: -((z + r0 * r0) ** 1.5 - 1.0) / ap
    minus = lambda x, y, z: -((r0 * r0 - z) ** 1.5 / am + (1 / ap - 1 / am) * r0 ** 3 - 1 / ap)
    return AnalyticModel(plus, minus, 2)


def test_c3_operator_oracle(verdict):
    losses = {f"ex2 r0={r0}": _oracle_loss("ex2", {"r0": r0, "p": 1.0}, _ex2_model(r0))
              for r0 in (0.5, 0.6, 0.7)}
    w = lambda x, y, z: 1.0 / (1.0 + 10.0 * (x * x + y * y))
    for params in F.TEST_SETS["ex3"]:
        assert (params["p1_plus"], params["p2_plus"]) == (80.0, 1600.0)
        losses[f"ex3 r={params['r1']},{params['r2']}"] = _oracle_loss(
            "ex3", params, AnalyticModel(w, w, 2))
    worst = max(losses.values())
    ok = worst <= 1e-10
    verdict(3, "operator-equation oracle", ok, f"largest physics loss {worst:.2e} (<= 1e-10)")
    assert ok, losses


# ---------------------------------------------------------------------------
# 4. reference solver
# ---------------------------------------------------------------------------


def _smooth_grf_source(seed):
    """GRF sample paths per side, drawn on 41 knots and continued by cubic splines."""
    knots = np.linspace(0, 1, 41)
    rng = rng_for(seed, 0x55)
    sides = [CubicSpline(knots, grf_factor(GrfSpec(ell), knots) @ rng.standard_normal(41))
             for ell in (0.2, 0.1)]
    return PiecewiseField(*sides)


def test_c4_reference_solver(verdict):
    a_plus, a_minus = 0.5, 0.1
    closed = 0.0
    for p in (0.4, 0.5, 0.5432, 0.7):
        sol = solve_interface_1d(a_plus, a_minus, p, lambda x: 1.0 + 0.0 * x, 1000)
        exact = closed_form_constant_f(a_plus, a_minus, p, 1.0)(sol.nodes)
        closed = max(closed, np.max(np.abs(sol.u - exact)))
    orders, slowest = [], 0.0
    for seed in range(3):
        p = 0.41 + 0.1 * seed
        f = _smooth_grf_source(seed)
        ref = solve_interface_1d(a_plus, a_minus, p, f, 12800)
        Ms = np.array([100, 200, 400, 800])
        errs = []
        for M in Ms:
            t0 = time.perf_counter()
            sol = solve_interface_1d(a_plus, a_minus, p, f, M)
            slowest = max(slowest, time.perf_counter() - t0)
            errs.append(np.max(np.abs(sol.u - ref.evaluate(sol.nodes))))
        orders.append(np.polyfit(np.log(1.0 / Ms), np.log(errs), 1)[0])
    t0 = time.perf_counter()
    solve_interface_1d(a_plus, a_minus, 0.5, F.example1_source(0, 0.5)[0], 1000)
    slowest = max(slowest, time.perf_counter() - t0)
    orders = np.array(orders)
    ok = closed <= 1e-6 and np.all(np.abs(orders - 2.0) <= 0.2) and slowest <= 1.0
    verdict(4, "reference solver", ok,
            f"closed-form error {closed:.1e} (<= 1e-6), orders {np.round(orders, 3).tolist()} "
            f"(2 +- 0.2), slowest solve {slowest * 1e3:.0f}ms (<= 1s)")
    assert ok


# ---------------------------------------------------------------------------
# 5. GRF statistics
# ---------------------------------------------------------------------------


def test_c5_grf_statistics(verdict):
    spec = GrfSpec(0.2)
    grid = np.linspace(0, 1, 101)
    diag_exact = np.array_equal(np.diag(spec.kernel(grid, grid)), np.ones(101))
    probes = np.array([0.05, 0.2, 0.35, 0.6, 0.95])
    draws = np.array([grf_draw(spec, probes, s) for s in range(20_000)])
    dev = np.max(np.abs(draws.T @ draws / len(draws) - spec.kernel(probes, probes)))
    ok = diag_exact and dev <= 0.05
    verdict(5, "GRF statistics", ok,
            f"unit diagonal exact={diag_exact}, covariance deviation {dev:.3f} (<= 0.05)")
    assert ok


# ---------------------------------------------------------------------------
# 9. interface continuity
# ---------------------------------------------------------------------------


def _side_predictions(net, theta, sample, pts):
    ls, aug = sample.spec.level_set, sample.spec.aug
    sens = [sample.f_sensors[None], sample.phi_sensors[None]]
    fidx = np.zeros(len(pts), dtype=int)
    out = []
    for side in (Region.PLUS, Region.MINUS):
        X = np.concatenate([pts, np.atleast_1d(aug_eval(ls, aug, pts, side)[0])[:, None]], axis=1)
        out.append(forward_points(net, theta, sens, fidx, X))
    return out


def test_c9_interface_continuity(verdict):
    small = dict(n_train=4, n_test=1, n_interior=16, n_boundary=8, n_interface=8, seed=9)
    cases = []
    for example in ("ex1", "ex2", "ex3", "ex6d"):
        ds = D.generate(D.DataConfig(example, **small))
        for seed in range(3):
            net = OperatorNet.xi(ds.k, ds.d, 32, 4)
            cases.append((f"{example} random {seed}", ds, net, init_params(net, seed)))
    ds = D.generate(D.DataConfig("ex2", **small))
    net = OperatorNet.xi(ds.k, ds.d, 16, 3)
    trained, _ = train(TrainConfig(mode="PI", iterations=50, batch_functions=2,
                                   batch_interior=8, batch_boundary=4, batch_interface=4),
                       ds, net)
    cases.append(("ex2 trained", ds, net, trained.params))
    mismatched = []
    for name, ds, net, theta in cases:
        s = ds.train[0]
        pts = sample_interface(s.spec.level_set, 1000, rng_for(9, 0x99), s.spec.aug).points
        plus, minus = _side_predictions(net, theta, s, pts)
        if not np.array_equal(plus, minus):
            mismatched.append(name)
    ok = not mismatched
    verdict(9, "interface continuity", ok,
            f"{len(cases) - len(mismatched)}/{len(cases)} checkpoints bit-identical "
            "across sides at 1000 interface points")
    assert ok, mismatched


# ---------------------------------------------------------------------------
# 10. reproducibility
# ---------------------------------------------------------------------------

REPRO = """\
[problem]
example = ex1
test_set = random

[data]
n_train = 16
n_test = 4
n_interior = 16
n_boundary = 2
n_interface = 1

[net]
width = 16
depth = 3

[train]
iterations = 60
batch_functions = 4
batch_interior = 8
ckpt_every = 20

[eval]
resolution = 201
fields = 0
"""


class _Interrupt(Exception):
    pass


def _same_tree(a: Path, b: Path) -> bool:
    cmp = filecmp.dircmp(a, b)
    return not (cmp.left_only or cmp.right_only
                or filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)[1])


def _pipeline(cfg: str, out: Path) -> None:
    assert main(["gen", "--config", cfg, "--out", str(out)]) == 0
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    assert main(["eval", "--config", cfg, "--out", str(out), "--ckpt",
                 str(out / "train" / "final.ckpt")]) == 0


def test_c10_reproducibility(verdict, tmp_path, monkeypatch):
    src = tmp_path / "repro.ini"
    src.write_text(REPRO)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    _pipeline(str(src), a)
    resolved = str(a / "data" / "config.resolved.ini")
    _pipeline(resolved, b)
    data_same = _same_tree(a / "data", b / "data")
    hist_same = (a / "train" / "history.csv").read_bytes() == (b / "train" / "history.csv").read_bytes()
    errs_same = (a / "eval" / "errors.csv").read_bytes() == (b / "eval" / "errors.csv").read_bytes()

    # kill a third run partway through, after its step-40 checkpoint, then resume from it
    assert main(["gen", "--config", resolved, "--out", str(c)]) == 0
    import xionet.trainer as T
    real = T.write_history

    def dying_write(rows, path):
        real(rows, path)
        if rows and rows[-1].step == 39 and Path(path).parent.name == "train":
            raise _Interrupt

    monkeypatch.setattr(T, "write_history", dying_write)
    with pytest.raises(_Interrupt):
        main(["train", "--config", resolved, "--out", str(c)])
    monkeypatch.setattr(T, "write_history", real)
    assert not (c / "train" / "final.ckpt").exists()
    assert main(["train", "--config", resolved, "--out", str(c), "--ckpt",
                 str(c / "train" / "ckpt_0000040.ckpt")]) == 0
    assert main(["eval", "--config", resolved, "--out", str(c), "--ckpt",
                 str(c / "train" / "final.ckpt")]) == 0
    resume_same = all((a / rel).read_bytes() == (c / rel).read_bytes() for rel in
                      ("train/history.csv", "train/final.ckpt", "eval/errors.csv"))
    steps = [r.step for r in read_history(c / "train" / "history.csv")]
    ok = data_same and hist_same and errs_same and resume_same and steps == list(range(60))
    verdict(10, "reproducibility", ok,
            f"dataset={data_same} history={hist_same} errors.csv={errs_same} "
            f"interrupt/resume={resume_same}")
    assert ok
    assert np.all(np.isfinite(read_errors(a / "eval" / "errors.csv")))
    assert Checkpoint.load(c / "train" / "final.ckpt").step == 60


# ---------------------------------------------------------------------------
# 6-8. desk-scale training runs from the shipped configs
# ---------------------------------------------------------------------------


def _train_shipped(name: str, out: Path):
    """gen + train + eval through the CLI; returns (config, errors, training seconds)."""
    cfg = ExperimentConfig.load(shipped_config(name))
    args = ["--config", name, "--out", str(out)]
    assert main(["gen", *args]) == 0
    t0 = time.perf_counter()
    assert main(["train", *args]) == 0
    seconds = time.perf_counter() - t0
    assert main(["eval", *args, "--ckpt", str(out / "train" / "final.ckpt")]) == 0
    return cfg, read_errors(out / "eval" / "errors.csv"), seconds


@pytest.mark.slow
def test_c6_scaled_example1(verdict, tmp_path):
    lines, ok = [], True
    for mode, name in (("DD", "ex1_dd"), ("PI", "ex1_pi")):
        cfg, errs, secs = _train_shipped(name, tmp_path / name)
        assert (cfg["train.mode"], cfg["data.n_train"], cfg["data.n_test"]) == (mode, 1000, 100)
        assert (cfg["net.width"], cfg["net.depth"], cfg["train.iterations"]) == (64, 4, 10_000)
        assert len(errs) == 100
        ok &= bool(np.mean(errs) <= 5e-2 and secs <= 1800)
        lines.append(f"{mode} mean {np.mean(errs):.4f} in {secs / 60:.1f} min")
    verdict(6, "scaled Example 1", ok, "; ".join(lines) + " (<= 5e-2, <= 30 min)")
    assert ok


@pytest.mark.slow
def test_c7_scaled_example2(verdict, tmp_path):
    cfg, errs, secs = _train_shipped("ex2_pi", tmp_path / "ex2")
    assert (cfg["data.n_train"], cfg["train.iterations"]) == (200, 10_000)
    radii = [s["r0"] for s in F.TEST_SETS["ex2"]]
    ok = len(errs) == 3 and bool(np.all(errs <= 2e-2))
    detail = ", ".join(f"r0={r}: {e:.2e}" for r, e in zip(radii, errs))
    verdict(7, "scaled Example 2", ok, f"{detail} (each <= 2e-2), {secs / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_c8_baseline_separation(verdict, tmp_path):
    base_cfg, base, _ = _train_shipped("ex1_baseline_fixed_gamma", tmp_path / "base")
    xi_cfg, xi, _ = _train_shipped("ex1_baseline_xi", tmp_path / "xi")
    # identical budgets: everything but the network kind agrees
    flat = lambda c: {f"{s}.{k}": v for s, kv in c.values.items() for k, v in kv.items()}
    a, b = flat(base_cfg), flat(xi_cfg)
    differ = {k for k in a.keys() | b.keys() if a.get(k) != b.get(k)}
    assert differ == {"net.kind"}, differ
    ratio = np.mean(xi) / np.mean(base)
    ok = bool(ratio <= 0.2)
    verdict(8, "baseline separation", ok,
            f"XI mean {np.mean(xi):.2e} vs DeepONet {np.mean(base):.2e}, ratio {ratio:.3f} (<= 0.2)")
    assert ok
