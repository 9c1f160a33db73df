import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xionet import data as D
from xionet.opnet import OperatorNet
from xionet.trainer import (HISTORY_HEADER, AdamState, Checkpoint, CheckpointFormatError,
                            DatasetModeError, NonFiniteGradientError, TrainConfig, adam_step,
                            clip_gradient, make_batch, predict, read_history, train,
                            write_history)


@pytest.fixture(scope="module")
def tiny():
    return D.generate(D.DataConfig("ex1", n_train=12, n_test=2, n_interior=16, n_boundary=2,
                                   n_interface=1, n_data=8, seed=3))


@pytest.fixture(scope="module")
def tiny_no_targets():
    return D.generate(D.DataConfig("ex1", n_train=4, n_test=1, n_interior=8, n_boundary=2,
                                   n_interface=1, seed=3))


def small_net(ds, act="tanh"):
    return OperatorNet.xi(ds.k, ds.d, 12, 3, act)


PI = dict(mode="PI", iterations=30, batch_functions=4, batch_interior=8, decay_every=10)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(iterations=0), dict(lr=0.0), dict(decay=0.0),
                                    dict(decay=1.5), dict(mode="XX")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_schedule(self):
        c = TrainConfig(lr=1e-3, decay=0.95, decay_every=1000)
        assert c.lr_at(0) == 1e-3
        assert c.lr_at(999) == 1e-3
        assert c.lr_at(1000) == 1e-3 * 0.95
        assert c.lr_at(2500) == pytest.approx(1e-3 * 0.95 ** 2, rel=1e-15)

    def test_defaults(self):
        c = TrainConfig()
        assert (c.iterations, c.lr, c.decay, c.decay_every) == (40000, 1e-3, 0.95, 1000)
        assert (c.beta1, c.beta2, c.eps, c.clip_norm) == (0.9, 0.999, 1e-8, 0.0)


class TestAdam:
    def test_zero_gradient(self):
        s = AdamState.zeros(3)
        p = np.array([1.0, -2.0, 0.5])
        s2, p2 = adam_step(s, p, np.zeros(3), 1e-3)
        assert np.array_equal(p2, p)
        assert not np.any(s2.m) and not np.any(s2.v) and s2.t == 1

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 1e3), st.booleans(), st.floats(1e-4, 1.0))
    def test_first_step_is_signed_lr(self, mag, neg, lr):
        g = -mag if neg else mag
        _, p = adam_step(AdamState.zeros(1, eps=0.0), np.zeros(1), np.array([g]), lr)
        assert p[0] == pytest.approx(-lr * np.sign(g), rel=1e-12)

    def test_deterministic(self):
        g = np.array([0.3, -1.0])
        a = adam_step(AdamState.zeros(2), np.ones(2), g, 0.01)
        b = adam_step(AdamState.zeros(2), np.ones(2), g, 0.01)
        assert np.array_equal(a[1], b[1]) and np.array_equal(a[0].v, b[0].v)

    def test_two_step_recurrence(self):
        s, p = AdamState.zeros(1), np.zeros(1)
        for g in (1.0, 3.0):
            s, p = adam_step(s, p, np.array([g]), 0.1)
        m = 0.9 * 0.1 * 1.0 + 0.1 * 3.0
        v = 0.999 * 0.001 * 1.0 + 0.001 * 9.0
        step2 = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
        assert p[0] == pytest.approx(-0.1 * 1.0 / (1.0 + 1e-8) - step2, rel=1e-12)

    def test_non_finite(self):
        with pytest.raises(NonFiniteGradientError) as info:
            adam_step(AdamState.zeros(3), np.zeros(3), np.array([0.0, np.nan, 1.0]), 0.1)
        assert info.value.index == 1

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(AdamState.zeros(3), np.zeros(2), np.zeros(2), 0.1)


class TestClip:
    def test_identity_below_threshold(self):
        g = np.array([0.3, 0.4])
        assert clip_gradient(g, 1.0) is g
        assert clip_gradient(g, 0.0) is g

    def test_rescales_above(self):
        out = clip_gradient(np.array([3.0, 4.0]), 1.0)
        np.testing.assert_allclose(out, [0.6, 0.8], rtol=1e-15)


class TestCheckpoint:
    def make(self, adam=True):
        net = OperatorNet.xi(5, 2, 6, 3)
        rng = np.random.default_rng(0)
        st_ = AdamState(rng.normal(size=net.n_params), rng.random(net.n_params), 17) if adam else None
        return Checkpoint(net, "PI", rng.normal(size=net.n_params), 17, st_,
                          {"last_loss": 0.1 + 1e-17, "min_loss": 1 / 3})

    @pytest.mark.parametrize("adam", [True, False])
    def test_byte_round_trip(self, adam, tmp_path):
        raw = self.make(adam).to_bytes()
        again = Checkpoint.from_bytes(raw)
        assert again.to_bytes() == raw
        path = again.save(tmp_path / "a.ckpt")
        assert Checkpoint.load(path).to_bytes() == raw

    def test_header(self):
        lines = self.make().to_bytes().split(b"\n")
        assert lines[0] == b"xionet-ckpt v1"
        assert lines[1].startswith(b"mode=PI ")

    @pytest.mark.parametrize("damage", [lambda r: b"junk" + r[4:], lambda r: r[:-8],
                                        lambda r: r[:10]])
    def test_corrupt(self, damage):
        with pytest.raises(CheckpointFormatError):
            Checkpoint.from_bytes(damage(self.make().to_bytes()))


class TestHistory:
    def test_round_trip(self, tmp_path):
        from xionet.trainer import HistoryRow
        rows = [HistoryRow(0, 1e-3, 1 / 3, 0.1, 0.2, 2 / 7), HistoryRow(1, 1e-3, 0.5, 0.5, 0, 0)]
        write_history(rows, tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text().splitlines()[0] == HISTORY_HEADER
        assert read_history(tmp_path / "h.csv") == rows


class TestTraining:
    def test_dd_requires_targets(self, tiny_no_targets):
        with pytest.raises(DatasetModeError):
            train(TrainConfig(mode="DD", iterations=1), tiny_no_targets,
                  small_net(tiny_no_targets, "relu"))

    def test_pi_requires_tanh(self, tiny):
        with pytest.raises(DatasetModeError):
            train(TrainConfig(**PI), tiny, small_net(tiny, "relu"))

    def test_architecture_mismatch(self, tiny):
        with pytest.raises(DatasetModeError):
            train(TrainConfig(**PI), tiny, OperatorNet.xi(tiny.k + 1, 1, 8, 3))

    def test_batches_keyed_by_step(self, tiny):
        cfg = TrainConfig(**PI)
        a = make_batch(cfg, tiny, small_net(tiny), 7, tiny.physics_points())
        b = make_batch(cfg, tiny, small_net(tiny), 7, tiny.physics_points())
        assert np.array_equal(a.functions, b.functions)
        assert np.array_equal(a.points.X_int, b.points.X_int)
        assert a.points.counts == (4 * 8, 4 * 2, 4 * 1)

    @pytest.mark.parametrize("mode", ["PI", "DD"])
    def test_serial_runs_bit_identical(self, tiny, mode):
        cfg = TrainConfig(**{**PI, "mode": mode, "batch_data": 4})
        net = small_net(tiny, "tanh" if mode == "PI" else "relu")
        c1, h1 = train(cfg, tiny, net)
        c2, h2 = train(cfg, tiny, net)
        assert h1 == h2
        assert c1.to_bytes() == c2.to_bytes()

    @pytest.mark.parametrize("mode", ["PI", "DD"])
    def test_resume_matches_uninterrupted(self, tiny, mode, tmp_path):
        cfg = TrainConfig(**{**PI, "mode": mode, "batch_data": 4})
        net = small_net(tiny, "tanh" if mode == "PI" else "relu")
        full, hist = train(cfg, tiny, net)
        part, h1 = train(cfg, tiny, net, stop_at=13)
        part = Checkpoint.load(part.save(tmp_path / "mid.ckpt"))
        rest, h2 = train(cfg, tiny, net, resume=part)
        assert h1 + h2 == hist
        assert rest.to_bytes() == full.to_bytes()

    def test_checkpoint_cadence(self, tiny, tmp_path):
        cfg = TrainConfig(**{**PI, "iterations": 10, "ckpt_every": 4})
        train(cfg, tiny, small_net(tiny), out_dir=tmp_path)
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["ckpt_0000004.ckpt", "ckpt_0000008.ckpt", "final.ckpt", "history.csv"]
        # the history written alongside the last periodic checkpoint stops at that step
        assert [r.step for r in read_history(tmp_path / "history.csv")] == list(range(8))

    def test_history_prefix_at_checkpoints(self, tiny, tmp_path):
        from xionet.trainer import HistoryRow
        cfg = TrainConfig(**{**PI, "iterations": 4, "ckpt_every": 2})
        old = [HistoryRow(-1, 1e-3, 9.0, 9.0, 0.0, 0.0)]
        _, hist = train(cfg, tiny, small_net(tiny), out_dir=tmp_path, earlier=old)
        assert read_history(tmp_path / "history.csv") == old + hist

    def test_workers_agree_closely(self, tiny):
        cfg = TrainConfig(**{**PI, "iterations": 3})
        _, h1 = train(cfg, tiny, small_net(tiny))
        _, h2 = train(TrainConfig(**{**PI, "iterations": 3, "workers": 2}), tiny, small_net(tiny))
        np.testing.assert_allclose([r.total for r in h1], [r.total for r in h2], rtol=1e-10)

    def test_smoke_loss_decreases(self):
        ds = D.generate(D.DataConfig("ex1", n_train=50, n_test=1, n_interior=32, n_boundary=2,
                                     n_interface=1, seed=11))
        cfg = TrainConfig(mode="PI", iterations=500, batch_functions=10)
        ckpt, hist = train(cfg, ds, OperatorNet.xi(ds.k, 1, 32, 4))
        assert np.mean([r.total for r in hist[-20:]]) < np.mean([r.total for r in hist[:20]])
        assert ckpt.step == 500

    def test_predict_shape(self, tiny):
        ckpt, _ = train(TrainConfig(**{**PI, "iterations": 2}), tiny, small_net(tiny))
        out = predict(ckpt.net, ckpt.params, tiny, "test", 0, np.linspace(0, 1, 5)[:, None])
        assert out.shape == (5,) and np.all(np.isfinite(out))
