import filecmp

import numpy as np
import pytest

from xionet import data as D
from xionet import fieldgen as F
from xionet.geom import Region

SMALL = dict(n_train=3, n_test=2, n_interior=6, n_boundary=4, n_interface=3, seed=5)


def tree_equal(a, b):
    cmp = filecmp.dircmp(a, b)
    return not (cmp.left_only or cmp.right_only or
                filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)[1])


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(example="ex9"), dict(example="ex1", n_train=0),
                                    dict(example="ex1", homogenize="maybe"),
                                    dict(example="ex1", test_set="some")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            D.DataConfig(**kw)

    def test_meta_round_trip(self):
        cfg = D.DataConfig("ex1", fixed=(("p", 0.5),), n_data=4, sensor_count=50)
        assert D.DataConfig.from_meta(cfg.to_meta()) == cfg

    def test_sensor_defaults(self):
        assert D.DataConfig("ex3d").sensors == 136
        assert D.DataConfig("ex1", sensor_count=7).sensors == 7


class TestGenerate:
    @pytest.mark.parametrize("example", ["ex1", "ex2", "ex3", "ex6d"])
    def test_shapes(self, example):
        ds = D.generate(D.DataConfig(example, **SMALL))
        assert len(ds.train) == 3
        assert ds.k == F.SENSOR_COUNTS[example]
        F_, Phi = ds.branch_inputs("train")
        assert F_.shape == Phi.shape == (3, ds.k)
        c = ds.train[0].colloc
        assert (len(c.interior), len(c.boundary), len(c.interface.points)) == (6, 4, 3)

    def test_curated_test_sets(self):
        ds = D.generate(D.DataConfig("ex3", **SMALL))
        assert [s.params["r2"] for s in ds.test] == [7.0, 9.0, 11.0]
        assert all(s.spec.extension is not None for s in ds.test)

    def test_fixed_parameter(self):
        ds = D.generate(D.DataConfig("ex1", fixed=(("p", 0.5),), **SMALL))
        assert all(s.params["p"] == 0.5 for s in ds.train + ds.test)

    def test_targets_are_reference_values(self):
        ds = D.generate(D.DataConfig("ex2", n_data=5, fixed=(("p", 1.0),), **SMALL))
        s = ds.train[1]
        u = s.spec.exact.value_by_region(s.data_x, s.spec.regions(s.data_x))
        assert np.array_equal(s.data_u, u)

    def test_homogenized_targets(self):
        ds = D.generate(D.DataConfig("ex3", n_data=5, fixed=(("p1_plus", 80.0),
                                     ("p2_plus", 1600.0), ("p1_minus", 80.0),
                                     ("p2_minus", 1600.0)), **SMALL))
        s = ds.train[0]
        # the shifted target is the smooth w = 1/(1 + 10 r^2) everywhere
        r2 = np.sum(s.data_x ** 2, axis=1)
        np.testing.assert_allclose(s.data_u, 1 / (1 + 10 * r2), atol=1e-15)

    def test_phi_sensors_nonnegative(self):
        ds = D.generate(D.DataConfig("ex2", **SMALL))
        assert np.all(ds.branch_inputs("test")[1] >= 0)

    def test_trunk_inputs(self):
        spec = D.generate(D.DataConfig("ex1", fixed=(("p", 0.5),), **SMALL)).train[0].spec
        X = D.trunk_inputs(spec, np.array([[0.2], [0.9]]))
        np.testing.assert_allclose(X, [[0.2, 0.3], [0.9, 0.4]], atol=1e-15)


class TestStorage:
    @pytest.mark.parametrize("example", ["ex1", "ex2", "ex3"])
    def test_byte_identical_round_trip(self, example, tmp_path):
        n_data = 4 if example == "ex1" else 0  # random 2D draws have no reference
        ds = D.generate(D.DataConfig(example, n_data=n_data, **SMALL))
        D.save(ds, tmp_path / "a")
        again = D.load(tmp_path / "a")
        D.save(again, tmp_path / "b")
        assert tree_equal(tmp_path / "a", tmp_path / "b")
        assert again.config == ds.config
        for s, t in zip(ds.train, again.train):
            assert np.array_equal(s.colloc.interior, t.colloc.interior)
            assert (s.data_u is None and t.data_u is None) or np.array_equal(s.data_u, t.data_u)
            assert np.array_equal(s.f_sensors, t.f_sensors)

    def test_regeneration_is_byte_identical(self, tmp_path):
        cfg = D.DataConfig("ex1", n_data=4, **SMALL)
        D.save(D.generate(cfg), tmp_path / "a")
        D.save(D.generate(cfg), tmp_path / "b")
        assert tree_equal(tmp_path / "a", tmp_path / "b")

    def test_not_a_dataset(self, tmp_path):
        with pytest.raises(D.DatasetFormatError):
            D.load(tmp_path)

    def test_wrong_format(self, tmp_path):
        D.save(D.generate(D.DataConfig("ex1", **SMALL)), tmp_path)
        meta = (tmp_path / "meta").read_text().replace("xionet-data v1", "xionet-data v0")
        (tmp_path / "meta").write_text(meta)
        with pytest.raises(D.DatasetFormatError):
            D.load(tmp_path)

    def test_colloc_labels(self, tmp_path):
        D.save(D.generate(D.DataConfig("ex2", **SMALL)), tmp_path)
        lines = (tmp_path / "colloc.csv").read_text().splitlines()
        assert lines[0] == "sample,class,region,x1,x2,n1,n2"
        ds = D.load(tmp_path)
        interior = [ln.split(",") for ln in lines[1:] if ",interior," in ln and ln.startswith("0,")]
        assert [r[2] for r in interior] == [r.value for r in ds.train[0].colloc.interior_region]
        assert not np.any(ds.train[0].colloc.interior_region == Region.ON_INTERFACE)
        assert all(ln.split(",")[2] == "interface" for ln in lines[1:] if ",interface," in ln)

    def test_meta_records_ranges(self, tmp_path):
        D.save(D.generate(D.DataConfig("ex1", **SMALL)), tmp_path)
        meta = D.read_meta(tmp_path / "meta")
        assert meta["range.p"] == "0.40000000000000002:0.69999999999999996"
        assert meta["sensors"] == "100" and meta["grf_lengths"] == "0.20000000000000001,0.10000000000000001"


def test_missing_reference_is_named():
    with pytest.raises(F.NoExactSolutionError):
        D.generate(D.DataConfig("ex2", n_data=2, fixed=(("p", 1.5),), **SMALL))
