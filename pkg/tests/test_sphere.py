"""Sphere datasets: sampling, targets, corruption, noise, CSV round-trips."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rntk_lab.kernel import KernelConfig, rntk_gram
from rntk_lab.sphere import (corrupt_labels, load_csv, make_octant_dataset,
                             make_octant_target, make_rkhs_regression_set,
                             make_rkhs_target, octant_labels, sample_uniform_sphere,
                             save_csv)
from rntk_lab.stats import ks_statistic

from oracles import octant_by_enumeration

CFG = KernelConfig(2, 0.5)


class TestUniformSampling:
    def test_single_point_unit_norm(self):
        ds = sample_uniform_sphere(1, 3, seed=4)
        assert abs(np.linalg.norm(ds.X[0]) - 1.0) < 1e-12

    def test_coordinate_mean_clt_bound(self):
        n = 10_000
        ds = sample_uniform_sphere(n, 3, seed=5)
        # each coordinate has variance 1/3; allow a wide 9-sigma band
        bound = 3.0 * math.sqrt(1.0 / (3 * n)) * 3.0
        assert np.max(np.abs(ds.X.mean(axis=0))) < bound

    def test_deterministic(self):
        a = sample_uniform_sphere(5, 2, seed=77)
        b = sample_uniform_sphere(5, 2, seed=77)
        assert np.array_equal(a.X, b.X)
        c = sample_uniform_sphere(5, 2, seed=78)
        assert not np.array_equal(a.X, c.X)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            sample_uniform_sphere(0, 3, seed=1)
        with pytest.raises(ValueError):
            sample_uniform_sphere(3, 1, seed=1)

    def test_marginal_uniformity_ks(self):
        # on S^2 each coordinate is exactly uniform on [-1, 1]
        ds = sample_uniform_sphere(100_000, 3, seed=6)
        for j in range(3):
            stat = ks_statistic(ds.X[:, j], lambda x: (x + 1.0) / 2.0)
            assert stat < 0.01


class TestOctantTarget:
    def test_examples(self):
        assert make_octant_target(np.array([1.0, 0.0, 0.0])) == 7
        v = np.array([-0.5, -0.5, -0.5]) / np.linalg.norm([-0.5, -0.5, -0.5])
        assert make_octant_target(v) == 0
        w = np.array([-0.1, 0.9, -0.3]) / np.linalg.norm([-0.1, 0.9, -0.3])
        assert make_octant_target(w) == 2

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((200, 3))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        for x in X:
            assert make_octant_target(x) == octant_by_enumeration(x)
        # boundary points with exact zeros
        for x in ([0.0, 0.0, 1.0], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0]):
            assert make_octant_target(np.array(x)) == octant_by_enumeration(x)

    def test_all_octants_hit_and_label_range(self):
        ds = make_octant_dataset(2000, seed=9)
        assert set(np.unique(ds.y)) == set(range(8))
        assert np.array_equal(octant_labels(ds.X), ds.y)

    def test_rejects_wrong_dimension(self):
        with pytest.raises(ValueError):
            make_octant_target(np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            octant_labels(np.zeros((4, 4)))


class TestCorruption:
    def test_p_zero_unchanged(self):
        ds = make_octant_dataset(500, seed=10)
        out = corrupt_labels(ds, 0.0, seed=11)
        assert np.array_equal(out.y, ds.clean_y)

    def test_p_one_uniform_agreement_rate(self):
        ds = make_octant_dataset(10_000, seed=12)
        out = corrupt_labels(ds, 1.0, seed=13)
        frac_same = float(np.mean(out.y == out.clean_y))
        assert abs(frac_same - 0.125) <= 0.02

    def test_deterministic(self):
        ds = make_octant_dataset(300, seed=14)
        a = corrupt_labels(ds, 0.4, seed=15)
        b = corrupt_labels(ds, 0.4, seed=15)
        assert np.array_equal(a.y, b.y)

    def test_changed_fraction_tracks_p(self):
        ds = make_octant_dataset(20_000, seed=16)
        for p in (0.1, 0.2, 0.3, 0.4, 0.5, 0.6):
            out = corrupt_labels(ds, p, seed=17)
            changed = float(np.mean(out.y != out.clean_y))
            expect = p * 7.0 / 8.0
            sigma = math.sqrt(expect * (1 - expect) / ds.n)
            assert abs(changed - expect) <= 3 * sigma

    def test_invalid_p(self):
        ds = make_octant_dataset(10, seed=18)
        with pytest.raises(ValueError):
            corrupt_labels(ds, 1.5, seed=1)
        with pytest.raises(ValueError):
            corrupt_labels(ds, -0.1, seed=1)

    def test_requires_classification(self):
        ds = sample_uniform_sphere(10, 3, seed=19)
        with pytest.raises(ValueError):
            corrupt_labels(ds, 0.5, seed=1)


class TestRKHSRegression:
    def test_zero_noise_exact(self):
        ds, target = make_rkhs_regression_set(50, 3, CFG, 5, 0.0, seed=20)
        assert np.array_equal(ds.y, ds.clean_y)
        np.testing.assert_allclose(ds.clean_y, target(ds.X), rtol=0, atol=0)

    def test_single_center_norm_proxy_is_one(self):
        target = make_rkhs_target(3, CFG, 1, seed=21)
        G = rntk_gram(target.centers, CFG)
        proxy = math.sqrt(float(target.weights @ G @ target.weights))
        assert abs(proxy - 1.0) < 1e-10

    def test_norm_proxy_is_one_many_centers(self):
        target = make_rkhs_target(3, CFG, 12, seed=22)
        G = rntk_gram(target.centers, CFG)
        proxy = math.sqrt(float(target.weights @ G @ target.weights))
        assert abs(proxy - 1.0) < 1e-10

    def test_noise_variance_in_interval(self):
        # chi-square band for sigma^2 = 0.25 at n = 200
        ds, _ = make_rkhs_regression_set(200, 3, CFG, 8, 0.5, seed=23)
        var = float(np.var(ds.y - ds.clean_y, ddof=1))
        assert 0.15 <= var <= 0.40

    def test_deterministic(self):
        a, _ = make_rkhs_regression_set(30, 3, CFG, 4, 0.3, seed=24)
        b, _ = make_rkhs_regression_set(30, 3, CFG, 4, 0.3, seed=24)
        assert np.array_equal(a.y, b.y) and np.array_equal(a.X, b.X)


class TestCSVRoundtrip:
    def test_regression_roundtrip_exact(self, tmp_path):
        ds, _ = make_rkhs_regression_set(25, 3, CFG, 4, 0.3, seed=25)
        path = tmp_path / "ds.csv"
        save_csv(ds, path)
        back = load_csv(path)
        assert np.array_equal(back.X, ds.X)
        assert np.array_equal(back.y, ds.y)
        assert np.array_equal(back.clean_y, ds.clean_y)

    def test_classification_roundtrip(self, tmp_path):
        ds = corrupt_labels(make_octant_dataset(40, seed=26), 0.3, seed=27)
        path = tmp_path / "cls.csv"
        save_csv(ds, path)
        back = load_csv(path, classes=8)
        assert np.array_equal(back.y, ds.y)
        assert back.y.dtype == np.int64

    def test_header_format(self, tmp_path):
        ds = sample_uniform_sphere(3, 4, seed=28)
        path = tmp_path / "h.csv"
        save_csv(ds, path)
        first = path.read_text().splitlines()[0]
        assert first == "x0,x1,x2,x3,y,clean_y"

    def test_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError):
            load_csv(path)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32), n=st.integers(min_value=1, max_value=40),
       d=st.integers(min_value=2, max_value=6))
def test_sampling_pure_function_of_seed(seed, n, d):
    a = sample_uniform_sphere(n, d, seed=seed)
    b = sample_uniform_sphere(n, d, seed=seed)
    assert np.array_equal(a.X, b.X)
    assert np.all(np.abs(np.linalg.norm(a.X, axis=1) - 1.0) < 1e-12)
