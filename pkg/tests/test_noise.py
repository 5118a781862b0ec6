import numpy as np
import pytest

from retarded_ou.noise import (
    QWiener,
    brownian_bridge_refine,
    covariance_check,
    increment_batch,
    noise_to_csv,
    sample_noise,
)


def grid(n, h=0.01):
    return np.arange(n + 1) * h


class TestQWiener:
    def test_trace(self):
        q = QWiener([1.0, 0.5, 0.25])
        assert q.trace == pytest.approx(1.75)
        assert q.dim == 3

    def test_validation(self):
        with pytest.raises(ValueError):
            QWiener([-0.1])
        with pytest.raises(ValueError):
            QWiener([np.inf])


class TestSampling:
    def test_zero_spectrum_gives_zero_path(self):
        q = QWiener([0.0, 0.0], seed=1)
        p = sample_noise(q, grid(50), 0)
        assert not p.cumulative.any()

    def test_determinism(self):
        q = QWiener([1.0, 2.0], seed=123)
        a = sample_noise(q, grid(100), 5)
        b = sample_noise(q, grid(100), 5)
        assert np.array_equal(a.cumulative, b.cumulative)
        assert np.array_equal(a.increments, b.increments)

    def test_paths_differ(self):
        q = QWiener([1.0], seed=123)
        a = sample_noise(q, grid(100), 0)
        b = sample_noise(q, grid(100), 1)
        assert not np.array_equal(a.increments, b.increments)

    def test_increment_variance_band(self):
        # single mode, h = 0.01: sample variance of 1e5 increments within the
        # three-sigma chi-square band around 0.01
        q = QWiener([1.0], seed=4)
        p = sample_noise(q, grid(100_000), 0)
        v = p.increments.var()
        assert 0.01 * 0.985 <= v <= 0.01 * 1.015

    def test_cumulative_consistency(self):
        q = QWiener([1.0, 0.5], seed=9)
        p = sample_noise(q, grid(64), 3)
        assert not p.cumulative[0].any()
        assert np.array_equal(np.diff(p.cumulative, axis=0), p.increments)

    def test_nonuniform_grid_rejected(self):
        q = QWiener([1.0], seed=2)
        with pytest.raises(ValueError):
            sample_noise(q, np.array([0.0, 0.1, 0.3]), 0)

    def test_batch_matches_single(self):
        q = QWiener([1.0, 0.25], seed=11)
        batch = increment_batch(q, 0.01, 40, [3, 7])
        for col, idx in enumerate([3, 7]):
            single = sample_noise(q, grid(40), idx)
            assert np.array_equal(batch[:, :, col], single.increments)


class TestCovariance:
    def test_matches_theory(self):
        q = QWiener([1.0, 0.5, 0.0], seed=99)
        paths = [sample_noise(q, grid(100), i) for i in range(2000)]
        rep = covariance_check(q, paths, 0.5, 1.0)
        assert rep.passed
        assert rep.max_standardized_deviation < 4.0

    def test_time_zero_exact(self):
        q = QWiener([1.0], seed=3)
        paths = [sample_noise(q, grid(20), i) for i in range(1000)]
        rep = covariance_check(q, paths, 0.0, 0.1)
        assert rep.passed

    def test_small_ensemble_rejected(self):
        q = QWiener([1.0], seed=3)
        paths = [sample_noise(q, grid(10), i) for i in range(10)]
        with pytest.raises(ValueError):
            covariance_check(q, paths, 0.05, 0.1)

    def test_off_grid_time_rejected(self):
        q = QWiener([1.0], seed=3)
        paths = [sample_noise(q, grid(10), i) for i in range(1000)]
        with pytest.raises(ValueError):
            covariance_check(q, paths, 0.005, 0.1)

    def test_lag_one_autocorrelation(self):
        q = QWiener([1.0, 0.5], seed=21)
        n_steps, n_paths = 50, 400
        inc = increment_batch(q, 0.01, n_steps, range(n_paths))
        for mode in range(2):
            x = inc[:, mode, :]
            num = np.mean(x[1:] * x[:-1])
            den = np.mean(x**2)
            assert abs(num / den) < 4.0 / np.sqrt((n_steps - 1) * n_paths)

    def test_scaling_doubles_covariance(self):
        seed = 31
        qa = QWiener([1.0, 0.5], seed=seed)
        qb = QWiener([2.0, 1.0], seed=seed)
        pa = [sample_noise(qa, grid(50), i) for i in range(1200)]
        pb = [sample_noise(qb, grid(50), i) for i in range(1200)]
        sa = np.stack([p.cumulative[-1] for p in pa])
        sb = np.stack([p.cumulative[-1] for p in pb])
        ca = sa.T @ sa / len(sa)
        cb = sb.T @ sb / len(sb)
        assert np.allclose(cb, 2.0 * ca, rtol=1e-12)


class TestBridgeRefinement:
    def test_coarse_nodes_fixed(self):
        q = QWiener([1.0, 0.5], seed=8)
        p = sample_noise(q, grid(32), 2)
        fine = brownian_bridge_refine(p, q)
        assert fine.n_steps == 64
        assert np.array_equal(fine.cumulative[0::2], p.cumulative)
        assert fine.h == pytest.approx(p.h / 2.0)

    def test_deterministic_and_level_dependent(self):
        q = QWiener([1.0], seed=8)
        p = sample_noise(q, grid(16), 0)
        f1 = brownian_bridge_refine(p, q)
        f2 = brownian_bridge_refine(p, q)
        assert np.array_equal(f1.cumulative, f2.cumulative)
        f3 = brownian_bridge_refine(f1, q)
        assert f3.n_steps == 64

    def test_midpoint_variance(self):
        # conditional midpoint variance is h lambda / 4
        q = QWiener([1.0], seed=12)
        devs = []
        for i in range(4000):
            p = sample_noise(q, grid(2, h=0.5), i)
            fine = brownian_bridge_refine(p, q)
            devs.append(fine.cumulative[1, 0] - 0.5 * (p.cumulative[0, 0] + p.cumulative[1, 0]))
        v = np.var(devs)
        assert v == pytest.approx(0.5 / 4.0, rel=0.1)


class TestExport:
    def test_csv_layout(self, tmp_path):
        q = QWiener([1.0, 0.5], seed=2)
        paths = [sample_noise(q, grid(3), i) for i in range(2)]
        out = tmp_path / "noise.csv"
        noise_to_csv(paths, out)
        lines = out.read_text().splitlines()
        assert lines[0] == "path,t,mode,value"
        assert len(lines) == 1 + 2 * 4 * 2
        first = lines[1].split(",")
        assert first[0] == "0" and first[2] == "0"
        assert float(first[3]) == paths[0].cumulative[0, 0]
