import math

import numpy as np
import pytest

from retarded_ou.convolution import (
    AdaptedDiffusion,
    ConvolutionConfig,
    ConvolutionSimulator,
    PiecewiseDiffusion,
    convolve_direct,
    convolve_factorized,
    factorization_identity_value,
    mild_solution,
    trace_condition,
    trajectories_to_csv,
)
from retarded_ou.delay import DelayOperator, Segment, point_delay
from retarded_ou.green import green_method_of_steps
from retarded_ou.noise import QWiener, brownian_bridge_refine, increment_batch, sample_noise
from retarded_ou.spectral import SpectralModel


def zero_delay_op(r, m_nodes, dim):
    return DelayOperator(r, m_nodes, [(r, np.zeros((dim, dim)))], dim=dim)


def flat_table(m_nodes, n_steps, dim=1):
    # A = 0, F = 0: the table is constantly the identity
    model = SpectralModel(np.zeros(dim))
    op = zero_delay_op(1.0, m_nodes, dim)
    T = n_steps / m_nodes
    return green_method_of_steps(model, op, T, m_nodes)


class TestConvolutionConfig:
    def test_regularity_window(self):
        ConvolutionConfig(alpha=0.3, p=4.0, purpose="regularity")
        with pytest.raises(ValueError):
            ConvolutionConfig(alpha=0.2, p=4.0, purpose="regularity")
        with pytest.raises(ValueError):
            ConvolutionConfig(alpha=0.55, p=4.0, purpose="regularity")

    def test_moment_window(self):
        ConvolutionConfig(alpha=0.15, p=6.0, purpose="bdg")
        with pytest.raises(ValueError):
            ConvolutionConfig(alpha=0.3, p=4.0, purpose="bdg")

    def test_defaults(self):
        assert ConvolutionConfig.for_regularity().alpha == 0.3
        assert ConvolutionConfig.for_moment_bound().alpha == 0.15


class TestDirectConvolution:
    def test_identity_kernel_gives_cumulative_noise(self):
        g = flat_table(16, 32)
        q = QWiener([1.0], seed=5)
        path = sample_noise(q, np.arange(33) * g.h, 0)
        out = convolve_direct(g, np.eye(1), path)
        assert np.allclose(out, path.cumulative, rtol=1e-12, atol=1e-15)

    def test_zero_diffusion(self):
        g = flat_table(16, 32)
        q = QWiener([1.0], seed=5)
        path = sample_noise(q, np.arange(33) * g.h, 0)
        out = convolve_direct(g, np.zeros((1, 1)), path)
        assert not out.any()

    def test_starts_at_zero(self):
        g = flat_table(16, 16)
        q = QWiener([2.0], seed=6)
        path = sample_noise(q, np.arange(17) * g.h, 1)
        assert not convolve_direct(g, np.eye(1), path)[0].any()

    def test_linear_in_diffusion(self):
        model = SpectralModel([-1.0, -2.0])
        op = point_delay(0.5, 16, 0.4 * np.eye(2))
        g = green_method_of_steps(model, op, 1.0, 16)
        q = QWiener([1.0, 0.5], seed=7)
        path = sample_noise(q, np.arange(33) * g.h, 0)
        rng = np.random.default_rng(8)
        b1, b2 = rng.standard_normal((2, 2, 2))
        combo = convolve_direct(g, b1 + b2, path)
        split = convolve_direct(g, b1, path) + convolve_direct(g, b2, path)
        assert np.allclose(combo, split, rtol=1e-12, atol=1e-14)

    def test_ito_isometry_scalar(self):
        # E ||W(1)||^2 close to (1 - e^{-2}) / 2 at Monte Carlo accuracy
        model = SpectralModel([-1.0])
        h, n = 1.0 / 256, 256
        q = QWiener([1.0], seed=3)
        sim = ConvolutionSimulator(model, None, np.eye(1), h, n)
        finals = []
        for start in range(0, 4000, 2000):
            dw = increment_batch(q, h, n, range(start, start + 2000))
            finals.append(np.sum(sim.run(dw)[-1] ** 2, axis=0))
        finals = np.concatenate(finals)
        target = (1.0 - math.exp(-2.0)) / 2.0
        se = finals.std(ddof=1) / math.sqrt(finals.size)
        assert abs(finals.mean() - target) < 4.0 * se

    def test_grid_mismatch(self):
        g = flat_table(16, 16)
        q = QWiener([1.0], seed=2)
        path = sample_noise(q, np.arange(17) * 0.5, 0)
        with pytest.raises(ValueError):
            convolve_direct(g, np.eye(1), path)


class TestSimulatorRecursion:
    def test_matches_direct_sum(self):
        model = SpectralModel([-1.0, -2.5, -4.0])
        b1 = 0.3 * (np.eye(3) + 0.5 * np.eye(3, k=1))
        op = DelayOperator(0.5, 32, [(0.5, b1)], kernel=lambda t: 1.0 + t, b0=0.2 * np.eye(3))
        h = op.h
        n = 64
        g = green_method_of_steps(model, op, n * h, 32)
        b = np.array([[1.0, 0.2, 0.0], [0.0, 0.8, 0.1], [0.0, 0.0, 1.2]])
        q = QWiener([1.0, 0.5, 0.25], seed=42)
        path = sample_noise(q, np.arange(n + 1) * h, 7)
        direct = convolve_direct(g, b, path)
        sim = ConvolutionSimulator(model, op, b, h, n)
        rec = sim.run(path.increments[:, :, None])[:, :, 0]
        assert np.allclose(rec, direct, atol=1e-10)

    def test_piecewise_diffusion_matches_manual(self):
        model = SpectralModel([0.0])
        h, n = 0.125, 8
        q = QWiener([1.0], seed=17)
        dw = increment_batch(q, h, n, [0])
        mats = [np.eye(1), 3.0 * np.eye(1)]
        sim = ConvolutionSimulator(model, None, np.eye(1), h, n)
        out = sim.run(dw, diffusion=PiecewiseDiffusion(mats, 4))[:, 0, 0]
        manual = np.concatenate([[0.0], np.cumsum(np.where(np.arange(n) < 4, 1.0, 3.0) * dw[:, 0, 0])])
        assert np.allclose(out, manual, rtol=1e-12)

    def test_adapted_scale_recorded(self):
        model = SpectralModel([0.0])
        h, n = 0.25, 4
        q = QWiener([1.0], seed=18)
        dw = increment_batch(q, h, n, [0, 1])
        ad = AdaptedDiffusion(np.eye(1), lambda t, w: 2.0 + 0.0 * w[0], block_steps=1)
        sim = ConvolutionSimulator(model, None, np.eye(1), h, n)
        out = sim.run(dw, diffusion=ad)
        assert ad.history.shape == (n, 2)
        assert np.allclose(ad.history, 2.0)
        assert np.allclose(out[-1], 2.0 * np.sum(dw, axis=0), rtol=1e-12)


class TestFactorization:
    def test_identity_values(self):
        for alpha in (0.15, 0.25, 0.3, 0.45):
            target = math.pi / math.sin(math.pi * alpha)
            assert factorization_identity_value(alpha) == pytest.approx(target, abs=1e-6)

    def test_identity_shift_invariance(self):
        v = factorization_identity_value(0.3, u=0.25, t=0.75)
        assert v == pytest.approx(math.pi / math.sin(0.3 * math.pi), abs=1e-6)

    def test_quarter_value(self):
        assert factorization_identity_value(0.25) == pytest.approx(math.pi * math.sqrt(2.0), abs=1e-6)
        assert factorization_identity_value(0.25) == pytest.approx(4.44288, abs=1e-5)

    def test_half_gives_pi(self):
        assert factorization_identity_value(0.5) == pytest.approx(math.pi, abs=1e-6)

    def test_no_delay_reduction(self):
        # I1 vanishes and the classical factorization approximates the direct sum
        model = SpectralModel([-1.0])
        m_nodes = 128
        op = zero_delay_op(1.0, m_nodes, 1)
        g = green_method_of_steps(model, op, 1.0, m_nodes)
        q = QWiener([1.0], seed=11)
        path = sample_noise(q, np.arange(m_nodes + 1) * g.h, 0)
        cfg = ConvolutionConfig(alpha=0.3, p=4.0, purpose="regularity")
        direct = convolve_direct(g, np.eye(1), path)
        fact = convolve_factorized(g, None, np.eye(1), path, cfg)
        tol = 5.0 * g.h ** (0.5 - cfg.alpha)
        assert abs(fact.values[-1, 0] - direct[-1, 0]) < tol
        assert fact.values[0, 0] == 0.0 and direct[0, 0] == 0.0

    def test_same_noise_deviation_shrinks(self):
        model = SpectralModel([-1.0])
        q = QWiener([1.0], seed=19)
        cfg = ConvolutionConfig(alpha=0.3, p=4.0, purpose=None)
        devs_lvl = np.zeros(2)
        for idx in range(8):
            path = sample_noise(q, np.arange(33) / 32.0, idx)
            for lvl, m_nodes in enumerate((32, 64)):
                op = DelayOperator(1.0, m_nodes, [(1.0, 0.5 * np.eye(1))],
                                   kernel=lambda t: 1.0 + t, b0=np.eye(1))
                g = green_method_of_steps(model, op, 1.0, m_nodes)
                d = convolve_direct(g, np.eye(1), path)
                f = convolve_factorized(g, op, np.eye(1), path, cfg)
                devs_lvl[lvl] += np.max(np.abs(d - f.values))
                if lvl == 0:
                    path = brownian_bridge_refine(path, q)
        assert devs_lvl[1] < devs_lvl[0]

    def test_reports_quasi_semigroup_defect(self):
        model = SpectralModel([-1.0])
        op = DelayOperator(1.0, 32, [(1.0, 0.5 * np.eye(1))], kernel=lambda t: 1.0, b0=np.eye(1))
        g = green_method_of_steps(model, op, 1.0, 32)
        q = QWiener([1.0], seed=23)
        path = sample_noise(q, np.arange(33) * g.h, 0)
        cfg = ConvolutionConfig(alpha=0.3, p=4.0, purpose=None)
        fact = convolve_factorized(g, op, np.eye(1), path, cfg)
        assert fact.quasi_semigroup_residual > 0.0


class TestMildSolution:
    def test_homogeneous(self):
        model = SpectralModel([-1.0, -2.0])
        op = point_delay(0.5, 16, 0.3 * np.eye(2))
        g = green_method_of_steps(model, op, 1.0, 16)
        q = QWiener([1.0, 1.0], seed=31)
        path = sample_noise(q, np.arange(33) * g.h, 0)
        psi0 = np.array([1.0, -0.5])
        y = mild_solution(g, op, psi0, None, np.zeros((2, 2)), path)
        expected = np.einsum("jab,b->ja", g.mats, psi0)
        assert np.allclose(y, expected, rtol=1e-12)

    def test_initial_value_exact(self):
        model = SpectralModel([-1.0])
        op = point_delay(0.5, 16, 0.7 * np.eye(1))
        g = green_method_of_steps(model, op, 1.0, 16)
        q = QWiener([1.0], seed=32)
        path = sample_noise(q, np.arange(33) * g.h, 0)
        psi0 = np.array([2.5])
        psi1 = Segment.constant(0.5, 16, [1.3])
        y = mild_solution(g, op, psi0, psi1, np.zeros((1, 1)), path)
        assert y[0, 0] == psi0[0]

    def test_no_delay_history_irrelevant(self):
        model = SpectralModel([-1.0, -3.0])
        op = zero_delay_op(0.5, 16, 2)
        g = green_method_of_steps(model, op, 1.0, 16)
        q = QWiener([1.0, 0.5], seed=33)
        path = sample_noise(q, np.arange(33) * g.h, 0)
        psi0 = np.array([1.0, 2.0])
        psi1 = Segment.constant(0.5, 16, [9.0, -9.0])
        y = mild_solution(g, op, psi0, psi1, np.eye(2), path)
        semigroup = np.exp(np.outer(g.t_grid, model.eigenvalues)) * psi0
        w = convolve_direct(g, np.eye(2), path)
        assert np.allclose(y, semigroup + w, rtol=1e-10, atol=1e-12)

    def test_scalar_delay_hand_oracle(self):
        # y' = y(t-1), psi0 = 1, psi1 = 1: y(t) = 1 + t on [0, 1]
        model = SpectralModel([0.0])
        m_nodes = 100
        op = point_delay(1.0, m_nodes, np.eye(1))
        g = green_method_of_steps(model, op, 1.0, m_nodes)
        q = QWiener([1.0], seed=34)
        path = sample_noise(q, np.arange(m_nodes + 1) * g.h, 0)
        y = mild_solution(g, op, np.ones(1), Segment.constant(1.0, m_nodes, [1.0]),
                          np.zeros((1, 1)), path)
        for j, t in enumerate(g.t_grid):
            assert y[j, 0] == pytest.approx(1.0 + t, abs=5 * g.h)


class TestTraceCondition:
    def test_scalar_closed_form(self):
        model = SpectralModel([-1.0])
        op = zero_delay_op(1.0, 256, 1)
        g = green_method_of_steps(model, op, 1.0, 256)
        q = QWiener([1.0], seed=1)
        rep = trace_condition(g, np.eye(1), q, 0.3, 1.0)
        target = (1.0 - math.exp(-2.0)) / 2.0
        assert rep.trace == pytest.approx(target, abs=1e-4)
        assert rep.trace == pytest.approx(0.43233, abs=1e-4)
        assert rep.finite

    def test_zero_diffusion(self):
        g = flat_table(16, 16)
        q = QWiener([1.0], seed=1)
        rep = trace_condition(g, np.zeros((1, 1)), q, 0.25, 1.0)
        assert rep.trace == 0.0 and rep.weighted == 0.0

    def test_alpha_continuity(self):
        # the weighted integral approaches the flat one linearly in alpha
        model = SpectralModel([-1.0])
        op = zero_delay_op(1.0, 256, 1)
        g = green_method_of_steps(model, op, 1.0, 256)
        q = QWiener([1.0], seed=1)
        base = trace_condition(g, np.eye(1), q, 1e-6, 1.0)
        dev6 = base.weighted - base.trace
        assert abs(dev6) < 1e-5
        dev8 = trace_condition(g, np.eye(1), q, 1e-8, 1.0).weighted - base.trace
        assert dev8 == pytest.approx(dev6 / 100.0, rel=0.01)

    def test_alpha_window(self):
        g = flat_table(16, 16)
        q = QWiener([1.0], seed=1)
        with pytest.raises(ValueError):
            trace_condition(g, np.eye(1), q, 0.5, 1.0)


class TestExport:
    def test_trajectory_csv(self, tmp_path):
        out = tmp_path / "traj.csv"
        grid = np.array([0.0, 0.5])
        trajectories_to_csv({1: np.array([[0.0, 1.0], [2.0, 3.0]])}, grid, out)
        lines = out.read_text().splitlines()
        assert lines[0] == "path,t,mode,value"
        assert lines[1] == "1,0,0,0"
        assert lines[4] == "1,0.5,1,3"
