import math

import numpy as np
import pytest

from retarded_ou.delay import (
    DelayOperator,
    Segment,
    apply_F,
    extension_constant,
    point_delay,
    right_extension,
    structure_apply,
)


def random_segment(r, m_nodes, dim, seed):
    rng = np.random.default_rng(seed)
    return Segment(r, rng.standard_normal((m_nodes + 1, dim)))


class TestSegment:
    def test_endpoints_exact(self):
        seg = random_segment(2.0, 8, 3, 0)
        assert np.array_equal(seg.evaluate(0.0), seg.values[-1])
        assert np.array_equal(seg.evaluate(-2.0), seg.values[0])

    def test_linear_interpolation_midpoint(self):
        seg = random_segment(1.0, 4, 2, 1)
        theta = -1.0 + 1.5 * seg.h
        expected = 0.5 * (seg.values[1] + seg.values[2])
        assert np.allclose(seg.evaluate(theta), expected, rtol=1e-12)

    def test_out_of_range(self):
        seg = random_segment(1.0, 4, 1, 2)
        with pytest.raises(ValueError):
            seg.evaluate(-1.5)

    def test_resample_keeps_nodes(self):
        seg = random_segment(1.0, 4, 2, 3)
        fine = seg.resample(8)
        assert np.allclose(fine.values[::2], seg.values)


class TestRightExtension:
    def test_vanishes_forward(self):
        seg = random_segment(1.0, 5, 2, 4)
        assert np.array_equal(right_extension(seg, 0.5), np.zeros(2))

    def test_history_endpoint(self):
        seg = random_segment(1.0, 5, 2, 5)
        assert np.array_equal(right_extension(seg, -1.0), seg.values[0])

    def test_midpoint_average(self):
        seg = random_segment(1.0, 5, 2, 6)
        theta = -1.0 + 2.5 * seg.h
        assert np.allclose(right_extension(seg, theta), 0.5 * (seg.values[2] + seg.values[3]))

    def test_below_horizon(self):
        seg = random_segment(1.0, 5, 2, 7)
        with pytest.raises(ValueError):
            right_extension(seg, -1.1)


class TestApplyF:
    def test_pure_point_delay(self):
        seg = random_segment(1.0, 10, 3, 8)
        op = point_delay(1.0, 10, np.eye(3))
        assert np.allclose(apply_F(op, seg), seg.values[0], rtol=1e-14)

    def test_constant_kernel_constant_segment(self):
        c = np.array([2.0, -1.0])
        seg = Segment.constant(0.5, 20, c)
        op = DelayOperator(0.5, 20, kernel=lambda t: 1.0, b0=np.eye(2))
        assert np.allclose(apply_F(op, seg), 0.5 * c, rtol=1e-12)

    def test_linear_kernel_quadrature(self):
        # integral of theta^2 over [-1, 0] is 1/3, trapezoid error O(M^-2)
        m_nodes = 100
        seg = Segment.from_function(1.0, m_nodes, lambda t: [t])
        op = DelayOperator(1.0, m_nodes, kernel=lambda t: t, b0=np.eye(1))
        assert apply_F(op, seg)[0] == pytest.approx(1.0 / 3.0, abs=1e-4)

    def test_grid_mismatch(self):
        op = point_delay(1.0, 10, np.eye(2))
        with pytest.raises(ValueError):
            apply_F(op, random_segment(1.0, 12, 2, 9))
        with pytest.raises(ValueError):
            apply_F(op, random_segment(2.0, 10, 2, 10))

    def test_off_grid_delay_rejected(self):
        with pytest.raises(ValueError):
            DelayOperator(1.0, 10, [(0.55, np.eye(1))], dim=1)

    def test_matrix_kernel(self):
        m_nodes = 50
        seg = Segment.constant(1.0, m_nodes, [1.0, 1.0])
        rot = np.array([[0.0, 1.0], [-1.0, 0.0]])
        op = DelayOperator(1.0, m_nodes, kernel=lambda t: rot, dim=2)
        assert np.allclose(apply_F(op, seg), rot @ np.ones(2), rtol=1e-12)


class TestStructureOperator:
    def test_point_delay_reflection(self):
        seg = random_segment(1.0, 10, 2, 11)
        op = point_delay(1.0, 10, np.eye(2))
        out = structure_apply(op, seg)
        # (S phi)(theta) = phi(-theta - r): theta = 0 gives phi(-r), theta = -r gives phi(0)
        assert np.allclose(out.values[-1], seg.values[0])
        assert np.allclose(out.values[0], seg.values[-1])
        for l in range(11):
            assert np.allclose(out.values[l], seg.values[10 - l])

    def test_matches_apply_f_at_zero(self):
        seg = random_segment(1.0, 40, 3, 12)
        b1 = np.diag([0.5, 1.5, -1.0])
        op = DelayOperator(1.0, 40, [(1.0, b1)], kernel=lambda t: math.cos(t), b0=0.3 * np.eye(3))
        out = structure_apply(op, seg)
        assert np.allclose(out.values[-1], apply_F(op, seg), rtol=1e-12)

    def test_zero_segment(self):
        op = point_delay(1.0, 6, np.eye(2))
        out = structure_apply(op, Segment.zero(1.0, 6, 2))
        assert not out.values.any()

    def test_short_point_delay_truncates(self):
        # r_i < r: reads past the right end of the extension vanish
        seg = random_segment(1.0, 10, 1, 13)
        op = DelayOperator(1.0, 10, [(0.5, np.eye(1))], dim=1)
        out = structure_apply(op, seg)
        # theta = 0 reads vec-phi(-0.5) = phi(-0.5)
        assert np.allclose(out.values[10], seg.values[5])
        # theta = -1 reads vec-phi(0.5), past the right end, hence zero
        assert np.allclose(out.values[0], 0.0)

    def test_boundedness_in_lp(self):
        # integral of ||S phi||^p <= M_p integral of ||phi||^p + slack
        rng = np.random.default_rng(14)
        m_nodes = 60
        op = DelayOperator(1.0, m_nodes, [(1.0, np.diag([1.0, 0.5]))],
                           kernel=lambda t: 1.0 + t, b0=0.5 * np.eye(2))
        from retarded_ou.delay import trapezoid_weights

        w = trapezoid_weights(m_nodes + 1, op.h)
        for p in (2.0, 4.0):
            m_p = extension_constant(op, p)
            for seed in range(20):
                seg = random_segment(1.0, m_nodes, 2, 100 + seed)
                s = structure_apply(op, seg)
                lhs = float(w @ np.linalg.norm(s.values, axis=1) ** p)
                rhs = float(w @ np.linalg.norm(seg.values, axis=1) ** p)
                assert lhs <= m_p * rhs + 1e-6


class TestLinearity:
    def test_apply_f_linear(self):
        op = DelayOperator(1.0, 30, [(1.0, np.eye(2))], kernel=lambda t: t, b0=np.eye(2))
        a = random_segment(1.0, 30, 2, 15)
        b = random_segment(1.0, 30, 2, 16)
        combo = Segment(1.0, 2.0 * a.values - 3.0 * b.values)
        expected = 2.0 * apply_F(op, a) - 3.0 * apply_F(op, b)
        assert np.allclose(apply_F(op, combo), expected, rtol=1e-12)

    def test_structure_linear(self):
        op = DelayOperator(1.0, 30, [(1.0, np.eye(2))], kernel=lambda t: t, b0=np.eye(2))
        a = random_segment(1.0, 30, 2, 17)
        b = random_segment(1.0, 30, 2, 18)
        combo = Segment(1.0, a.values + b.values)
        expected = structure_apply(op, a).values + structure_apply(op, b).values
        assert np.allclose(structure_apply(op, combo).values, expected, rtol=1e-12)


class TestExtensionConstant:
    def test_closed_form_substitution(self):
        # p = 2, ||B1|| = 2, ||B0|| = 1, ||a||_{L^2} = 1, r = 4 gives (2 + 2)^2 = 16
        op = DelayOperator(4.0, 80, [(4.0, 2.0 * np.eye(2))],
                           kernel=lambda t: 0.5, b0=np.eye(2))
        assert op.kernel_q_norm(2.0) == pytest.approx(1.0, rel=1e-12)
        assert extension_constant(op, 2.0) == pytest.approx(16.0, rel=1e-9)

    def test_zero_kernel_operator(self):
        op = DelayOperator(1.0, 10, [(1.0, 2.0 * np.eye(2))],
                           kernel=lambda t: 1.0, b0=np.zeros((2, 2)))
        for p in (1.0, 2.0, 3.0):
            assert extension_constant(op, p) == pytest.approx(2.0**p, rel=1e-9)

    def test_zero_operator(self):
        op = DelayOperator(1.0, 10, [(1.0, np.zeros((2, 2)))], dim=2)
        assert extension_constant(op, 2.0) == 0.0

    def test_p_one_uses_sup_norm(self):
        op = DelayOperator(1.0, 100, kernel=lambda t: t, b0=np.eye(1))
        # q = inf: ||a||_inf = 1, r^{1/1} = 1
        assert extension_constant(op, 1.0) == pytest.approx(1.0, rel=1e-9)

    def test_extension_inequality_empirical(self):
        # int_0^T ||F y_t||^p dt <= M_p int_{-r}^T ||y||^p dt + slack, random piecewise-linear y
        rng = np.random.default_rng(19)
        r, m_nodes, dim = 1.0, 32, 2
        op = DelayOperator(r, m_nodes, [(r, np.diag([0.8, -0.6]))],
                           kernel=lambda t: 1.0 + 0.5 * t, b0=0.4 * np.eye(dim))
        h = r / m_nodes
        t_steps = 3 * m_nodes  # T = 3r
        from retarded_ou.delay import trapezoid_weights, _apply_f_window

        for p in (2.0, 4.0):
            m_p = extension_constant(op, p)
            for seed in range(100):
                rng = np.random.default_rng(1000 + seed)
                coarse = rng.standard_normal((13, dim))
                t_full = np.linspace(-r, 3.0 * r, m_nodes + t_steps + 1)
                knots = np.linspace(-r, 3.0 * r, 13)
                y = np.stack([np.interp(t_full, knots, coarse[:, d]) for d in range(dim)], axis=1)
                f_vals = np.stack([_apply_f_window(op, y[j : j + m_nodes + 1])
                                   for j in range(t_steps + 1)])
                w_lhs = trapezoid_weights(t_steps + 1, h)
                w_rhs = trapezoid_weights(m_nodes + t_steps + 1, h)
                lhs = float(w_lhs @ np.linalg.norm(f_vals, axis=1) ** p)
                rhs = float(w_rhs @ np.linalg.norm(y, axis=1) ** p)
                assert lhs <= m_p * rhs + 1e-6
