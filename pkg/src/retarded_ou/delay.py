"""History segments, the delay functional F and its structure operator.

A segment is an H-valued function on [-r, 0] sampled on a uniform grid of
M + 1 nodes (step r/M).  The delay functional combines point delays with a
distributed kernel term,

    F phi = sum_i A_i phi(-r_i) + integral_{-r}^{0} a(theta) B0 phi(theta) dtheta,

with the integral evaluated by the composite trapezoid rule on the segment
grid.  Point delays must sit on grid nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import as_matrix, operator_norm

__all__ = [
    "Segment",
    "DelayOperator",
    "point_delay",
    "apply_F",
    "right_extension",
    "structure_apply",
    "extension_constant",
]

_SNAP_REL = 1e-9


def trapezoid_weights(n_nodes: int, h: float) -> np.ndarray:
    """Composite trapezoid weights on n_nodes uniform nodes with step h."""
    if n_nodes < 2:
        return np.zeros(max(n_nodes, 0))
    w = np.full(n_nodes, h)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True)
class Segment:
    """Sampled history on [-r, 0]: values[l] is the state at theta = -r + l*h."""

    r: float
    values: np.ndarray

    def __post_init__(self):
        if self.r <= 0.0:
            raise ValueError("delay horizon r must be positive")
        vals = np.asarray(self.values, dtype=float).copy()
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] < 2:
            raise ValueError("segment needs at least two nodes of H-valued samples")
        if not np.all(np.isfinite(vals)):
            raise ValueError("segment values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def m_nodes(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def h(self) -> float:
        return self.r / self.m_nodes

    @property
    def theta_grid(self) -> np.ndarray:
        return np.linspace(-self.r, 0.0, self.m_nodes + 1)

    def evaluate(self, theta: float) -> np.ndarray:
        """Value at theta in [-r, 0], linear interpolation between nodes."""
        if theta < -self.r - _SNAP_REL * self.r or theta > _SNAP_REL * self.r:
            raise ValueError(f"theta={theta} outside [-r, 0] with r={self.r}")
        pos = (theta + self.r) / self.h
        idx = int(np.floor(pos))
        if idx >= self.m_nodes:
            return self.values[-1].copy()
        if idx < 0:
            return self.values[0].copy()
        frac = pos - idx
        if frac == 0.0:
            return self.values[idx].copy()
        return (1.0 - frac) * self.values[idx] + frac * self.values[idx + 1]

    def resample(self, m_nodes: int) -> "Segment":
        if m_nodes == self.m_nodes:
            return self
        grid = np.linspace(-self.r, 0.0, m_nodes + 1)
        vals = np.stack([self.evaluate(t) for t in grid])
        return Segment(self.r, vals)

    @staticmethod
    def from_function(r: float, m_nodes: int, fn) -> "Segment":
        grid = np.linspace(-r, 0.0, m_nodes + 1)
        vals = np.stack([np.atleast_1d(np.asarray(fn(t), dtype=float)) for t in grid])
        return Segment(r, vals)

    @staticmethod
    def constant(r: float, m_nodes: int, vec) -> "Segment":
        vec = np.atleast_1d(np.asarray(vec, dtype=float))
        return Segment(r, np.tile(vec, (m_nodes + 1, 1)))

    @staticmethod
    def zero(r: float, m_nodes: int, dim: int) -> "Segment":
        return Segment(r, np.zeros((m_nodes + 1, dim)))


def right_extension(seg: Segment, t: float) -> np.ndarray:
    """Extend the segment by zero to the right: seg(t) on [-r, 0], 0 beyond."""
    if t < -seg.r - _SNAP_REL * seg.r:
        raise ValueError(f"t={t} below the history horizon -r={-seg.r}")
    if t > 0.0:
        return np.zeros(seg.dim)
    return seg.evaluate(t)


class DelayOperator:
    """Delay functional with point delays and a scalar (or matrix) kernel.

    Parameters
    ----------
    r, m_nodes : history horizon and number of grid subintervals (step r/m_nodes).
    terms : iterable of (r_i, A_i) point delays, 0 <= r_i <= r, each snapped to a node.
    kernel : scalar callable a(theta), matrix callable, or sample array; None for no kernel.
    b0 : matrix multiplying the scalar kernel term; must be None for matrix kernels.
    dim : state dimension, inferred from the matrices when omitted.
    """

    def __init__(self, r, m_nodes, terms=(), kernel=None, b0=None, dim=None):
        if r <= 0.0:
            raise ValueError("delay horizon r must be positive")
        if m_nodes < 1:
            raise ValueError("m_nodes must be at least 1")
        self.r = float(r)
        self.m_nodes = int(m_nodes)
        self.h = self.r / self.m_nodes

        mats = []
        for r_i, a_i in terms:
            mats.append((float(r_i), as_matrix(a_i)))
        if b0 is not None:
            b0 = as_matrix(b0)
        if dim is None:
            if mats:
                dim = mats[0][1].shape[0]
            elif b0 is not None:
                dim = b0.shape[0]
            else:
                raise ValueError("dim is required when no matrices are given")
        self.dim = int(dim)

        snapped = []
        for r_i, a_i in mats:
            if not 0.0 <= r_i <= self.r * (1.0 + _SNAP_REL):
                raise ValueError(f"point delay {r_i} outside [0, r]")
            if a_i.shape != (self.dim, self.dim):
                raise ValueError("point-delay matrices must be square of the state dimension")
            k = int(round(r_i / self.h))
            if abs(k * self.h - r_i) > _SNAP_REL * self.r:
                raise ValueError(f"point delay {r_i} is off the grid of step {self.h}")
            snapped.append((k, a_i))
        self.discrete_terms = tuple(snapped)

        self._kernel_fn = kernel if callable(kernel) else None
        self.kernel_values = None
        self.b0 = None
        if kernel is not None:
            grid = self.theta_grid
            if callable(kernel):
                samples = np.asarray([kernel(t) for t in grid], dtype=float)
            else:
                samples = np.asarray(kernel, dtype=float)
            if samples.shape[0] != self.m_nodes + 1:
                raise ValueError("kernel samples must match the theta grid")
            if samples.ndim == 1:
                if b0 is None:
                    raise ValueError("scalar kernels need the b0 matrix")
                if b0.shape != (self.dim, self.dim):
                    raise ValueError("b0 must be square of the state dimension")
                self.b0 = b0
            elif samples.ndim == 3:
                if b0 is not None:
                    raise ValueError("matrix-valued kernels already include the operator factor")
                if samples.shape[1:] != (self.dim, self.dim):
                    raise ValueError("matrix kernel nodes must be square of the state dimension")
            else:
                raise ValueError("kernel samples must be scalars or matrices per node")
            if not np.all(np.isfinite(samples)):
                raise ValueError("kernel samples must be finite on the grid")
            samples.setflags(write=False)
            self.kernel_values = samples
        elif b0 is not None:
            raise ValueError("b0 given without a kernel")

        self._q_norms = {}

    @property
    def theta_grid(self) -> np.ndarray:
        return np.linspace(-self.r, 0.0, self.m_nodes + 1)

    @property
    def has_kernel(self) -> bool:
        return self.kernel_values is not None

    def with_resolution(self, m_nodes: int) -> "DelayOperator":
        """Same operator resampled on a grid of m_nodes subintervals."""
        if m_nodes == self.m_nodes:
            return self
        kernel = self._kernel_fn
        if kernel is None and self.kernel_values is not None:
            old = self.theta_grid
            vals = self.kernel_values
            if vals.ndim == 1:
                kernel = lambda t: np.interp(t, old, vals)
            else:
                raise ValueError("matrix kernel samples cannot be resampled without a callable")
        terms = [(k * self.h, a) for k, a in self.discrete_terms]
        return DelayOperator(self.r, m_nodes, terms, kernel=kernel, b0=self.b0, dim=self.dim)

    def kernel_q_norm(self, q: float) -> float:
        """L^q norm of the scalar kernel (max of node norms for matrix kernels)."""
        if not self.has_kernel:
            return 0.0
        key = float(q)
        if key in self._q_norms:
            return self._q_norms[key]
        vals = self.kernel_values
        if vals.ndim == 1:
            mags = np.abs(vals)
        else:
            mags = np.asarray([operator_norm(v) for v in vals])
        if np.isinf(q):
            out = float(np.max(mags))
        else:
            if q < 1.0:
                raise ValueError("q must be at least 1")
            w = trapezoid_weights(len(mags), self.h)
            out = float(np.dot(w, mags**q) ** (1.0 / q))
        if not np.isfinite(out):
            raise ValueError("kernel q-norm is not finite on the grid")
        self._q_norms[key] = out
        return out

    def _check_segment(self, seg: Segment):
        if abs(seg.r - self.r) > _SNAP_REL * self.r:
            raise ValueError(f"segment horizon {seg.r} does not match operator horizon {self.r}")
        if seg.m_nodes != self.m_nodes:
            raise ValueError(f"segment has {seg.m_nodes} subintervals, operator grid has {self.m_nodes}")
        if seg.dim != self.dim:
            raise ValueError(f"segment dimension {seg.dim} does not match operator dimension {self.dim}")


def _window_value(window: np.ndarray, idx: int):
    """Node idx of a segment window, zero beyond the right end (right extension)."""
    if idx > window.shape[0] - 1:
        return np.zeros_like(window[0])
    return window[idx]


def _apply_f_window(op: DelayOperator, window: np.ndarray) -> np.ndarray:
    """F applied to raw window samples; window is (M+1, N) or (M+1, N, N)."""
    m = op.m_nodes
    out = np.zeros_like(window[0])
    for k, a_i in op.discrete_terms:
        out = out + a_i @ window[m - k]
    if op.has_kernel:
        kv = op.kernel_values
        w = trapezoid_weights(m + 1, op.h)
        if kv.ndim == 1:
            acc = np.tensordot(w * kv, window, axes=(0, 0))
            out = out + op.b0 @ acc
        else:
            weighted = w[:, None, None] * kv
            out = out + np.einsum("lab,lb...->a...", weighted, window)
    return out


def apply_F(op: DelayOperator, seg: Segment) -> np.ndarray:
    """Evaluate F on a history segment."""
    op._check_segment(seg)
    return _apply_f_window(op, seg.values)


def structure_window(op: DelayOperator, window: np.ndarray) -> np.ndarray:
    """Structure operator on raw window samples.

    Output node l is F applied to the shifted right extension of the window,
    i.e. the point-delay reads land at node 2M - l - k_i (zero when past the
    right end) and the kernel integral runs over [-r, theta_l] only.
    """
    m = op.m_nodes
    out = np.zeros_like(window)
    for k, a_i in op.discrete_terms:
        for l in range(m + 1):
            out[l] = out[l] + a_i @ _window_value(window, 2 * m - l - k)
    if op.has_kernel:
        kv = op.kernel_values
        for l in range(1, m + 1):
            w = trapezoid_weights(l + 1, op.h)
            sub = window[m - l : m + 1]
            if kv.ndim == 1:
                acc = np.tensordot(w * kv[: l + 1], sub, axes=(0, 0))
                out[l] = out[l] + op.b0 @ acc
            else:
                weighted = w[:, None, None] * kv[: l + 1]
                out[l] = out[l] + np.einsum("lab,lb...->a...", weighted, sub)
    return out


def structure_apply(op: DelayOperator, seg: Segment) -> Segment:
    """Segment theta -> F applied to the shifted right extension of seg."""
    op._check_segment(seg)
    return Segment(seg.r, structure_window(op, seg.values))


def point_delay(r: float, m_nodes: int, matrix) -> DelayOperator:
    """Single point delay F phi = A phi(-r)."""
    return DelayOperator(r, m_nodes, terms=[(r, matrix)])


def extension_constant(op: DelayOperator, p: float) -> float:
    """Constant M_p of the L^p extension bound of F.

    For the point-delay-plus-scalar-kernel form this is the closed form
    (sum_i ||A_i|| + ||B0|| ||a||_{L^q} r^{1/p})^p with 1/p + 1/q = 1; several
    point delays enter through the sum of their norms, a conservative
    extension of the single-delay case.
    """
    if p < 1.0:
        raise ValueError("p must be at least 1")
    q = np.inf if p == 1.0 else p / (p - 1.0)
    point_part = sum(operator_norm(a_i) for _, a_i in op.discrete_terms)
    kernel_part = 0.0
    if op.has_kernel:
        a_norm = op.kernel_q_norm(q)
        b0_norm = operator_norm(op.b0) if op.b0 is not None else 1.0
        kernel_part = b0_norm * a_norm * op.r ** (1.0 / p)
    return float((point_part + kernel_part) ** p)
