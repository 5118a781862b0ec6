"""Construction of the retarded fundamental solution on a uniform time grid.

The table G(t_j) solves the operator integral equation

    G(t) = e^{tA} + integral_0^t e^{(t-s)A} F G(s + .) ds,    G(t) = O for t < 0,

by exponential-Euler stepping: the semigroup factor is exact, the delay
functional is read from already computed (or zero) table entries at the left
time point.  A second, independent route builds the same table as a Neumann
series of the retarded Volterra operator; the two agree within the factorial
tail bound plus first-order quadrature error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .delay import DelayOperator, structure_window, trapezoid_weights, _apply_f_window
from .spectral import SpectralModel, operator_norm, yosida_generator

__all__ = [
    "GreenTable",
    "VolterraGreen",
    "YosidaGreen",
    "green_method_of_steps",
    "green_volterra_series",
    "quasi_semigroup_residual",
    "growth_fit",
    "yosida_green",
    "green_table_to_csv",
    "green_table_from_csv",
]

_REL_TOL = 1e-9


class GreenTable:
    """Matrices G(t_j) on the grid t_j = j h; queries below zero return O.

    Off-grid queries in [0, T] interpolate linearly; queries past the grid end
    raise instead of extrapolating.
    """

    def __init__(self, h: float, mats: np.ndarray, r: float):
        mats = np.asarray(mats, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ValueError("mats must be a (steps+1, N, N) stack of square matrices")
        if h <= 0.0:
            raise ValueError("time step must be positive")
        self.h = float(h)
        self.r = float(r)
        self.mats = mats
        self.mats.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.mats.shape[1]

    @property
    def n_steps(self) -> int:
        return self.mats.shape[0] - 1

    @property
    def t_end(self) -> float:
        return self.n_steps * self.h

    @property
    def t_grid(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.h

    def at(self, t: float) -> np.ndarray:
        if t < 0.0:
            return np.zeros((self.dim, self.dim))
        pos = t / self.h
        if pos > self.n_steps + _REL_TOL * max(1.0, self.n_steps):
            raise ValueError(f"t={t} beyond the table horizon {self.t_end}")
        idx = int(np.floor(pos))
        if idx >= self.n_steps:
            return self.mats[-1].copy()
        frac = pos - idx
        if frac == 0.0:
            return self.mats[idx].copy()
        return (1.0 - frac) * self.mats[idx] + frac * self.mats[idx + 1]

    def norms(self) -> np.ndarray:
        return np.asarray([operator_norm(m) for m in self.mats])


def _strict_at(g: GreenTable, u: float) -> np.ndarray:
    """Table value for history integrals: O for u <= 0, so the variation of
    constants and quasi-semigroup identities are exact at time zero."""
    if u <= 0.0:
        return np.zeros((g.dim, g.dim))
    return g.at(u)


def _grid_steps(T: float, h: float) -> int:
    if T < 0.0:
        raise ValueError("horizon T must be nonnegative")
    if T == 0.0:
        return 0
    return max(1, int(math.ceil(T / h - _REL_TOL)))


def _prepare(model: SpectralModel, op: DelayOperator, T: float, M: int):
    if M < 2:
        raise ValueError("M must be at least 2")
    if op.dim != model.dim:
        raise ValueError("delay operator and model dimensions differ")
    if op.m_nodes != M:
        op = op.with_resolution(M)
    h = op.r / M
    n = _grid_steps(T, h)
    exph = np.exp(model.eigenvalues * h)
    return op, h, n, exph


def green_method_of_steps(model: SpectralModel, op: DelayOperator, T: float, M: int) -> GreenTable:
    """Advance G column by column with the exponential-Euler step

        G(t_{j+1}) = e^{hA} [ G(t_j) + h F(G segment ending at t_j) ].
    """
    op, h, n, exph = _prepare(model, op, T, M)
    nn = model.dim
    buf = np.zeros((M + n + 1, nn, nn))
    buf[M] = np.eye(nn)
    for j in range(n):
        window = buf[j : j + M + 1]
        delay = _apply_f_window(op, window)
        buf[M + j + 1] = exph[:, None] * (buf[M + j] + h * delay)
    return GreenTable(h, buf[M:], op.r)


@dataclass(frozen=True)
class VolterraGreen:
    """Partial Neumann sum of the retarded Volterra operator with its tail bound."""

    table: GreenTable
    tail_bound: float
    kappa: float
    term_sup_norms: tuple


def green_volterra_series(model: SpectralModel, op: DelayOperator, T: float, M: int, m_max: int) -> VolterraGreen:
    """Partial sum of G = sum_m V^m e^{.A} with the same quadrature as the
    stepping route, plus the analytic tail bound sum_{m>m_max} kappa^m / m!
    times the semigroup envelope."""
    from .delay import extension_constant

    if m_max < 0:
        raise ValueError("m_max must be nonnegative")
    op, h, n, exph = _prepare(model, op, T, M)
    nn = model.dim

    term = np.zeros((M + n + 1, nn, nn))
    t_grid = np.arange(n + 1) * h
    for j, t in enumerate(t_grid):
        term[M + j] = np.diag(np.exp(model.eigenvalues * t))
    total = term.copy()
    term_norms = [max(operator_norm(term[M + j]) for j in range(n + 1))]

    for _ in range(m_max):
        nxt = np.zeros_like(term)
        for j in range(n):
            window = term[j : j + M + 1]
            delay = _apply_f_window(op, window)
            nxt[M + j + 1] = exph[:, None] * (nxt[M + j] + h * delay)
        term = nxt
        total += term
        term_norms.append(max(operator_norm(term[M + j]) for j in range(n + 1)))

    t_end = n * h
    env = math.exp(max(float(np.max(model.eigenvalues)), 0.0) * t_end)
    m2 = extension_constant(op, 2.0)
    kappa = env * t_end * math.sqrt(m2)
    partial = math.fsum(kappa**m / math.factorial(m) for m in range(m_max + 1))
    tail = max(env * (math.exp(kappa) - partial), 0.0)
    return VolterraGreen(GreenTable(h, total[M:], op.r), tail, kappa, tuple(term_norms))


def quasi_semigroup_residual(g: GreenTable, op: DelayOperator, s: float, t: float, x) -> float:
    """Norm of the defect of

        G(t+s)x = G(t)G(s)x + integral_{-r}^{0} G(t+theta) [S G(s+.)x](theta) dtheta,

    the theta integral by trapezoid over the table (strict zero at t+theta <= 0).
    """
    if s < 0.0 or t < 0.0:
        raise ValueError("s and t must be nonnegative")
    if s + t > g.t_end * (1.0 + _REL_TOL):
        raise ValueError(f"s+t={s + t} beyond the table horizon {g.t_end}")
    if abs(op.h - g.h) > _REL_TOL * g.h:
        raise ValueError("operator grid step does not match the table step")
    x = np.asarray(x, dtype=float)
    theta = op.theta_grid
    seg_vals = np.stack([g.at(s + th) @ x for th in theta])
    svals = structure_window(op, seg_vals)
    tw = trapezoid_weights(op.m_nodes + 1, op.h)
    integral = np.zeros(g.dim)
    for w, th, sv in zip(tw, theta, svals):
        integral += w * (_strict_at(g, t + th) @ sv)
    defect = g.at(t + s) @ x - g.at(t) @ (g.at(s) @ x) - integral
    return float(np.linalg.norm(defect))


def growth_fit(g: GreenTable):
    """Least-squares exponential envelope: returns (c, gamma) with
    ||G(t_j)|| <= c e^{gamma t_j} on the whole grid."""
    norms = g.norms()
    t = g.t_grid
    mask = norms > 1e-14
    if int(mask.sum()) < 2:
        raise ValueError("table too degenerate for a growth fit")
    gamma, logc = np.polyfit(t[mask], np.log(norms[mask]), 1)
    c = math.exp(logc)
    c = max(c, float(np.max(norms[mask] * np.exp(-gamma * t[mask]))))
    return float(c), float(gamma)


@dataclass(frozen=True)
class YosidaGreen:
    """Green table of the bounded approximant generator with sup defects
    against the base table on probe vectors."""

    table: GreenTable
    n: float
    defects: np.ndarray
    probes: np.ndarray


def default_probes(dim: int, count: int = 5, seed: int = 0x9005) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=seed))
    probes = rng.standard_normal((count, dim))
    return probes / np.linalg.norm(probes, axis=1, keepdims=True)


def yosida_green(model: SpectralModel, op: DelayOperator, n: float, T: float, M: int,
                 probes=None, base: GreenTable | None = None) -> YosidaGreen:
    """Stepping route run on the Yosida model, with sup_t ||G_n(t)x - G(t)x||
    reported for each probe vector x."""
    approx = yosida_generator(model, n)
    table_n = green_method_of_steps(approx, op, T, M)
    if base is None:
        base = green_method_of_steps(model, op, T, M)
    if base.mats.shape != table_n.mats.shape:
        raise ValueError("base table grid does not match the approximant grid")
    if probes is None:
        probes = default_probes(model.dim)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    diff = table_n.mats - base.mats
    defects = np.asarray([
        float(np.max(np.linalg.norm(np.einsum("jab,b->ja", diff, x), axis=1)))
        for x in probes
    ])
    return YosidaGreen(table_n, float(n), defects, probes)


def green_table_to_csv(g: GreenTable, path) -> None:
    """Serialize as rows t,i,j,value with 17 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,i,j,value\n")
        for jdx in range(g.n_steps + 1):
            t = jdx * g.h
            for i in range(g.dim):
                for j in range(g.dim):
                    fh.write(f"{t:.17g},{i},{j},{g.mats[jdx, i, j]:.17g}\n")


def green_table_from_csv(path, r: float | None = None) -> GreenTable:
    ts, iis, jjs, vals = [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "t,i,j,value":
            raise ValueError(f"unexpected header {header!r}")
        for line in fh:
            a, b, c, d = line.rstrip("\n").split(",")
            ts.append(float(a))
            iis.append(int(b))
            jjs.append(int(c))
            vals.append(float(d))
    t_nodes = sorted(set(ts))
    dim = max(iis) + 1
    n = len(t_nodes) - 1
    if n < 1:
        raise ValueError("table file holds fewer than two time nodes")
    h = t_nodes[1] - t_nodes[0]
    index = {t: k for k, t in enumerate(t_nodes)}
    mats = np.zeros((n + 1, dim, dim))
    for t, i, j, v in zip(ts, iis, jjs, vals):
        mats[index[t], i, j] = v
    return GreenTable(h, mats, r if r is not None else h)
