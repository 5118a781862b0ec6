"""Regularity diagnostics and moment-inequality checks.

Path regularity is read off structure functions: the slope of
log E||y(t+delta) - y(t)||^2 against log delta over dyadic lags estimates
twice the Holder exponent, with a confidence band from the regression
standard error.  Moment quantities take sup over the grid, a lower bound for
the continuous-time sup that is reported together with the grid resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .convolution import AdaptedDiffusion, ConvolutionSimulator, PiecewiseDiffusion
from .delay import DelayOperator
from .noise import QWiener, increment_batch
from .spectral import SpectralModel, as_matrix, yosida_generator

__all__ = [
    "RegularityReport",
    "FractionalRegularity",
    "BdgReport",
    "holder_estimate",
    "holder_from_structure",
    "structure_function",
    "fractional_path_regularity",
    "dAalpha_norm",
    "dAalpha_mode_supremum",
    "yosida_moment_convergence",
    "YosidaMomentTable",
    "bdg_ratio",
    "PiecewiseConstantProcess",
    "AdaptedProcess",
    "holder_seminorm",
    "convolution_regularity_study",
]


@dataclass(frozen=True)
class RegularityReport:
    """Holder-exponent estimate from a dyadic structure-function regression."""

    estimate: float
    band: tuple
    scales: np.ndarray
    structure: np.ndarray

    def __post_init__(self):
        if len(self.scales) < 4:
            raise ValueError("need at least 4 dyadic scales")
        lo, hi = self.band
        if not lo <= self.estimate <= hi:
            raise ValueError("estimate must lie inside its confidence band")

    def to_json(self) -> dict:
        return {
            "estimate": self.estimate,
            "band_lo": self.band[0],
            "band_hi": self.band[1],
            "scales": [float(s) for s in self.scales],
            "structure": [float(v) for v in self.structure],
        }


def holder_from_structure(scales, values) -> RegularityReport:
    """Fit log values ~ log scales; exponent = slope / 2, band = +-2 SE."""
    scales = np.asarray(scales, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0.0) or not np.all(np.isfinite(values)):
        raise ValueError("degenerate structure function (constant trajectories?)")
    x = np.log(scales)
    y = np.log(values)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    dof = max(len(x) - 2, 1)
    sxx = float(np.sum((x - x.mean()) ** 2))
    se = math.sqrt(float(np.sum(resid**2)) / dof / sxx)
    est = slope / 2.0
    return RegularityReport(float(est), (float(est - se), float(est + se)), scales, values)


def structure_function(trajectories, h: float, lag_steps) -> np.ndarray:
    """Mean squared increment norm per lag, averaged over paths and anchors.

    trajectories: (P, steps+1, N) array (a single (steps+1, N) path works too).
    """
    trajs = np.asarray(trajectories, dtype=float)
    if trajs.ndim == 2:
        trajs = trajs[None]
    out = np.empty(len(lag_steps))
    n = trajs.shape[1] - 1
    for i, lag in enumerate(lag_steps):
        if lag < 1 or lag > n:
            raise ValueError(f"lag {lag} outside the grid")
        diff = trajs[:, lag:, :] - trajs[:, :-lag, :]
        out[i] = float(np.mean(np.sum(diff**2, axis=2)))
    return out


def _dyadic_lags(n_steps: int, lag_exponents) -> np.ndarray:
    lags = np.asarray([2**k for k in lag_exponents], dtype=int)
    if len(lags) < 4:
        raise ValueError("need at least 4 dyadic lags")
    if np.any(lags > n_steps):
        raise ValueError("dyadic lags exceed the grid")
    return lags


def holder_estimate(trajectories, h: float, lag_exponents=range(6)) -> RegularityReport:
    """Structure-function exponent of a trajectory ensemble on a uniform grid."""
    trajs = np.asarray(trajectories, dtype=float)
    if trajs.ndim == 2:
        trajs = trajs[None]
    lags = _dyadic_lags(trajs.shape[1] - 1, lag_exponents)
    values = structure_function(trajs, h, lags)
    return holder_from_structure(lags * h, values)


@dataclass(frozen=True)
class FractionalRegularity:
    report: RegularityReport
    max_norm: float


def fractional_path_regularity(trajectories, model: SpectralModel, gamma: float,
                               h: float, lag_exponents=range(6)) -> FractionalRegularity:
    """Holder estimate of (-A)^gamma y together with its largest pathwise norm."""
    if gamma < 0.0 or gamma > 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    if gamma > 0.0 and not model.analytic:
        raise ValueError("fractional powers need a strictly negative spectrum")
    trajs = np.asarray(trajectories, dtype=float)
    if trajs.ndim == 2:
        trajs = trajs[None]
    weights = np.ones(model.dim) if gamma == 0.0 else (-model.eigenvalues) ** gamma
    scaled = trajs * weights[None, None, :]
    report = holder_estimate(scaled, h, lag_exponents)
    max_norm = float(np.max(np.linalg.norm(scaled, axis=2)))
    return FractionalRegularity(report, max_norm)


def dAalpha_mode_supremum(a_k: float, alpha: float) -> float:
    """Closed form sup_t t^{1-alpha} |a| e^{a t} for a single mode a < 0."""
    if a_k >= 0.0:
        raise ValueError("mode must be strictly negative")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    mag = -a_k
    return float(mag**alpha * (1.0 - alpha) ** (1.0 - alpha) * math.exp(-(1.0 - alpha)))


def dAalpha_norm(model: SpectralModel, alpha: float, h_vec, t_max: float = 1.0,
                 n_grid: int = 2000) -> float:
    """Interpolation-space norm surrogate sup_t ||t^{1-alpha} A e^{tA} h||
    over a log-spaced grid in [1e-8, t_max]."""
    if not model.analytic:
        raise ValueError("norm surrogate needs a strictly negative spectrum")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    h_vec = np.asarray(h_vec, dtype=float)
    if h_vec.shape != (model.dim,):
        raise ValueError("h must be a state vector")
    if not h_vec.any():
        return 0.0
    t = np.logspace(-8, math.log10(t_max), n_grid)
    modes = model.eigenvalues * h_vec
    fields = np.exp(np.outer(t, model.eigenvalues)) * modes[None, :]
    norms = t ** (1.0 - alpha) * np.linalg.norm(fields, axis=1)
    return float(np.max(norms))


@dataclass(frozen=True)
class YosidaMomentTable:
    """E sup_t ||W_G - W_{G_n}||^p per approximant index n."""

    n_list: tuple
    values: np.ndarray
    stderrs: np.ndarray
    p: float

    def monotone(self, slack_sigmas: float = 2.0) -> bool:
        """Nonincreasing in n, allowing one inversion within the given sigmas."""
        inversions = 0
        for a, b, sb in zip(self.values[:-1], self.values[1:], self.stderrs[1:]):
            if b > a:
                if b - a > slack_sigmas * sb:
                    return False
                inversions += 1
        return inversions <= 1


def _batched_indices(total: int, batch: int):
    for start in range(0, total, batch):
        yield np.arange(start, min(start + batch, total))


def yosida_moment_convergence(model: SpectralModel, op: DelayOperator, b, q: QWiener,
                              p: float, T: float, M: int, n_list, paths: int,
                              batch: int = 512) -> YosidaMomentTable:
    """Same-noise Monte Carlo table of E sup_t ||W_G(t) - W_{G_n}(t)||^p.

    The base and approximant recursions consume identical increment batches,
    so the defect isolates the generator approximation.
    """
    if p <= 2.0:
        raise ValueError("moment order p must exceed 2")
    if op.m_nodes != M:
        op = op.with_resolution(M)
    h = op.r / M
    n = max(1, int(round(T / h)))
    base = ConvolutionSimulator(model, op, b, h, n)
    approx = [ConvolutionSimulator(yosida_generator(model, nv), op, b, h, n) for nv in n_list]

    samples = [[] for _ in n_list]
    for idxs in _batched_indices(paths, batch):
        dw = increment_batch(q, h, n, idxs)
        w_base = base.run(dw)
        for slot, sim in enumerate(approx):
            w_n = sim.run(dw)
            sup = np.max(np.linalg.norm(w_base - w_n, axis=1), axis=0)
            samples[slot].append(sup**p)
    values, errs = [], []
    for chunk in samples:
        flat = np.concatenate(chunk)
        values.append(float(np.mean(flat)))
        errs.append(float(np.std(flat, ddof=1) / math.sqrt(flat.size)))
    return YosidaMomentTable(tuple(float(nv) for nv in n_list),
                             np.asarray(values), np.asarray(errs), p)


@dataclass(frozen=True)
class PiecewiseConstantProcess:
    """Deterministic diffusion schedule: equal time blocks over [0, T]."""

    matrices: tuple

    def build(self, n_steps: int):
        block = max(1, math.ceil(n_steps / len(self.matrices)))
        return PiecewiseDiffusion(list(self.matrices), block)


@dataclass(frozen=True)
class AdaptedProcess:
    """Adapted scalar modulation sigma(t, W(t)) of a base matrix, piecewise
    constant over a fixed number of blocks."""

    base: np.ndarray
    rule: object
    blocks: int = 8

    def build(self, n_steps: int):
        block = max(1, math.ceil(n_steps / self.blocks))
        return AdaptedDiffusion(self.base, self.rule, block)


@dataclass(frozen=True)
class BdgReport:
    """Both sides of the sup-moment inequality for stochastic convolutions."""

    p: float
    lhs: float
    rhs: float
    ratio: float
    ratios: tuple
    grids: tuple
    lhs_stderr: float = 0.0

    @property
    def stable(self) -> bool:
        if len(self.ratios) < 2:
            return np.isfinite(self.ratio)
        a, b = self.ratios[-2], self.ratios[-1]
        if not (np.isfinite(a) and np.isfinite(b)):
            return False
        if a == b == 0.0:
            return True
        return abs(b - a) <= 0.25 * max(abs(a), abs(b))

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "ratio": self.ratio,
            "ratios": [float(r) for r in self.ratios],
            "grids": [int(g) for g in self.grids],
            "stable": self.stable,
        }


def _trace_factor(b: np.ndarray, q: QWiener) -> float:
    return float(np.einsum("il,l->", b**2, q.lambdas))


def bdg_ratio(model: SpectralModel, op: DelayOperator | None, b_process, q: QWiener,
              p: float, T: float, paths: int, M_list, batch: int = 512) -> BdgReport:
    """Monte Carlo ratio of E sup_t ||int G(t-s)B(s) dW(s)||^p to
    E int_0^T Tr[B(t) Q B(t)*]^{p/2} dt, per grid resolution in M_list.

    The right side is exact for constant and scheduled diffusions and Monte
    Carlo for adapted ones; a zero diffusion reports ratio 0.
    """
    if p <= 2.0:
        raise ValueError("moment order p must exceed 2")
    if not M_list:
        raise ValueError("M_list must not be empty")
    ratios, lhs_fin, rhs_fin, err_fin = [], 0.0, 0.0, 0.0

    for m_res in M_list:
        if op is not None:
            op_m = op.with_resolution(m_res)
            h = op_m.r / m_res
        else:
            op_m = None
            h = T / m_res
        n = max(1, int(round(T / h)))

        if isinstance(b_process, (PiecewiseConstantProcess, AdaptedProcess)):
            base = as_matrix(b_process.matrices[0]) if isinstance(b_process, PiecewiseConstantProcess) else as_matrix(b_process.base)
            diffusion = b_process.build(n)
        else:
            base = as_matrix(b_process)
            diffusion = None

        sim = ConvolutionSimulator(model, op_m, base, h, n)
        sup_p = []
        rhs_samples = []
        for idxs in _batched_indices(paths, batch):
            dw = increment_batch(q, h, n, idxs)
            w = sim.run(dw, diffusion=diffusion)
            sup = np.max(np.linalg.norm(w, axis=1), axis=0)
            sup_p.append(sup**p)
            if isinstance(diffusion, AdaptedDiffusion):
                tr = _trace_factor(base, q)
                rhs_samples.append(h * tr ** (p / 2.0) * np.sum(np.abs(diffusion.history) ** p, axis=0))
        flat = np.concatenate(sup_p)
        lhs = float(np.mean(flat))
        lhs_err = float(np.std(flat, ddof=1) / math.sqrt(flat.size)) if flat.size > 1 else 0.0

        if isinstance(diffusion, AdaptedDiffusion):
            rhs = float(np.mean(np.concatenate(rhs_samples)))
        elif isinstance(diffusion, PiecewiseDiffusion):
            rhs = float(sum(h * diffusion.trace_factor(j, q) ** (p / 2.0) for j in range(n)))
        else:
            rhs = float(n * h * _trace_factor(base, q) ** (p / 2.0))
        ratios.append(0.0 if rhs == 0.0 else lhs / rhs)
        lhs_fin, rhs_fin, err_fin = lhs, rhs, lhs_err

    return BdgReport(p, lhs_fin, rhs_fin, ratios[-1], tuple(ratios), tuple(int(m) for m in M_list), err_fin)


def holder_seminorm(values: np.ndarray, h: float, alpha: float, lag_exponents=range(6)) -> float:
    """Pathwise C^alpha seminorm surrogate over dyadic lags."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0] - 1
    best = 0.0
    for k in lag_exponents:
        lag = 2**k
        if lag > n:
            break
        diff = np.linalg.norm(values[lag:] - values[:-lag], axis=-1)
        best = max(best, float(np.max(diff)) / (lag * h) ** alpha)
    return best


def convolution_regularity_study(model: SpectralModel, op: DelayOperator | None, b, q: QWiener,
                                 T: float, h: float, paths: int,
                                 lag_exponents=range(7), gamma: float | None = None,
                                 t_stride: int = 8, batch: int = 256) -> dict:
    """Streaming structure-function study of a stochastic-convolution ensemble.

    Runs the batch recursion, accumulates squared increment norms at dyadic
    lags (anchors subsampled by t_stride), and optionally repeats the sums for
    the fractionally shifted paths (-A)^gamma W so both exponents come from a
    single pass.  Returns reports keyed "raw" and (when gamma) "fractional",
    plus the largest pathwise norms of both fields.
    """
    n = max(1, int(round(T / h)))
    lags = _dyadic_lags(n, lag_exponents)
    sim = ConvolutionSimulator(model, op, b, h, n)

    weights = None
    if gamma is not None and gamma > 0.0:
        if not model.analytic:
            raise ValueError("fractional powers need a strictly negative spectrum")
        weights = (-model.eigenvalues) ** gamma

    sums = np.zeros(len(lags))
    counts = np.zeros(len(lags))
    sums_frac = np.zeros(len(lags))
    max_raw = 0.0
    max_frac = 0.0

    for idxs in _batched_indices(paths, batch):
        dw = increment_batch(q, h, n, idxs)
        w = sim.run(dw)
        max_raw = max(max_raw, float(np.max(np.linalg.norm(w, axis=1))))
        if weights is not None:
            max_frac = max(max_frac, float(np.max(np.linalg.norm(w * weights[None, :, None], axis=1))))
        for i, lag in enumerate(lags):
            anchors = np.arange(0, n + 1 - lag, t_stride)
            diff = w[anchors + lag] - w[anchors]
            sums[i] += float(np.sum(diff**2))
            counts[i] += diff.shape[0] * diff.shape[2]
            if weights is not None:
                sums_frac[i] += float(np.sum((diff * weights[None, :, None]) ** 2))

    out = {
        "raw": holder_from_structure(lags * h, sums / counts),
        "max_norm_raw": max_raw,
    }
    if weights is not None:
        out["fractional"] = holder_from_structure(lags * h, sums_frac / counts)
        out["max_norm_fractional"] = max_frac
    return out
