"""Trace-class Q-Wiener sampling on uniform time grids.

Modes share the eigenbasis of the generator, so Q = diag(lambda_1..lambda_N)
and W(t) = sum_i sqrt(lambda_i) B^i_t e_i with independent scalar Brownian
motions B^i.  Every path is drawn from its own counter-based stream keyed by
(master seed, path index), which makes ensembles reproducible and independent
of generation order; the Gaussian draws use numpy's ziggurat on a Philox
generator, fixed here so reruns match bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "QWiener",
    "NoisePath",
    "sample_noise",
    "increment_batch",
    "brownian_bridge_refine",
    "covariance_check",
    "CovarianceReport",
    "noise_to_csv",
]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class QWiener:
    """Covariance spectrum and master seed of the driving noise."""

    lambdas: np.ndarray
    seed: int = 0

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lambdas, dtype=float)).copy()
        if lam.ndim != 1 or lam.size < 1:
            raise ValueError("lambdas must be a nonempty 1-D sequence")
        if np.any(lam < 0.0) or not np.all(np.isfinite(lam)):
            raise ValueError("lambdas must be finite and nonnegative")
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)

    @property
    def dim(self) -> int:
        return self.lambdas.size

    @property
    def trace(self) -> float:
        return float(np.sum(self.lambdas))


def _path_generator(seed: int, path_index: int, stream: int = 0) -> np.random.Generator:
    # Philox key = (seed, path_index) packed into 128 bits; `stream` shifts the
    # key for auxiliary draws such as bridge refinements.
    key = (((seed ^ stream) & _MASK64) << 64) | (path_index & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class NoisePath:
    """One sampled path: cumulative is primary, increments are its differences."""

    t_grid: np.ndarray
    cumulative: np.ndarray
    increments: np.ndarray
    seed: int
    path_index: int

    @property
    def h(self) -> float:
        return float(self.t_grid[1] - self.t_grid[0])

    @property
    def dim(self) -> int:
        return self.cumulative.shape[1]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]


def _check_uniform(t_grid: np.ndarray) -> float:
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 2:
        raise ValueError("t_grid must hold at least two nodes")
    steps = np.diff(t_grid)
    h = steps[0]
    if h <= 0.0 or not np.allclose(steps, h, rtol=1e-9, atol=0.0):
        raise ValueError("t_grid must be uniform with positive step")
    return float(h)


def sample_noise(q: QWiener, t_grid, path_index: int = 0) -> NoisePath:
    """Draw one Q-Wiener path on the grid from stream (q.seed, path_index)."""
    t_grid = np.asarray(t_grid, dtype=float)
    h = _check_uniform(t_grid)
    n = t_grid.size - 1
    gen = _path_generator(q.seed, path_index)
    raw = gen.standard_normal((n, q.dim))
    raw *= np.sqrt(h * q.lambdas)
    cumulative = np.vstack([np.zeros(q.dim), np.cumsum(raw, axis=0)])
    increments = np.diff(cumulative, axis=0)
    return NoisePath(t_grid, cumulative, increments, q.seed, path_index)


def increment_batch(q: QWiener, h: float, n_steps: int, path_indices) -> np.ndarray:
    """Increments for a batch of paths, shape (n_steps, dim, P).

    Column p reproduces sample_noise(q, grid, path_indices[p]).increments.
    """
    scale = np.sqrt(h * q.lambdas)
    out = np.empty((n_steps, q.dim, len(path_indices)))
    for col, idx in enumerate(path_indices):
        gen = _path_generator(q.seed, int(idx))
        raw = gen.standard_normal((n_steps, q.dim))
        raw *= scale
        cum = np.cumsum(raw, axis=0)
        out[1:, :, col] = np.diff(cum, axis=0)
        out[0, :, col] = cum[0]
    return out


def brownian_bridge_refine(path: NoisePath, q: QWiener) -> NoisePath:
    """Halve the step by conditional midpoint insertion, keeping the path fixed
    at the coarse nodes.  The midpoint stream is keyed by the current step
    count so successive refinements stay independent and reproducible."""
    n = path.n_steps
    h = path.h
    gen = _path_generator(path.seed, path.path_index, stream=0xB41D_0000 + n)
    mid_noise = gen.standard_normal((n, path.dim)) * np.sqrt(h / 4.0 * q.lambdas)
    mids = 0.5 * (path.cumulative[:-1] + path.cumulative[1:]) + mid_noise
    fine = np.empty((2 * n + 1, path.dim))
    fine[0::2] = path.cumulative
    fine[1::2] = mids
    t_fine = path.t_grid[0] + np.arange(2 * n + 1) * (h / 2.0)
    return NoisePath(t_fine, fine, np.diff(fine, axis=0), path.seed, path.path_index)


@dataclass(frozen=True)
class CovarianceReport:
    max_standardized_deviation: float
    passed: bool
    n_paths: int


def covariance_check(q: QWiener, paths, s: float, t: float, threshold: float = 4.0) -> CovarianceReport:
    """Compare the sample covariance of (W(s), W(t)) to (s ^ t) diag(lambda).

    Every entry of the stacked 2N x 2N second-moment matrix is standardized by
    its Gaussian sampling error; the report carries the worst deviation and a
    pass verdict at the given sigma threshold.
    """
    paths = list(paths)
    p_count = len(paths)
    if p_count < 1000:
        raise ValueError("covariance check needs an ensemble of at least 1000 paths")
    grid = paths[0].t_grid

    def node(value):
        pos = (value - grid[0]) / paths[0].h
        idx = int(round(pos))
        if not (0 <= idx < grid.size) or abs(pos - idx) > 1e-9:
            raise ValueError(f"time {value} is not a grid node")
        return idx

    ks, kt = node(s), node(t)
    block = np.stack([np.concatenate([p.cumulative[ks], p.cumulative[kt]]) for p in paths])
    sample = block.T @ block / p_count

    lam = q.lambdas
    theory = np.zeros((2 * q.dim, 2 * q.dim))
    theory[: q.dim, : q.dim] = np.diag(min(s, s) * lam)
    theory[q.dim :, q.dim :] = np.diag(min(t, t) * lam)
    theory[: q.dim, q.dim :] = np.diag(min(s, t) * lam)
    theory[q.dim :, : q.dim] = np.diag(min(s, t) * lam)

    var = np.diag(theory)
    entry_var = (np.outer(var, var) + theory**2) / p_count
    se = np.sqrt(entry_var)
    dev = np.zeros_like(sample)
    live = se > 0.0
    dev[live] = (sample[live] - theory[live]) / se[live]
    dead = ~live
    dev[dead] = np.where(sample[dead] == 0.0, 0.0, np.inf)
    worst = float(np.max(np.abs(dev)))
    return CovarianceReport(worst, worst < threshold, p_count)


def noise_to_csv(paths, path) -> None:
    """Rows path,t,mode,value of the cumulative samples."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("path,t,mode,value\n")
        for p in paths:
            for t, row in zip(p.t_grid, p.cumulative):
                for mode, value in enumerate(row):
                    fh.write(f"{p.path_index},{t:.17g},{mode},{value:.17g}\n")
