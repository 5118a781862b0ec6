"""Diagonal spectral models of the generator and the operator calculus on it.

Everything acts in a fixed eigenbasis of an N-dimensional truncation of the
state space, so the semigroup, resolvent, Yosida approximant and fractional
powers are all exact per mode.  Time and history quadrature elsewhere is then
the only source of discretization error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import pi

import numpy as np

__all__ = [
    "SpectralModel",
    "DenseOperator",
    "dirichlet_laplacian",
    "semigroup_apply",
    "resolvent_apply",
    "yosida_generator",
    "fractional_power_apply",
    "operator_norm",
    "as_matrix",
]

_NORM_TOL = 1e-10
_NORM_MAX_ITER = 10_000


@dataclass(frozen=True)
class SpectralModel:
    """Generator A = diag(a_1, ..., a_N), each a_k in units of 1/time."""

    eigenvalues: np.ndarray
    label: str = ""

    def __post_init__(self):
        ev = np.atleast_1d(np.asarray(self.eigenvalues, dtype=float)).copy()
        if ev.ndim != 1 or ev.size < 1:
            raise ValueError("eigenvalues must be a nonempty 1-D sequence")
        if not np.all(np.isfinite(ev)):
            raise ValueError("eigenvalues must be finite")
        ev.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    @property
    def analytic(self) -> bool:
        """True when the spectrum is strictly negative."""
        return bool(np.all(self.eigenvalues < 0.0))

    def __repr__(self):
        tag = self.label or "model"
        return f"SpectralModel({tag}, dim={self.dim})"


def dirichlet_laplacian(dim: int) -> SpectralModel:
    """Default test generator: a_k = -(k*pi)^2, k = 1..dim."""
    k = np.arange(1, dim + 1, dtype=float)
    return SpectralModel(-((k * pi) ** 2), label=f"dirichlet({dim})")


def _check_vector(model: SpectralModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != model.dim:
        raise ValueError(f"vector has leading dimension {x.shape[0]}, expected {model.dim}")
    return x


def semigroup_apply(model: SpectralModel, t: float, x) -> np.ndarray:
    """Apply e^{tA} to x.  Exact per mode; t = 0 returns x unchanged."""
    if t < 0.0:
        raise ValueError(f"semigroup is only defined for t >= 0, got t={t}")
    x = _check_vector(model, x)
    if t == 0.0:
        return x.copy()
    scale = np.exp(model.eigenvalues * t)
    return scale * x if x.ndim == 1 else scale[:, None] * x


def resolvent_apply(model: SpectralModel, n: float, x) -> np.ndarray:
    """Apply R(n, A) = (nI - A)^{-1} to x, n in the resolvent set."""
    x = _check_vector(model, x)
    denom = n - model.eigenvalues
    if np.any(denom == 0.0):
        raise ValueError(f"n={n} is an eigenvalue of A, resolvent is singular")
    return x / denom if x.ndim == 1 else x / denom[:, None]


def yosida_generator(model: SpectralModel, n: float) -> SpectralModel:
    """Bounded approximant A_n = n^2 R(n, A) - nI = diag(n a_k / (n - a_k)).

    Requires n > 0 and n above the spectrum, which keeps every approximant
    eigenvalue on the same side of zero as the original.
    """
    top = float(np.max(model.eigenvalues))
    if not (n > 0.0 and n > top):
        raise ValueError(f"Yosida approximant needs n > max eigenvalue ({top:g}) and n > 0, got n={n}")
    ev = n * model.eigenvalues / (n - model.eigenvalues)
    return SpectralModel(ev, label=f"{model.label}|yosida(n={n:g})")


def fractional_power_apply(model: SpectralModel, gamma: float, x) -> np.ndarray:
    """Apply (-A)^gamma = diag((-a_k)^gamma), defined for strictly negative spectra."""
    if not model.analytic:
        raise ValueError("fractional powers need a strictly negative spectrum")
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    x = _check_vector(model, x)
    scale = (-model.eigenvalues) ** gamma
    return scale * x if x.ndim == 1 else scale[:, None] * x


def as_matrix(b) -> np.ndarray:
    """Coerce a DenseOperator or array-like to a 2-D float array."""
    mat = np.asarray(getattr(b, "entries", b), dtype=float)
    if mat.ndim != 2:
        raise ValueError(f"expected a matrix, got array of ndim {mat.ndim}")
    return mat


def operator_norm(mat, tol: float = _NORM_TOL, max_iter: int = _NORM_MAX_ITER) -> float:
    """Largest singular value by power iteration on A^T A.

    Deterministic start vector (fixed counter-based stream) so repeated runs
    agree bit for bit.
    """
    a = as_matrix(mat)
    if not np.all(np.isfinite(a)):
        raise ValueError("operator entries must be finite")
    if a.size == 0 or not a.any():
        return 0.0
    rng = np.random.Generator(np.random.Philox(key=0xD1A6_0000))
    v = rng.standard_normal(a.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = a @ v
        v_new = a.T @ w
        norm = np.linalg.norm(v_new)
        if norm == 0.0:
            # v landed in the kernel of A^T A; restart from a shifted vector
            v = rng.standard_normal(a.shape[1])
            v /= np.linalg.norm(v)
            continue
        sigma_new = float(np.linalg.norm(w))
        v = v_new / norm
        if abs(sigma_new - sigma) <= tol * max(1.0, sigma_new):
            return sigma_new
        sigma = sigma_new
    return sigma


@dataclass(frozen=True)
class DenseOperator:
    """A bounded operator stored densely, with its operator norm on demand."""

    entries: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.entries, dtype=float).copy()
        if mat.ndim != 2:
            raise ValueError("entries must be a 2-D array")
        if not np.all(np.isfinite(mat)):
            raise ValueError("entries must be finite")
        mat.setflags(write=False)
        object.__setattr__(self, "entries", mat)

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    @cached_property
    def norm(self) -> float:
        return operator_norm(self.entries)

    def __matmul__(self, other):
        return self.entries @ np.asarray(getattr(other, "entries", other), dtype=float)
