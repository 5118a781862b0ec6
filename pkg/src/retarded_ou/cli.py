"""Experiment runner.

A single JSON document configures each run; subcommands pick the experiment
kind.  Reports are written atomically (temp files renamed into place) and two
runs with the same config and seed produce byte-identical files: no
timestamps, fixed float rendering, deterministic reductions.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import analysis, convolution, deterministic, green, noise, spectral
from .convolution import (
    ConvolutionConfig,
    ConvolutionSimulator,
    MOMENT_WINDOW,
    REGULARITY_WINDOW,
    factorization_identity_value,
    mild_solution,
    trace_condition,
    trajectories_to_csv,
)
from .delay import DelayOperator, Segment
from .deterministic import ForcingFunction
from .noise import QWiener, increment_batch, sample_noise
from .spectral import SpectralModel

KINDS = ("green", "simulate", "regularity", "bdg", "yosida", "deterministic")

__all__ = ["ConfigError", "load_config", "run_experiment", "main", "KINDS"]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _need(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise ConfigError(f"missing field {key!r} in {where}")
    return cfg[key]


def _build_matrix(spec, dim: int, where: str) -> np.ndarray:
    if spec is None or spec == "zero":
        return np.zeros((dim, dim))
    if spec == "identity":
        return np.eye(dim)
    if isinstance(spec, (int, float)):
        return float(spec) * np.eye(dim)
    if isinstance(spec, list):
        mat = np.asarray(spec, dtype=float)
        if mat.shape != (dim, dim):
            raise ConfigError(f"{where}: explicit matrix must be {dim}x{dim}")
        return mat
    if isinstance(spec, dict):
        rule = _need(spec, "rule", where)
        if rule == "scaled_identity":
            return float(_need(spec, "value", where)) * np.eye(dim)
        if rule == "banded":
            mat = float(spec.get("diag", 0.0)) * np.eye(dim)
            mat += float(spec.get("upper", 0.0)) * np.eye(dim, k=1)
            mat += float(spec.get("lower", 0.0)) * np.eye(dim, k=-1)
            return mat
        raise ConfigError(f"{where}: unknown matrix rule {rule!r}")
    raise ConfigError(f"{where}: cannot interpret matrix spec {spec!r}")


def _build_eigenvalues(spec, dim: int) -> np.ndarray:
    if spec == "dirichlet":
        k = np.arange(1, dim + 1, dtype=float)
        return -((k * math.pi) ** 2)
    if spec == "zero":
        return np.zeros(dim)
    if isinstance(spec, (int, float)):
        return np.full(dim, float(spec))
    if isinstance(spec, list):
        ev = np.asarray(spec, dtype=float)
        if ev.size != dim:
            raise ConfigError("eigenvalue list length must equal the model dimension")
        return ev
    if isinstance(spec, dict):
        rule = _need(spec, "rule", "model.eigenvalues")
        if rule == "index_squared":
            k = np.arange(1, dim + 1, dtype=float)
            return -float(spec.get("scale", 1.0)) * k**2
        if rule == "constant":
            return np.full(dim, float(_need(spec, "value", "model.eigenvalues")))
        raise ConfigError(f"unknown eigenvalue rule {rule!r}")
    raise ConfigError(f"cannot interpret eigenvalue spec {spec!r}")


def _build_lambdas(spec, dim: int) -> np.ndarray:
    if spec == "inverse_square":
        k = np.arange(1, dim + 1, dtype=float)
        return k**-2.0
    if isinstance(spec, (int, float)):
        return np.full(dim, float(spec))
    if isinstance(spec, list):
        lam = np.asarray(spec, dtype=float)
        if lam.size != dim:
            raise ConfigError("lambda list length must equal the model dimension")
        return lam
    if isinstance(spec, dict):
        rule = _need(spec, "rule", "noise.lambdas")
        if rule == "constant":
            return np.full(dim, float(_need(spec, "value", "noise.lambdas")))
        if rule == "geometric":
            ratio = float(_need(spec, "ratio", "noise.lambdas"))
            return ratio ** np.arange(dim, dtype=float)
        raise ConfigError(f"unknown lambda rule {rule!r}")
    raise ConfigError(f"cannot interpret lambda spec {spec!r}")


def _build_kernel(spec, where: str):
    if spec is None or spec == "zero":
        return None
    if isinstance(spec, dict):
        rule = _need(spec, "rule", where)
        if rule == "constant":
            value = float(_need(spec, "value", where))
            return lambda theta: value
        if rule == "linear":
            return lambda theta: theta
        if rule == "exp":
            rate = float(spec.get("rate", 1.0))
            return lambda theta: math.exp(rate * theta)
        raise ConfigError(f"{where}: unknown kernel rule {rule!r}")
    raise ConfigError(f"{where}: cannot interpret kernel spec {spec!r}")


def _build_model(cfg: dict) -> SpectralModel:
    mc = _need(cfg, "model", "config")
    dim = int(_need(mc, "dim", "model"))
    if dim < 1:
        raise ConfigError("model.dim must be positive")
    ev = _build_eigenvalues(_need(mc, "eigenvalues", "model"), dim)
    return SpectralModel(ev, label=str(mc.get("label", "")))


def _build_delay(cfg: dict, dim: int) -> DelayOperator | None:
    dc = cfg.get("delay")
    if dc is None:
        return None
    r = float(_need(dc, "r", "delay"))
    m_nodes = int(_need(dc, "m_nodes", "delay"))
    terms = []
    for i, tc in enumerate(dc.get("terms", [])):
        where = f"delay.terms[{i}]"
        terms.append((float(_need(tc, "delay", where)), _build_matrix(_need(tc, "matrix", where), dim, where)))
    kernel = _build_kernel(dc.get("kernel"), "delay.kernel")
    b0 = None
    if kernel is not None:
        b0 = _build_matrix(dc.get("b0", "identity"), dim, "delay.b0")
    if not terms and kernel is None:
        return None
    try:
        return DelayOperator(r, m_nodes, terms, kernel=kernel, b0=b0, dim=dim)
    except ValueError as exc:
        raise ConfigError(f"delay: {exc}") from exc


def _build_noise(cfg: dict, dim: int, seed_override) -> tuple[QWiener, int]:
    nc = _need(cfg, "noise", "config")
    lam = _build_lambdas(_need(nc, "lambdas", "noise"), dim)
    seed = int(nc.get("seed", 0)) if seed_override is None else int(seed_override)
    paths = int(nc.get("paths", 1000))
    if paths < 1:
        raise ConfigError("noise.paths must be positive")
    try:
        return QWiener(lam, seed=seed), paths
    except ValueError as exc:
        raise ConfigError(f"noise: {exc}") from exc


def _validate_window(alpha: float, p: float, purpose: str):
    try:
        ConvolutionConfig(alpha=alpha, p=p, purpose=purpose)
    except ValueError as exc:
        raise ConfigError(
            f"{exc}; admissible windows are {REGULARITY_WINDOW} (regularity) "
            f"and {MOMENT_WINDOW} (moment bound)"
        ) from exc


def _check(name: str, passed: bool, detail: dict) -> dict:
    return {"name": name, "passed": bool(passed), "detail": detail}


def _to_py(obj):
    if isinstance(obj, dict):
        return {k: _to_py(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_py(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_to_py(v) for v in obj]
    return obj


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


# ----------------------------------------------------------------- experiments


def _mos_table(model, op, T, M):
    if op is None:
        op = DelayOperator(T, M, terms=[(0.0, np.zeros((model.dim, model.dim)))], dim=model.dim)
        # zero operator at lag zero is F = 0 with the grid geometry of [0, T]
    return green.green_method_of_steps(model, op, T, M), op


def _run_green(cfg: dict, model, op, q, paths) -> tuple[dict, dict]:
    num = cfg.get("numerics", {})
    T = float(num.get("T", 2.0))
    M = int(num.get("M", 100))
    m_max = int(num.get("m_max", 10))
    g, op = _mos_table(model, op, T, M)
    vol = green.green_volterra_series(model, op, T, M, m_max)

    ident = float(np.max(np.abs(g.mats[0] - np.eye(model.dim))))
    neg = float(np.max(np.abs(g.at(-0.5))))
    diff = float(np.max(np.abs(g.mats - vol.table.mats)))
    tol = vol.tail_bound + 5.0 * g.h
    c, gamma = green.growth_fit(g)
    norms = g.norms()
    envelope_ok = bool(np.all(norms <= 1.05 * c * np.exp(gamma * g.t_grid) + 1e-12))

    frac = float(num.get("qs_time_fraction", 0.4))
    s_qs = round(frac * T / g.h) * g.h
    probe = np.ones(model.dim) / math.sqrt(model.dim)
    residuals = []
    for lvl in range(3):
        m_l = M * 2**lvl
        op_l = op.with_resolution(m_l)
        g_l = green.green_method_of_steps(model, op_l, T, m_l)
        residuals.append(green.quasi_semigroup_residual(g_l, op_l, s_qs, s_qs, probe))
    ratios = [residuals[i] / residuals[i + 1] for i in range(2) if residuals[i + 1] > 0]
    halving = bool(ratios) and all(1.6 <= rho <= 2.4 for rho in ratios)

    checks = [
        _check("green_identity_at_zero", ident == 0.0 and neg == 0.0,
               {"identity_defect": ident, "negative_time": neg}),
        _check("cross_method_agreement", diff <= tol,
               {"max_difference": diff, "tolerance": tol, "tail_bound": vol.tail_bound}),
        _check("growth_envelope", envelope_ok, {"c": c, "gamma": gamma}),
        _check("quasi_semigroup_residual_halving", halving,
               {"residuals": residuals, "ratios": ratios, "s": s_qs}),
    ]
    report = {
        "table": {"h": g.h, "t_end": g.t_end, "dim": g.dim},
        "volterra": {"kappa": vol.kappa, "tail_bound": vol.tail_bound,
                     "term_sup_norms": list(vol.term_sup_norms)},
        "growth_fit": {"c": c, "gamma": gamma},
        "quasi_semigroup": {"residuals": residuals, "ratios": ratios},
    }
    return report, {"green_table.csv": lambda p: green.green_table_to_csv(g, p)}, checks


def _run_simulate(cfg: dict, model, op, q, paths) -> tuple[dict, dict]:
    num = cfg.get("numerics", {})
    T = float(num.get("T", 1.0))
    M = int(num.get("M", 64))
    alpha = float(num.get("alpha", 0.3))
    batch = int(num.get("batch", 1024))
    g, op = _mos_table(model, op, T, M)
    h = g.h
    n = int(round(T / h))
    b = _build_matrix(cfg.get("diffusion", "identity"), model.dim, "diffusion")

    sim = ConvolutionSimulator(model, op, b, h, n)
    finals = []
    start = 0
    while start < paths:
        idxs = np.arange(start, min(start + batch, paths))
        dw = increment_batch(q, h, n, idxs)
        w = sim.run(dw)
        finals.append(np.sum(w[-1] ** 2, axis=0))
        start += batch
    finals = np.concatenate(finals)
    mc = float(np.mean(finals))
    se = float(np.std(finals, ddof=1) / math.sqrt(finals.size))
    tr = trace_condition(g, b, q, alpha, n * h)
    iso_ok = abs(mc - tr.trace) <= 4.0 * se

    cov_paths = min(paths, int(num.get("covariance_paths", 2000)))
    grid = np.arange(n + 1) * h
    ensemble = [sample_noise(q, grid, i) for i in range(max(cov_paths, 1000))]
    cov = noise.covariance_check(q, ensemble, grid[n // 2], grid[n])

    ic = cfg.get("initial", {})
    psi0 = np.full(model.dim, float(ic.get("psi0", 0.0)))
    psi1 = Segment.constant(op.r, op.m_nodes, np.full(model.dim, float(ic.get("psi1", 0.0))))
    keep = int(cfg.get("output", {}).get("trajectories", 4))
    trajs = {}
    for i in range(keep):
        path = sample_noise(q, grid, i)
        trajs[i] = mild_solution(g, op, psi0, psi1, b, path)

    checks = [
        _check("ito_isometry", iso_ok,
               {"monte_carlo": mc, "stderr": se, "trace": tr.trace, "sigmas": 4.0}),
        _check("noise_covariance", cov.passed,
               {"max_standardized_deviation": cov.max_standardized_deviation,
                "paths": cov.n_paths}),
    ]
    report = {
        "isometry": {"monte_carlo": mc, "stderr": se, "trace": tr.trace,
                     "weighted_trace": tr.weighted, "paths": paths},
        "covariance": {"max_standardized_deviation": cov.max_standardized_deviation},
    }
    return report, {"trajectories.csv": lambda p: trajectories_to_csv(trajs, grid, p)}, checks


def _run_regularity(cfg: dict, model, op, q, paths) -> tuple[dict, dict]:
    num = cfg.get("numerics", {})
    T = float(num.get("T", 1.0))
    alpha = float(num.get("alpha", 0.3))
    p = float(num.get("p", 4.0))
    gamma = float(num.get("gamma", 0.15))
    _validate_window(alpha, p, "regularity")
    b = _build_matrix(cfg.get("diffusion", "identity"), model.dim, "diffusion")
    if op is not None:
        h = op.r / op.m_nodes
    else:
        h = T / int(num.get("M", 4096))
    lag_lo = int(num.get("lag_lo", 0))
    lag_hi = int(num.get("lag_hi", 7))
    stride = int(num.get("t_stride", 8))
    batch = int(num.get("batch", 256))

    study = analysis.convolution_regularity_study(
        model, op, b, q, T, h, paths,
        lag_exponents=range(lag_lo, lag_hi), gamma=gamma, t_stride=stride, batch=batch)
    raw = study["raw"]
    frac = study["fractional"]

    control_q = QWiener(np.ones(1), seed=q.seed + 1)
    control = analysis.convolution_regularity_study(
        SpectralModel(np.zeros(1), label="control"), None, np.eye(1), control_q,
        T, h, paths, lag_exponents=range(lag_lo, lag_hi), t_stride=stride, batch=4096)["raw"]

    window = tuple(num.get("holder_window", [0.40, 0.55]))
    cwindow = tuple(num.get("control_window", [0.45, 0.55]))
    fwindow = tuple(num.get("fractional_window", [0.25, 0.50]))
    band = frac.band
    checks = [
        _check("holder_window", window[0] <= raw.estimate <= window[1],
               {"estimate": raw.estimate, "window": list(window)}),
        _check("brownian_control_window", cwindow[0] <= control.estimate <= cwindow[1],
               {"estimate": control.estimate, "window": list(cwindow)}),
        _check("fractional_band", band[1] >= fwindow[0] and band[0] <= fwindow[1],
               {"band": list(band), "window": list(fwindow)}),
        _check("fractional_norm_finite",
               study["max_norm_fractional"] < 10.0 * study["max_norm_raw"],
               {"max_norm_raw": study["max_norm_raw"],
                "max_norm_fractional": study["max_norm_fractional"]}),
    ]
    report = {
        "holder": raw.to_json(),
        "fractional": frac.to_json(),
        "control": control.to_json(),
        "gamma": gamma,
        "max_norm_raw": study["max_norm_raw"],
        "max_norm_fractional": study["max_norm_fractional"],
    }

    def write_structure(path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("scale,raw,fractional\n")
            for s, v, vf in zip(raw.scales, raw.structure, frac.structure):
                fh.write(f"{s:.17g},{v:.17g},{vf:.17g}\n")

    return report, {"structure_function.csv": write_structure}, checks


def _run_bdg(cfg: dict, model, op, q, paths) -> tuple[dict, dict]:
    num = cfg.get("numerics", {})
    T = float(num.get("T", 1.0))
    m_list = [int(m) for m in num.get("m_list", [32, 64, 128])]
    p_list = [float(p) for p in num.get("p_list", [4.0, 6.0])]
    alphas = {4.0: 0.2, 6.0: 0.15}
    b = _build_matrix(cfg.get("diffusion", "identity"), model.dim, "diffusion")

    reports = {}
    checks = []
    for p in p_list:
        alpha = float(num.get("alpha", alphas.get(p, (p - 2.0) / (4.0 * p))))
        _validate_window(alpha, p, "bdg")
        rep = analysis.bdg_ratio(model, op, b, q, p, T, paths, m_list)
        reports[f"constant_p{p:g}"] = rep.to_json()
        checks.append(_check(f"ratio_stable_p{p:g}", rep.stable and np.isfinite(rep.ratio),
                             {"ratios": list(rep.ratios)}))
        rep2 = analysis.bdg_ratio(model, op, 2.0 * b, q, p, T, paths, m_list)
        same = np.isclose(rep.ratio, rep2.ratio, rtol=1e-9) if rep.ratio else rep2.ratio == 0.0
        checks.append(_check(f"scale_invariance_p{p:g}", bool(same),
                             {"ratio": rep.ratio, "ratio_scaled": rep2.ratio}))

    adapted = analysis.AdaptedProcess(
        base=b, rule=lambda t, w: 1.0 + np.minimum(1.0, np.sum(w**2, axis=0)), blocks=8)
    p_ad = p_list[0]
    rep_ad = analysis.bdg_ratio(model, op, adapted, q, p_ad, T, paths, m_list)
    reports[f"adapted_p{p_ad:g}"] = rep_ad.to_json()
    checks.append(_check("ratio_stable_adapted", rep_ad.stable and np.isfinite(rep_ad.ratio),
                         {"ratios": list(rep_ad.ratios)}))

    def write_ratios(path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("case,grid,ratio\n")
            for case in sorted(reports):
                for m, rho in zip(reports[case]["grids"], reports[case]["ratios"]):
                    fh.write(f"{case},{m},{rho:.17g}\n")

    return {"cases": reports}, {"bdg_ratios.csv": write_ratios}, checks


def _run_yosida(cfg: dict, model, op, q, paths) -> tuple[dict, dict]:
    num = cfg.get("numerics", {})
    T = float(num.get("T", 1.0))
    M = int(num.get("M", 64))
    n_list = [float(nv) for nv in num.get("n_list", [10.0, 100.0, 1000.0, 10000.0])]
    p = float(num.get("p", 4.0))
    moment_paths = int(num.get("moment_paths", min(paths, 1000)))
    moment_n = [float(nv) for nv in num.get("moment_n_list", n_list[:3])]
    b = _build_matrix(cfg.get("diffusion", "identity"), model.dim, "diffusion")

    g, op = _mos_table(model, op, T, M)
    base_gamma = green.growth_fit(g)[1]
    defects = []
    gammas = []
    for nv in n_list:
        res = green.yosida_green(model, op, nv, T, M, base=g)
        defects.append(res.defects)
        gammas.append(green.growth_fit(res.table)[1])
    defects = np.asarray(defects)
    decreasing = bool(np.all(defects[1:] < defects[:-1]))

    stable_n = None
    scale = max(abs(base_gamma), 0.1)
    for nv, gam in zip(n_list, gammas):
        if abs(gam - base_gamma) <= 0.05 * scale:
            stable_n = nv
            break

    table = analysis.yosida_moment_convergence(model, op, b, q, p, T, M, moment_n, moment_paths)
    checks = [
        _check("green_defect_decreasing", decreasing,
               {"n_list": n_list, "max_defects": [float(d.max()) for d in defects]}),
        _check("moment_defect_decreasing", table.monotone(),
               {"n_list": list(table.n_list), "values": list(table.values)}),
    ]
    report = {
        "green_defects": {"n_list": n_list, "per_probe": defects.tolist(),
                          "gammas": gammas, "gamma_base": base_gamma,
                          "gamma_stable_n": stable_n},
        "moments": {"n_list": list(table.n_list), "values": list(table.values),
                    "stderrs": list(table.stderrs), "p": p},
    }

    def write_defects(path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("n,probe,defect\n")
            for nv, row in zip(n_list, defects):
                for i, d in enumerate(row):
                    fh.write(f"{nv:.17g},{i},{d:.17g}\n")

    return report, {"yosida_defects.csv": write_defects}, checks


def _run_deterministic(cfg: dict, model, op, q, paths) -> tuple[dict, dict]:
    num = cfg.get("numerics", {})
    T = float(num.get("T", 2.0))
    M = int(num.get("M", 64))
    if op is None:
        raise ConfigError("deterministic experiments need a delay block")
    ic = cfg.get("initial", {})
    phi0 = np.full(model.dim, float(ic.get("psi0", 1.0)))
    phi1 = Segment.constant(op.r, op.m_nodes, np.full(model.dim, float(ic.get("psi1", 1.0))))
    f = ForcingFunction.zero(model.dim)

    sols = []
    for lvl in range(3):
        sols.append(deterministic.solve_delay_classical(model, op, f, (phi0, phi1), T, M * 2**lvl))
    orders = [math.log2(a.residual_max / b.residual_max)
              for a, b in zip(sols[:-1], sols[1:]) if b.residual_max > 0]
    order_ok = bool(orders) and all(o >= 0.9 for o in orders)

    expected = ic.get("expected_end")
    end_ok = True
    end_detail = {}
    if expected is not None:
        target = np.full(model.dim, float(expected))
        h_fine = T / (M * 4)
        err = float(np.linalg.norm(sols[-1].values[-1] - target))
        end_ok = err <= 5.0 * h_fine
        end_detail = {"error": err, "tolerance": 5.0 * h_fine}

    b = _build_matrix(cfg.get("diffusion", "identity"), model.dim, "diffusion")
    idrep = deterministic.integrated_identity_refinement(model, op, b, q, T / 2.0, M, 3)
    eq_seq = [r.defect_equation for r in idrep]
    cv_seq = [r.defect_convolution for r in idrep]
    identity_ok = all(a > b for a, b in zip(eq_seq[:-1], eq_seq[1:])) and \
        all(a > b for a, b in zip(cv_seq[:-1], cv_seq[1:]))

    checks = [
        _check("classical_residual_order", order_ok,
               {"orders": orders, "residuals": [s.residual_max for s in sols]}),
        _check("integrated_identity_refinement", identity_ok,
               {"equation_defects": eq_seq, "convolution_defects": cv_seq}),
    ]
    if expected is not None:
        checks.append(_check("classical_end_value", end_ok, end_detail))

    sol = sols[0]
    report = {
        "classical": {"residual_max": [s.residual_max for s in sols],
                      "orders": orders,
                      "contraction_at_r": sol.contraction_at_r,
                      "delta_star": sol.delta_star,
                      "compatibility_norm": sol.compatibility_norm},
        "integrated_identity": {"h": [r.h for r in idrep],
                                "equation_defects": eq_seq,
                                "convolution_defects": cv_seq},
    }

    def write_solution(path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,mode,value\n")
            for t, row in zip(sol.t_grid, sol.values):
                for mode, value in enumerate(row):
                    fh.write(f"{t:.17g},{mode},{value:.17g}\n")

    return report, {"classical_solution.csv": write_solution}, checks


_RUNNERS = {
    "green": _run_green,
    "simulate": _run_simulate,
    "regularity": _run_regularity,
    "bdg": _run_bdg,
    "yosida": _run_yosida,
    "deterministic": _run_deterministic,
}


def run_experiment(cfg: dict, out_dir, kind: str | None = None, seed_override=None):
    """Validate, run and atomically write one experiment.

    Returns (exit_code, report_dict); exit code 0 means every check passed.
    """
    kind = kind or cfg.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; choose one of {', '.join(KINDS)}")
    model = _build_model(cfg)
    op = _build_delay(cfg, model.dim)
    q, paths = _build_noise(cfg, model.dim, seed_override)
    if op is not None:
        num = cfg.get("numerics", {})
        t_horizon = float(num.get("T", 1.0))
        h = op.r / op.m_nodes
        if abs(round(op.r / h) * h - op.r) > 1e-9 * op.r:
            raise ConfigError("delay grid must divide r")
        del t_horizon

    report_body, csv_writers, checks = _RUNNERS[kind](cfg, model, op, q, paths)
    report = {
        "kind": kind,
        "config": _to_py(cfg),
        "seed": q.seed,
        "results": _to_py(report_body),
        "paper_checks": _to_py(checks),
    }
    payload = json.dumps(report, indent=2, sort_keys=True) + "\n"

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out, prefix=".tmp-"))
    try:
        (tmp / "report.json").write_text(payload, encoding="utf-8")
        for name, writer in csv_writers.items():
            writer(tmp / name)
        for name in ["report.json", *csv_writers]:
            os.replace(tmp / name, out / name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)

    failed = [c["name"] for c in checks if not c["passed"]]
    return (0 if not failed else 1), report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="retarded-ou",
        description="Delay Green-operator and stochastic-convolution experiments")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run the {kind} experiment")
        sp.add_argument("--config", required=True, help="JSON experiment configuration")
        sp.add_argument("--out", required=True, help="output directory for report files")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        code, report = run_experiment(cfg, args.out, kind=args.kind, seed_override=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    for check in report["paper_checks"]:
        status = "pass" if check["passed"] else "FAIL"
        print(f"[{status}] {check['name']}")
    if code != 0:
        failed = ", ".join(c["name"] for c in report["paper_checks"] if not c["passed"])
        print(f"failed checks: {failed}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
