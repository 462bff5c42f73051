"""
Multi-run studies built on ``scheme.run``.

Every study returns an ExperimentReport whose per-run entries are keyed by
deterministic run ids; assembly walks the ids in sorted order so the JSON
output does not depend on execution order.  Runs inside a study execute on
a thread pool capped by the ``KYMO_THREADS`` environment variable
(default 1, i.e. sequential).
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .audit import check_duality, check_entropy, check_norm_budgets
from .errors import InsufficientPoints, MMSInconsistent
from .grid import GridSpec
from .scheme import InitSpec, SimConfig, run

__all__ = [
    "ExperimentReport",
    "fit_loglog",
    "epsilon_sweep",
    "constant_state_gap",
    "refinement_order",
    "mms_problem",
    "regularity_budget_family",
    "critical_mass_probe",
    "halving_study",
]

UNRELIABLE_RESIDUAL = 0.2


@dataclass
class ExperimentReport:
    kind: str
    inputs: dict
    runs: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    status: str = "PASS"
    thresholds: dict = field(default_factory=dict)
    # RunResult per run id; kept in memory for artifact writers, never serialized
    results: dict = field(default_factory=dict, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "inputs": self.inputs,
            "runs": {k: self.runs[k] for k in sorted(self.runs)},
            "fits": self.fits,
            "status": self.status,
            "thresholds": self.thresholds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("KYMO_THREADS", "1")))
    except ValueError:
        return 1


def _run_all(cfgs: dict, audit=True) -> dict:
    ids = sorted(cfgs)
    workers = min(max_workers(), len(ids)) or 1
    if workers == 1:
        return {rid: run(cfgs[rid], audit=audit) for rid in ids}
    with ThreadPoolExecutor(workers) as pool:
        futs = {rid: pool.submit(run, cfgs[rid], None, None, audit) for rid in ids}
        return {rid: futs[rid].result() for rid in ids}


def fit_loglog(x, y):
    """Least-squares slope of log y against log x.

    Returns (slope, intercept, relative residual) where the relative residual
    is ||fit residual|| / ||log y - mean(log y)||, i.e. sqrt(1 - R^2).
    """
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - (slope * lx + icpt)
    spread = np.linalg.norm(ly - ly.mean())
    rel = float(np.linalg.norm(resid) / spread) if spread > 0 else 0.0
    return float(slope), float(icpt), rel


def _time_sum(records, attr):
    return float(sum((r1.t - r0.t) * getattr(r1, attr) for r0, r1 in zip(records[:-1], records[1:])))


# ---------------------------------------------------------------------------
# epsilon -> 0


def constant_state_gap(c: float, epsilon: float, measure: float, T: float) -> float:
    """Closed form of the accumulated w - v gap on the homogeneous state u = c."""
    return measure * T * (c - c / (1 + epsilon * c)) ** 2


def epsilon_sweep(cfg_template: SimConfig, epsilons, slope_threshold: float = 0.9) -> ExperimentReport:
    """G(ε) = Σ Δt (||w - v||² + ||∇(w - v)||²) over audit times, and its log-log slope."""
    eps = [float(e) for e in epsilons]
    if len(eps) < 3:
        raise InsufficientPoints(f"epsilon_sweep needs >= 3 epsilons, got {len(eps)}")
    if cfg_template.tau != 0:
        raise ValueError("epsilon_sweep requires tau = 0")
    if any(b >= a for a, b in zip(eps[:-1], eps[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    if any(e >= cfg_template.epsilon0 for e in eps):
        raise ValueError("all epsilons must lie below epsilon0")
    cfgs = {f"eps_{i:02d}": cfg_template.with_(epsilon=e) for i, e in enumerate(eps)}
    results = _run_all(cfgs)
    report = ExperimentReport(
        "EpsilonSweep",
        {"epsilons": eps, "template": cfg_template.to_dict()},
        thresholds={"min_slope": slope_threshold, "max_relative_residual": UNRELIABLE_RESIDUAL},
        results=results,
    )
    G = []
    for rid in sorted(results):
        recs = results[rid].records
        g = _time_sum(recs, "wv_gap_H1_sq")
        G.append(g)
        report.runs[rid] = {"epsilon": cfgs[rid].epsilon, "G": g,
                            "max_key_residual": results[rid].max_key_residual}
    G = np.asarray(G)
    if np.all(G == 0):
        report.status = "DEGENERATE"
        report.fits = {"slope": None, "relative_residual": None}
        return report
    if np.any(G <= 0):
        report.status = "FAIL"
        report.fits = {"slope": None, "relative_residual": None, "reason": "G vanished for some ε"}
        return report
    slope, icpt, rel = fit_loglog(eps, G)
    report.fits = {"slope": slope, "intercept": icpt, "relative_residual": rel}
    if rel > UNRELIABLE_RESIDUAL:
        report.status = "UNRELIABLE"
    else:
        report.status = "PASS" if slope >= slope_threshold else "FAIL"
    return report


# ---------------------------------------------------------------------------
# order of accuracy


def mms_problem(cfg: SimConfig, exact_u=None, exact_v=None):
    """Manufactured solution and sources for the regularized system.

    Default exact pair: u* = 2 + Π cos(π x_i / L_i) e^{-t},
    v* = 1 + Π cos(π x_i / L_i) e^{-t}; both satisfy the zero-flux condition.
    ``exact_u``/``exact_v`` may be callables (xs, t) -> sympy expression.
    Returns numpy callables (u*, v*, S_u, S_v), each f(*coords, t).
    """
    import sympy as sy

    xs = sy.symbols(f"x0:{cfg.grid.dim}", real=True)
    t = sy.Symbol("t", real=True)
    mode = sy.Integer(1)
    for x, L in zip(xs, cfg.grid.lengths):
        mode *= sy.cos(sy.pi * x / sy.Float(L))
    ue = exact_u(xs, t) if exact_u else 2 + mode * sy.exp(-t)
    ve = exact_v(xs, t) if exact_v else 1 + mode * sy.exp(-t)
    eps = sy.Float(cfg.epsilon)
    a = cfg.motility.symbolic(ve) + eps
    lap = lambda e: sum(sy.diff(e, x, 2) for x in xs)  # noqa: E731
    su = sy.diff(ue, t) - lap(a * ue)
    sv = sy.Float(cfg.tau) * sy.diff(ve, t) - lap(ve) + ve - ue / (1 + eps * ue)
    args = (*xs, t)
    fns = [sy.lambdify(args, e, "numpy") for e in (ue, ve, su, sv)]

    def wrap(fn):
        def f(*a):
            return np.asarray(fn(*a), dtype=float) + 0.0 * a[0]
        return f

    u_fn, v_fn, su_fn, sv_fn = (wrap(f) for f in fns)
    _spot_check(cfg, u_fn, v_fn, su_fn, sv_fn)
    return u_fn, v_fn, su_fn, sv_fn


def _spot_check(cfg, u_fn, v_fn, su_fn, sv_fn, n=5, delta=1e-4, rtol=1e-5):
    """Compare sources with a finite-difference evaluation of the PDE residual."""
    rng = np.random.default_rng(12345)
    dim = cfg.grid.dim
    mot, eps, tau = cfg.motility, cfg.epsilon, cfg.tau
    for _ in range(n):
        x = [rng.uniform(0.2, 0.8) * L for L in cfg.grid.lengths]
        t = rng.uniform(0.0, 1.0)

        def flux(*p):
            return (mot.gamma(v_fn(*p)) + eps) * u_fn(*p)

        def lap(fn):
            total = 0.0
            for i in range(dim):
                e = np.zeros(dim)
                e[i] = delta
                total += (fn(*(np.add(x, e)), t) - 2 * fn(*x, t) + fn(*(np.subtract(x, e)), t)) / delta**2
            return total

        ut = (u_fn(*x, t + delta) - u_fn(*x, t - delta)) / (2 * delta)
        vt = (v_fn(*x, t + delta) - v_fn(*x, t - delta)) / (2 * delta)
        u0, v0 = u_fn(*x, t), v_fn(*x, t)
        su_fd = ut - lap(flux)
        sv_fd = tau * vt - lap(v_fn) + v0 - u0 / (1 + eps * u0)
        scale = 1.0 + abs(float(su_fn(*x, t))) + abs(float(sv_fn(*x, t)))
        err = max(abs(float(su_fn(*x, t)) - float(su_fd)), abs(float(sv_fn(*x, t)) - float(sv_fd)))
        if err > rtol * scale * 1e2:
            raise MMSInconsistent(f"source spot check failed at x={x}, t={t:.3f}: error {err:.3e}")


def _restrict(fine: np.ndarray, coarse_shape) -> np.ndarray:
    """Average fine cells onto a grid coarser by an integer factor per axis."""
    out = fine
    for ax, nc in enumerate(coarse_shape):
        r = out.shape[ax] // nc
        shape = list(out.shape)
        shape[ax:ax + 1] = [nc, r]
        out = out.reshape(shape).mean(axis=ax + 1)
    return out


def _l2(grid: GridSpec, e: np.ndarray) -> float:
    return float(np.sqrt(np.sum(e**2) * grid.cell_volume))


def refinement_order(cfg_template: SimConfig, mode: str, levels, vary: str = "dt",
                     expected: float | None = None, tolerance: float = 0.25,
                     dt_factor: float = 0.5, exact_u=None, exact_v=None) -> ExperimentReport:
    """Observed order of accuracy.

    mode="SelfConvergence": ``vary="dt"`` takes levels as time steps (fixed
    grid), ``vary="h"`` takes levels as cells per axis (fixed dt); errors
    are differences of consecutive levels at T_final.  mode="MMS": levels
    are cells per axis, dt = T / ceil(T / (dt_factor h²)), errors against
    the manufactured solution.  PASS iff the fitted order is within
    ``tolerance`` of the expectation (1 for dt, 2 for h and MMS).
    """
    levels = list(levels)
    if len(levels) < 3:
        raise InsufficientPoints(f"refinement_order needs >= 3 levels, got {len(levels)}")
    T = cfg_template.T_final
    lengths = cfg_template.grid.lengths
    dim = cfg_template.grid.dim
    cfgs = {}
    if mode == "MMS":
        if expected is None:
            expected = 2.0
        probe = cfg_template.with_(grid=GridSpec((levels[0],) * dim, lengths))
        u_fn, v_fn, su_fn, sv_fn = mms_problem(probe, exact_u, exact_v)
        for i, n in enumerate(levels):
            grid = GridSpec((n,) * dim, lengths)
            h = min(grid.h)
            steps = int(math.ceil(T / (dt_factor * h * h)))
            cfgs[f"level_{i:02d}"] = cfg_template.with_(
                grid=grid, dt=T / steps, source_u=su_fn, source_v=sv_fn,
                init_u=InitSpec("Function", {"func": lambda *x: u_fn(*x, 0.0)}),
                init_v=InitSpec("Function", {"func": lambda *x: v_fn(*x, 0.0)}),
            )
    elif mode == "SelfConvergence":
        for i, lev in enumerate(levels):
            if vary == "dt":
                cfgs[f"level_{i:02d}"] = cfg_template.with_(dt=float(lev))
            elif vary == "h":
                cfgs[f"level_{i:02d}"] = cfg_template.with_(grid=GridSpec((int(lev),) * dim, lengths))
            else:
                raise ValueError(f"vary must be 'dt' or 'h', got {vary!r}")
        if expected is None:
            expected = 1.0 if vary == "dt" else 2.0
    else:
        raise ValueError(f"unknown refinement mode {mode!r}")

    results = _run_all(cfgs, audit=False)
    ids = sorted(results)
    report = ExperimentReport(
        "RefinementOrder",
        {"mode": mode, "vary": vary if mode == "SelfConvergence" else "h",
         "levels": [float(x) for x in levels], "template": cfg_template.to_dict()},
        thresholds={"expected_order": expected, "tolerance": tolerance},
        results=results,
    )
    sizes, errors = [], []
    if mode == "MMS":
        for rid in ids:
            res = results[rid]
            grid = res.config.grid
            xs = grid.centers()
            eu = res.final.u.values - u_fn(*xs, res.final.t)
            ev = res.final.v.values - v_fn(*xs, res.final.t)
            err = _l2(grid, eu)
            sizes.append(min(grid.h))
            errors.append(err)
            report.runs[rid] = {"cells": grid.cells[0], "dt": res.config.dt, "error_u": err,
                                "error_v": _l2(grid, ev), "t_final": res.final.t}
    else:
        finals = [results[rid].final for rid in ids]
        for k in range(len(ids) - 1):
            a, b = finals[k], finals[k + 1]
            if vary == "dt":
                diff = a.u.values - b.u.values
                size = results[ids[k]].config.dt
            else:
                diff = a.u.values - _restrict(b.u.values, a.u.grid.shape)
                size = min(a.u.grid.h)
            err = _l2(a.u.grid, diff)
            sizes.append(size)
            errors.append(err)
            report.runs[ids[k]] = {"level": float(levels[k]), "difference_to_next": err}
        report.runs[ids[-1]] = {"level": float(levels[-1])}
    errors = np.asarray(errors)
    if np.all(errors == 0):
        report.status = "DEGENERATE"
        report.fits = {"order": None, "errors": errors.tolist()}
        return report
    if len(errors) < 2 or np.any(errors <= 0):
        report.status = "FAIL"
        report.fits = {"order": None, "errors": errors.tolist()}
        return report
    order, icpt, rel = fit_loglog(sizes, errors)
    ratios = (np.log(errors[:-1] / errors[1:]) / np.log(np.asarray(sizes[:-1]) / np.asarray(sizes[1:]))).tolist()
    report.fits = {"order": order, "relative_residual": rel, "pairwise_orders": ratios,
                   "errors": errors.tolist(), "sizes": list(map(float, sizes))}
    if rel > UNRELIABLE_RESIDUAL:
        report.status = "UNRELIABLE"
    else:
        report.status = "PASS" if abs(order - expected) <= tolerance else "FAIL"
    return report


# ---------------------------------------------------------------------------
# regularity budgets


def regularity_budget_family(cfg_template: SimConfig, meshes, epsilons,
                             stability: float = 3.0) -> ExperimentReport:
    dim = cfg_template.grid.dim
    lengths = cfg_template.grid.lengths
    cfgs = {}
    for i, n in enumerate(meshes):
        for j, e in enumerate(epsilons):
            cfgs[f"N{int(n):04d}_eps{j:02d}"] = cfg_template.with_(
                grid=GridSpec((int(n),) * dim, lengths), epsilon=float(e))
    results = _run_all(cfgs)
    family = {rid: (results[rid].records, cfgs[rid]) for rid in results}
    chk = check_norm_budgets(family, stability)
    report = ExperimentReport(
        "RegularityBudget",
        {"meshes": [int(n) for n in meshes], "epsilons": [float(e) for e in epsilons],
         "template": cfg_template.to_dict()},
        thresholds={"stability_factor": stability},
        results=results,
    )
    for rid in sorted(results):
        report.runs[rid] = {"cells": cfgs[rid].grid.cells[0], "epsilon": cfgs[rid].epsilon,
                            "budgets": chk.detail["budgets"][rid]}
    report.fits = {"ratios": chk.detail["ratios"], "note": chk.detail["note"]}
    report.status = chk.status
    return report


# ---------------------------------------------------------------------------
# qualitative probe


def critical_mass_probe(cfg_template: SimConfig, masses, growth_factor: float = 2.0) -> ExperimentReport:
    """Growth classification of scaled bumps; reports observations only."""
    if cfg_template.init_u.kind != "GaussianBump":
        raise ValueError("critical_mass_probe scales a GaussianBump initial density")
    cfgs = {}
    for i, m in enumerate(masses):
        init = InitSpec("GaussianBump", {**cfg_template.init_u.params, "mass": float(m)})
        cfgs[f"mass_{i:02d}"] = cfg_template.with_(init_u=init)
    results = _run_all(cfgs)
    report = ExperimentReport(
        "CriticalMassProbe",
        {"masses": [float(m) for m in masses], "template": cfg_template.to_dict()},
        thresholds={"growth_factor": growth_factor},
        status="OBSERVED",
        results=results,
    )
    for rid in sorted(results):
        recs = results[rid].records
        max_u = [r.max_u for r in recs]
        F = [r.lyapunov_F for r in recs]
        bounded = max(max_u) <= growth_factor * max_u[0]
        tail = max_u[len(max_u) // 2:]
        entry = {
            "mass": recs[0].mass,
            "t": [r.t for r in recs],
            "max_u": max_u,
            "F": F,
            "classification": "bounded" if bounded else "growing-at-horizon",
            "max_u_monotone_in_second_half": bool(np.all(np.diff(tail) >= 0)),
        }
        if F[0] is not None:
            entry["F_nonincreasing"] = bool(np.all(np.diff(F) <= 1e-12 * (1 + abs(F[0]))))
        report.runs[rid] = entry
    return report


def homogeneous_control(cfg_template: SimConfig, mass: float) -> dict:
    """Run the spatially homogeneous state with the given mass; report drift of u."""
    c = mass / cfg_template.grid.measure
    cfg = cfg_template.with_(init_u=InitSpec("Constant", {"value": c}))
    res = run(cfg)
    drift = max(max(abs(r.max_u - c), abs(r.min_u - c)) for r in res.records)
    return {"value": c, "max_drift": drift}


# ---------------------------------------------------------------------------
# dt-halving pairs for the time-discretization-limited checks


def _violation(records, cfg, check):
    if check == "lyapunov":
        incs = [r1.lyapunov_F - r0.lyapunov_F for r0, r1 in zip(records[:-1], records[1:])]
        return max(max(incs), 0.0)
    if check == "duality":
        return max(-check_duality(records, cfg).worst_margin, 0.0)
    if check == "entropy":
        return max(-check_entropy(records, cfg).worst_margin, 0.0)
    raise ValueError(f"unknown check {check!r}")


def halving_study(cfg: SimConfig, check: str, max_ratio: float = 0.6) -> ExperimentReport:
    """Run at dt and dt/2; the worst per-interval violation must shrink by max_ratio.

    If neither run violates the inequality the study passes with C = 0.
    """
    cfgs = {"dt_0": cfg, "dt_1": cfg.with_(dt=cfg.dt / 2)}
    results = _run_all(cfgs)
    v0 = _violation(results["dt_0"].records, cfg, check)
    v1 = _violation(results["dt_1"].records, cfgs["dt_1"], check)
    if v0 == 0 and v1 == 0:
        ratio, status = 0.0, "PASS"
    elif v0 == 0:
        ratio, status = math.inf, "FAIL"
    else:
        ratio = v1 / v0
        status = "PASS" if ratio <= max_ratio else "FAIL"
    return ExperimentReport(
        "HalvingStudy",
        {"check": check, "dt": cfg.dt, "template": cfg.to_dict()},
        runs={"dt_0": {"dt": cfg.dt, "violation": v0}, "dt_1": {"dt": cfg.dt / 2, "violation": v1}},
        fits={"ratio": ratio, "C": v0 / cfg.dt},
        status=status,
        thresholds={"max_ratio": max_ratio},
        results=results,
    )
