"""
Time stepping for the regularized local-sensing chemotaxis system

    u_t       = Δ((γ(v) + ε) u)
    τ v_t     = Δv - v + f_ε(u),       f_ε(u) = u / (1 + ε u)
    w - Δw    = u                       (auxiliary Helmholtz lift)

with zero-flux boundaries, on a cell-centered grid.

One step (backward Euler, IMEX splitting):

1. v^{n+1} from f_ε(u^n): (τ/dt + 1 - L) v^{n+1} = (τ/dt) v^n + f_ε(u^n),
   or (1 - L) v^{n+1} = f_ε(u^n) when τ = 0.
2. u^{n+1} with the frozen coefficient a = γ(v^{n+1}) + ε:
   (I - dt L diag(a)) u^{n+1} = u^n.  Substituting z = a u^{n+1} gives the
   SPD system (diag(1/a) - dt L) z = u^n, and u^{n+1} = u^n + dt L z is then
   mass-conservative to rounding independently of the solver residual.
3. w^{n+1} = w^n + (I - L)^{-1}(u^{n+1} - u^n).

Because (I - L)^{-1} L = (I - L)^{-1} - I, steps 2-3 make the discrete
identity (w^{n+1} - w^n)/dt + z = (I - L)^{-1} z hold up to solver error.

For τ = 0 the stored v is kept in sync with the stored u,
v^n = w^n - (I - L)^{-1}[u^n - f_ε(u^n)], so that v^n <= w^n at equal time
levels; the u-trajectory is the same as with the literal ordering above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .elliptic import SolverSettings, SolveStats, solve_shifted, solve_variable
from .errors import ConfigInvalid, PositivityLoss
from .grid import Field, GridSpec, apply_laplacian, integrate
from .motility import MotilitySpec

__all__ = [
    "InitSpec",
    "SimConfig",
    "SimState",
    "RunResult",
    "f_eps",
    "initialize",
    "step_v",
    "step_u",
    "step",
    "key_identity_residual",
    "run",
]

SourceFn = Callable[..., np.ndarray]


@dataclass(frozen=True)
class InitSpec:
    """Initial datum description.

    kinds: ``Constant`` (value), ``GaussianBump`` (center, width, amplitude,
    floor, optional mass to rescale to), ``RandomPositive`` (seed, low,
    high), ``FromFile`` (path to a KSF1 snapshot or a cell CSV), and
    ``Function`` (func: callable of the center coordinates; in-process only).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def build(self, grid: GridSpec, base_dir: Path | None = None) -> np.ndarray:
        p = self.params
        if self.kind == "Constant":
            vals = np.full(grid.shape, float(p.get("value", p.get("c", 0.0))))
        elif self.kind == "GaussianBump":
            xs = grid.centers()
            center = p.get("center", [L / 2 for L in grid.lengths])
            center = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
            width = float(p.get("width", 0.1))
            r2 = sum((x - c) ** 2 for x, c in zip(xs, center))
            vals = float(p.get("floor", 0.0)) + float(p.get("amplitude", 1.0)) * np.exp(
                -r2 / (2 * width**2)
            )
            if "mass" in p:
                vals = vals * (float(p["mass"]) / (vals.sum() * grid.cell_volume))
        elif self.kind == "RandomPositive":
            rng = np.random.default_rng(int(p.get("seed", 0)))
            vals = rng.uniform(float(p.get("low", 0.0)), float(p.get("high", 1.0)), grid.shape)
        elif self.kind == "FromFile":
            from .io import read_field_any

            path = Path(p["path"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            vals = read_field_any(path, grid).values
        elif self.kind == "Function":
            vals = np.broadcast_to(p["func"](*grid.centers()), grid.shape).astype(float)
        else:
            raise ValueError(f"unknown initial-data kind {self.kind!r}")
        return np.array(vals, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **{k: v for k, v in self.params.items() if k != "func"}}


@dataclass(frozen=True)
class SimConfig:
    grid: GridSpec
    motility: MotilitySpec
    tau: float
    epsilon: float
    epsilon0: float
    dt: float
    T_final: float
    init_u: InitSpec
    init_v: InitSpec
    solver: SolverSettings = SolverSettings()
    source_u: SourceFn | None = None
    source_v: SourceFn | None = None
    cadence: int = 1
    snapshot_cadence: int = 0
    outside_theory: bool = False
    base_dir: Path | None = None

    @property
    def K_gamma(self) -> float:
        return self.motility.K_gamma

    @property
    def K_eff(self) -> float:
        return self.motility.K_gamma + self.epsilon0

    @property
    def n_steps(self) -> int:
        if self.T_final <= 0:
            return 0
        return int(math.ceil(self.T_final / self.dt - 1e-9))

    @property
    def mms(self) -> bool:
        return self.source_u is not None or self.source_v is not None

    def structural_violations(self) -> list[str]:
        out = []
        if not self.dt > 0:
            out.append(f"dt must be positive (got {self.dt})")
        if not self.T_final >= 0:
            out.append(f"T_final must be nonnegative (got {self.T_final})")
        if not self.tau >= 0:
            out.append(f"tau must be nonnegative (got {self.tau})")
        if not self.epsilon >= 0:
            out.append(f"epsilon must be nonnegative (got {self.epsilon})")
        if not self.epsilon0 > 0:
            out.append(f"epsilon0 must be positive (got {self.epsilon0})")
        if self.cadence < 1:
            out.append(f"cadence must be >= 1 (got {self.cadence})")
        if self.snapshot_cadence < 0:
            out.append(f"snapshot_cadence must be >= 0 (got {self.snapshot_cadence})")
        return out

    def theory_violations(self) -> list[str]:
        K = self.K_gamma
        out = []
        if self.tau > 0:
            if not self.tau < 1.0 / K:
                out.append(
                    f"tau={self.tau} >= 1/K_gamma={1.0 / K:.6g} violates the standing "
                    "hypothesis 0 <= tau < 1/K_gamma"
                )
            bound = min(1.0, 1.0 / self.tau - K)
            if not 0 < self.epsilon0 < bound:
                out.append(
                    f"epsilon0={self.epsilon0} outside (0, min(1, 1/tau - K_gamma))=(0, {bound:.6g}) "
                    "required by the regularization"
                )
        elif not 0 < self.epsilon0 < 1:
            out.append(f"epsilon0={self.epsilon0} outside (0, 1) required when tau = 0")
        if not 0 < self.epsilon < self.epsilon0:
            out.append(
                f"epsilon={self.epsilon} outside (0, epsilon0)=(0, {self.epsilon0}) "
                "required by the regularization"
            )
        if not self.dt * self.K_eff < 1:
            out.append(
                f"dt*(K_gamma+epsilon0)={self.dt * self.K_eff:.6g} >= 1; the discrete "
                "comparison envelope needs dt*(K_gamma+epsilon0) < 1"
            )
        return out

    def validate(self) -> None:
        problems = self.structural_violations()
        if not self.outside_theory:
            problems += self.theory_violations()
        if problems:
            raise ConfigInvalid(problems)

    def with_(self, **changes) -> SimConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "grid": {"cells": list(self.grid.cells), "lengths": list(self.grid.lengths)},
            "motility": self.motility.to_dict(),
            "tau": self.tau,
            "epsilon": self.epsilon,
            "epsilon0": self.epsilon0,
            "dt": self.dt,
            "T_final": self.T_final,
            "solver": {
                "rel_tolerance": self.solver.rel_tolerance,
                "max_iterations": self.solver.max_iterations,
                "mode": self.solver.mode,
                "preconditioner": self.solver.preconditioner,
            },
            "initial_data": {"u": self.init_u.to_dict(), "v": self.init_v.to_dict()},
            "output": {"cadence": self.cadence, "snapshot_cadence": self.snapshot_cadence},
            "outside_theory": self.outside_theory,
        }


@dataclass(frozen=True)
class SimState:
    t: float
    u: Field
    v: Field
    w: Field
    step_index: int = 0
    coefficient: np.ndarray | None = field(default=None, repr=False, compare=False)
    solver_stats: dict = field(default_factory=dict, compare=False)
    # recorded at initialization, carried along for the audit layer
    K0: float = 0.0


@dataclass
class RunResult:
    config: SimConfig
    snapshots: list
    records: list
    final: SimState
    max_key_residual: float = 0.0
    max_rel_mass_error: float = 0.0
    min_u: float = math.inf
    min_v: float = math.inf
    solver_iterations: int = 0
    solver_max_residual: float = 0.0


def _feps(u: np.ndarray, eps: float) -> np.ndarray:
    return u / (1.0 + eps * u)


def f_eps(u: Field, epsilon: float) -> Field:
    return Field(u.grid, _feps(u.values, epsilon))


def _source(fn, grid, t):
    if fn is None:
        return 0.0
    return np.broadcast_to(fn(*grid.centers(), t), grid.shape)


def _helm(grid, b, settings, x0=None):
    return solve_shifted(grid, b, 1.0, 1.0, settings, x0=x0)


def _tau0_v(u, w, cfg, src_v=0.0):
    """v = (1 - L)^{-1}[f_ε(u) + S_v], computed as w minus a nonnegative lift."""
    gap, stats = _helm(cfg.grid, u - _feps(u, cfg.epsilon) - src_v, cfg.solver)
    return w - gap, stats


def initialize(cfg: SimConfig) -> SimState:
    """Build (u0, v0, w0) and the comparison constant K0 = max (v0 - w0)_+."""
    cfg.validate()
    grid = cfg.grid
    u0 = cfg.init_u.build(grid, cfg.base_dir)
    v0 = cfg.init_v.build(grid, cfg.base_dir)
    problems = []
    if np.any(u0 < 0):
        problems.append(f"u0 must be nonnegative (min {u0.min():.3e})")
    if np.any(v0 < 0):
        problems.append(f"v0 must be nonnegative (min {v0.min():.3e})")
    if problems:
        raise ConfigInvalid(problems)
    w0, stats = _helm(grid, u0, cfg.solver)
    K0 = float(max(np.max(v0 - w0), 0.0))
    if cfg.tau == 0:
        v0, _ = _tau0_v(u0, w0, cfg, _source(cfg.source_v, grid, 0.0))
    return SimState(
        t=0.0,
        u=Field(grid, u0),
        v=Field(grid, v0),
        w=Field(grid, w0),
        step_index=0,
        solver_stats={"w": stats},
        K0=K0,
    )


def _step_v_array(state: SimState, cfg: SimConfig, t_next: float):
    grid = cfg.grid
    rhs = _feps(state.u.values, cfg.epsilon) + _source(cfg.source_v, grid, t_next)
    if cfg.tau > 0:
        c = cfg.tau / cfg.dt
        v, stats = solve_shifted(grid, c * state.v.values + rhs, c + 1.0, 1.0, cfg.solver,
                                 x0=state.v.values)
    else:
        v, stats = _helm(grid, rhs, cfg.solver)
    return v, stats


def step_v(state: SimState, cfg: SimConfig) -> Field:
    """Signal update from f_ε(u^n); backward Euler when τ > 0, elliptic when τ = 0."""
    v, _ = _step_v_array(state, cfg, state.t + cfg.dt)
    return Field(cfg.grid, v)


def _step_u_array(state: SimState, v_new: np.ndarray, cfg: SimConfig, t_next: float):
    grid = cfg.grid
    a = cfg.motility.gamma(v_new) + cfg.epsilon
    rhs = state.u.values + cfg.dt * _source(cfg.source_u, grid, t_next)
    x0 = a * state.u.values
    z, stats = solve_variable(grid, rhs, 1.0 / a, cfg.dt, cfg.solver, x0=x0)
    u_new = rhs + cfg.dt * apply_laplacian(grid, z)
    floor = -10.0 * cfg.solver.rel_tolerance * max(1.0, float(np.max(np.abs(state.u.values))))
    umin = float(u_new.min())
    if umin < floor:
        raise PositivityLoss(f"u update reached {umin:.3e} (floor {floor:.3e}) at t={t_next:.6g}")
    return u_new, a, stats


def step_u(state: SimState, v_new: Field, cfg: SimConfig) -> Field:
    """Density update with γ frozen at v_new; conservative and positivity-preserving."""
    u, _, _ = _step_u_array(state, v_new.values, cfg, state.t + cfg.dt)
    return Field(cfg.grid, u)


def step(state: SimState, cfg: SimConfig) -> SimState:
    grid = cfg.grid
    t_next = state.t + cfg.dt
    stats = {}
    if cfg.tau == 0 and cfg.source_v is None:
        # the stored v already equals (1 - L)^{-1} f_ε(u^n)
        v_new = state.v.values
    else:
        v_new, stats["v"] = _step_v_array(state, cfg, t_next)
    u_new, a, stats["u"] = _step_u_array(state, v_new, cfg, t_next)
    dw, stats["w"] = _helm(grid, u_new - state.u.values, cfg.solver)
    w_new = state.w.values + dw
    if cfg.tau == 0:
        v_store, stats["v_sync"] = _tau0_v(u_new, w_new, cfg, _source(cfg.source_v, grid, t_next))
    else:
        v_store = v_new
    return SimState(
        t=t_next,
        u=Field(grid, u_new),
        v=Field(grid, v_store),
        w=Field(grid, w_new),
        step_index=state.step_index + 1,
        coefficient=a,
        solver_stats=stats,
        K0=state.K0,
    )


def key_identity_residual(state_prev: SimState, state_next: SimState, cfg: SimConfig) -> float:
    """||(w^{n+1} - w^n)/dt + a u^{n+1} - (I - L)^{-1}[a u^{n+1}]||_inf,
    with a the coefficient frozen in the step producing state_next."""
    a = state_next.coefficient
    if a is None:
        a = cfg.motility.gamma(state_next.v.values) + cfg.epsilon
    z = a * state_next.u.values
    hz, _ = _helm(cfg.grid, z, cfg.solver)
    dt = state_next.t - state_prev.t
    r = (state_next.w.values - state_prev.w.values) / dt + z - hz
    return float(np.max(np.abs(r)))


def _accumulate(result: RunResult, stats: dict):
    for s in stats.values():
        if isinstance(s, SolveStats):
            result.solver_iterations += s.iterations
            result.solver_max_residual = max(result.solver_max_residual, s.residual)


def run(cfg: SimConfig, on_record=None, on_snapshot=None, audit: bool = True) -> RunResult:
    """Integrate from t = 0 to T_final.

    Audits run every ``cfg.cadence`` steps (and at the final step) unless
    manufactured sources are active.  Snapshots are kept at t = 0, every
    ``cfg.snapshot_cadence`` steps when positive, and at the final step.
    The callbacks receive each record / snapshot as it is produced.  On
    failure the raised exception carries the partial result as ``.partial``.
    """
    from .audit import BoundEnvelope, audit_state

    state = initialize(cfg)
    do_audit = audit and not cfg.mms
    env = BoundEnvelope.from_state(state, cfg) if do_audit else None
    result = RunResult(cfg, [state], [], state)
    mass0 = integrate(state.u)
    result.min_u = state.u.min()
    result.min_v = state.v.min()
    _accumulate(result, state.solver_stats)
    if on_snapshot:
        on_snapshot(state)
    if do_audit:
        rec = audit_state(state, env, cfg)
        result.records.append(rec)
        if on_record:
            on_record(rec)
    n_steps = cfg.n_steps
    key_since = 0.0
    try:
        for n in range(1, n_steps + 1):
            prev = state
            state = step(prev, cfg)
            _accumulate(result, state.solver_stats)
            result.min_u = min(result.min_u, state.u.min())
            result.min_v = min(result.min_v, state.v.min())
            if mass0 > 0:
                err = abs(integrate(state.u) - mass0) / mass0
                result.max_rel_mass_error = max(result.max_rel_mass_error, err)
            if do_audit:
                kres = key_identity_residual(prev, state, cfg)
                key_since = max(key_since, kres)
                result.max_key_residual = max(result.max_key_residual, kres)
                if n % cfg.cadence == 0 or n == n_steps:
                    rec = audit_state(state, env, cfg, prev=prev, key_residual=key_since)
                    key_since = 0.0
                    result.records.append(rec)
                    if on_record:
                        on_record(rec)
            if (cfg.snapshot_cadence and n % cfg.snapshot_cadence == 0) or n == n_steps:
                result.snapshots.append(state)
                if on_snapshot:
                    on_snapshot(state)
            result.final = state
    except Exception as exc:
        exc.partial = result
        raise
    return result
