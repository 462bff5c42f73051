"""
Numerical audit of the a priori estimates along a simulated trajectory.

``audit_state`` turns one SimState into a DiagnosticsRecord holding every
integrand the estimates need.  The ``check_*`` functions are pure functions
of a list of records (plus the run configuration) and return CheckReport
objects with explicit margins, so an offline re-audit of a saved
``diagnostics.csv`` reproduces the in-run report exactly.

Face quantities use the face gradient of the grid module and arithmetic
face averages of u and v; quotients by u use 0/0 := 0 on faces where the
averaged density vanishes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .elliptic import solve_poisson_meanzero, solve_shifted
from .errors import WrongMotility
from .grid import GridSpec, apply_laplacian, face_averages, face_gradients
from .motility import ExpDecay

if TYPE_CHECKING:
    from .scheme import SimConfig, SimState

__all__ = [
    "DiagnosticsRecord",
    "BoundEnvelope",
    "CheckReport",
    "audit_state",
    "lyapunov_F",
    "check_comparison_w",
    "check_comparison_v",
    "check_mass",
    "check_positivity",
    "check_key_identity",
    "check_w_invariant",
    "check_envelope_w",
    "check_envelope_v",
    "check_duality",
    "check_entropy",
    "check_lyapunov",
    "norm_budgets",
    "check_norm_budgets",
    "audit_report",
]

SCHEMA_VERSION = "kymo.diagnostics.v1"

PASS, FAIL, SKIPPED = "PASS", "FAIL", "SKIPPED"


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    step: int
    mass: float
    min_u: float
    max_u: float
    min_v: float
    max_v: float
    max_w: float
    entropy: float
    hminus1_sq: float
    w_H1_sq: float
    v_H1_sq: float
    v_H2_proxy: float
    grad_v_L4: float
    grad_u_L43: float
    u_L2_sq: float
    fisher: float
    fisher_reg: float
    weighted_mass_flux: float
    gamma_u2: float
    quartic_v: float
    wv_gap_H1_sq: float
    key_identity_residual: float
    w_invariant_residual: float
    u_t_dual_norm_proxy: float
    w_t_L2_sq: float
    envelope_margin_w: float | None = None
    envelope_margin_v: float | None = None
    lyapunov_F: float | None = None
    lyapunov_dissipation: float | None = None

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_row(self) -> list[str]:
        return ["" if x is None else repr(x) for x in asdict(self).values()]

    @classmethod
    def from_row(cls, row: dict) -> DiagnosticsRecord:
        kw = {}
        for f in fields(cls):
            raw = row[f.name]
            if raw == "":
                kw[f.name] = None
            elif f.name == "step":
                kw[f.name] = int(raw)
            else:
                kw[f.name] = float(raw)
        return cls(**kw)


@dataclass(frozen=True)
class BoundEnvelope:
    """Comparison envelopes built from w0 = (I - L)^{-1} u0.

    w^n <= w0 (1 - dt K)^{-n}                    with K = K_gamma + epsilon0
    v^n <= (w0 (1 - dt K)^{-n} + K0) / (1 - tau K)   when tau > 0
    """

    w0: np.ndarray
    K_eff: float
    K0: float
    tau: float
    dt: float

    @classmethod
    def from_state(cls, state: SimState, cfg: SimConfig) -> BoundEnvelope:
        return cls(np.array(state.w.values), cfg.K_eff, state.K0, cfg.tau, cfg.dt)

    @property
    def w_valid(self) -> bool:
        return self.dt * self.K_eff < 1

    @property
    def v_valid(self) -> bool:
        return self.w_valid and self.tau * self.K_eff < 1

    def growth(self, n: int) -> float:
        return (1.0 - self.dt * self.K_eff) ** (-n)

    def w_bound(self, n: int) -> np.ndarray:
        return self.w0 * self.growth(n)

    def v_bound(self, n: int) -> np.ndarray:
        return (self.w_bound(n) + self.K0) / (1.0 - self.tau * self.K_eff)


@dataclass
class CheckReport:
    name: str
    status: str
    worst_margin: float | None
    tolerance: float | None
    detail: dict

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status,
            "worst_margin": self.worst_margin,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


def check_comparison_w(state: SimState, env: BoundEnvelope) -> float:
    """min over cells of (discrete envelope - w); nan when dt K >= 1."""
    if not env.w_valid:
        return math.nan
    return float(np.min(env.w_bound(state.step_index) - state.w.values))


def check_comparison_v(state: SimState, env: BoundEnvelope) -> float:
    """tau = 0: min(w - v).  tau > 0: min(envelope - v); nan if inapplicable."""
    if env.tau == 0:
        return float(np.min(state.w.values - state.v.values))
    if not env.v_valid:
        return math.nan
    return float(np.min(env.v_bound(state.step_index) - state.v.values))


def _h1_sq(grid: GridSpec, f: np.ndarray) -> float:
    vol = grid.cell_volume
    return float((np.sum(f**2) + sum(np.sum(g**2) for g in face_gradients(grid, f))) * vol)


def _lp_faces(grid: GridSpec, f: np.ndarray, p: float) -> float:
    total = sum(np.sum(np.abs(g) ** p) for g in face_gradients(grid, f))
    return float((total * grid.cell_volume) ** (1.0 / p))


def _lyapunov(grid: GridSpec, u: np.ndarray, v: np.ndarray) -> float:
    vol = grid.cell_volume
    pos = u > 0
    ent = np.sum(u[pos] * np.log(u[pos]))
    dir_v = sum(np.sum(g**2) for g in face_gradients(grid, v))
    return float((ent + 0.5 * dir_v + 0.5 * np.sum(v**2) - np.sum(u * v)) * vol)


def lyapunov_F(state: SimState, cfg: SimConfig) -> float:
    """∫ (u log u + |∇v|²/2 + v²/2 - u v); defined for gamma(v) = exp(-v) only."""
    if not isinstance(cfg.motility, ExpDecay):
        raise WrongMotility(
            f"the energy functional needs ExpDecay motility, got {cfg.motility.family}"
        )
    return _lyapunov(cfg.grid, np.maximum(state.u.values, 0.0), state.v.values)


def audit_state(state: SimState, env: BoundEnvelope, cfg: SimConfig, prev: SimState | None = None,
                key_residual: float = 0.0) -> DiagnosticsRecord:
    grid = cfg.grid
    vol = grid.cell_volume
    mot = cfg.motility
    eps = cfg.epsilon
    u_raw, v, w = state.u.values, state.v.values, state.w.values
    # clip solver-noise negatives for the logarithmic and quotient terms
    u = np.maximum(u_raw, 0.0)

    gam = mot.gamma(v)
    a = state.coefficient if state.coefficient is not None else gam + eps

    pos = u > 0
    ent = float(np.sum(u[pos] * np.log(u[pos])) * vol)

    phi, _ = solve_poisson_meanzero(grid, u, cfg.solver)
    hm1 = max(float(np.sum((u - u.mean()) * phi) * vol), 0.0)

    gu = face_gradients(grid, u)
    gv = face_gradients(grid, v)
    uf = face_averages(grid, u)
    vf = face_averages(grid, v)
    fisher = fisher_eps = quartic = 0.0
    for g_u, g_v, u_f, v_f in zip(gu, gv, uf, vf):
        gam_f = mot.gamma(v_f)
        gp_f = mot.gamma_prime(v_f)
        q = np.zeros_like(u_f)
        nz = u_f > 0
        q[nz] = g_u[nz] ** 2 / u_f[nz]
        fisher += float(np.sum(gam_f * q))
        fisher_eps += float(np.sum(eps * q))
        quartic += float(np.sum(gp_f**4 / gam_f**3 * g_v**4))
    fisher *= vol
    fisher_reg = fisher + fisher_eps * vol
    quartic *= vol

    Lv = apply_laplacian(grid, v)
    au = a * u_raw
    if prev is not None:
        w_t = (w - prev.w.values) / (state.t - prev.t)
    else:
        hz, _ = solve_shifted(grid, au, 1.0, 1.0, cfg.solver)
        w_t = hz - au
    w_t_sq = float(np.sum(w_t**2) * vol)

    lyap = diss = None
    if isinstance(mot, ExpDecay):
        # Σ_faces D(log u - v) · D(u e^{-v}); faces touching u = 0 are dropped
        lyap = _lyapunov(grid, u, v)
        phi_c = np.log(np.where(pos, u, 1.0)) - v
        flux_q = np.exp(-v) * u
        d = 0.0
        for ax in range(grid.dim):
            n = grid.cells[ax]
            ok = np.take(pos, np.arange(n - 1), axis=ax) & np.take(pos, np.arange(1, n), axis=ax)
            dphi = np.diff(phi_c, axis=ax) / grid.h[ax]
            dq = np.diff(flux_q, axis=ax) / grid.h[ax]
            d += float(np.sum(np.where(ok, dphi * dq, 0.0)))
        diss = d * vol
        if prev is not None and cfg.tau > 0:
            v_t = (v - prev.v.values) / (state.t - prev.t)
            diss += cfg.tau * float(np.sum(v_t**2) * vol)

    m_w = check_comparison_w(state, env)
    m_v = check_comparison_v(state, env)

    return DiagnosticsRecord(
        t=float(state.t),
        step=int(state.step_index),
        mass=float(np.sum(u_raw) * vol),
        min_u=float(u_raw.min()),
        max_u=float(u_raw.max()),
        min_v=float(v.min()),
        max_v=float(v.max()),
        max_w=float(w.max()),
        entropy=ent,
        hminus1_sq=hm1,
        w_H1_sq=_h1_sq(grid, w),
        v_H1_sq=_h1_sq(grid, v),
        v_H2_proxy=float(np.sum(Lv**2) * vol),
        grad_v_L4=_lp_faces(grid, v, 4.0),
        grad_u_L43=_lp_faces(grid, u, 4.0 / 3.0),
        u_L2_sq=float(np.sum(u**2) * vol),
        fisher=fisher,
        fisher_reg=fisher_reg,
        weighted_mass_flux=float(np.sum((gam + eps) * u**2) * vol),
        gamma_u2=float(np.sum(gam * u**2) * vol),
        quartic_v=quartic,
        wv_gap_H1_sq=_h1_sq(grid, w - v),
        key_identity_residual=float(key_residual),
        w_invariant_residual=float(np.max(np.abs(w - apply_laplacian(grid, w) - u_raw))),
        u_t_dual_norm_proxy=math.sqrt(w_t_sq) + _lp_faces(grid, au, 4.0 / 3.0),
        w_t_L2_sq=w_t_sq,
        envelope_margin_w=None if math.isnan(m_w) else m_w,
        envelope_margin_v=None if math.isnan(m_v) else m_v,
        lyapunov_F=lyap,
        lyapunov_dissipation=diss,
    )


# ---------------------------------------------------------------------------
# record-level checks


def check_mass(records: Sequence[DiagnosticsRecord], tol: float = 1e-9) -> CheckReport:
    m0 = records[0].mass
    errs = [abs(r.mass - m0) for r in records]
    rel = max(errs) / m0 if m0 > 0 else max(errs)
    return CheckReport("mass_conservation", _status(rel <= tol), -rel, tol,
                       {"initial_mass": m0, "max_relative_error": rel})


def check_positivity(records: Sequence[DiagnosticsRecord], tol: float = 1e-13) -> CheckReport:
    scale = max(records[0].max_u, 1e-300)
    worst = min(min(r.min_u, r.min_v) for r in records)
    margin = worst / scale
    return CheckReport("positivity", _status(margin >= -tol), margin, tol,
                       {"min_u": min(r.min_u for r in records),
                        "min_v": min(r.min_v for r in records), "u0_linf": records[0].max_u})


def check_key_identity(records: Sequence[DiagnosticsRecord], tol: float = 1e-8) -> CheckReport:
    worst = max(r.key_identity_residual for r in records)
    return CheckReport("key_identity", _status(worst <= tol), -worst, tol, {"max_residual": worst})


def check_w_invariant(records: Sequence[DiagnosticsRecord], cfg: SimConfig) -> CheckReport:
    margins = [10 * cfg.solver.rel_tolerance * max(r.max_u, 1e-300) - r.w_invariant_residual
               for r in records]
    worst = min(margins)
    return CheckReport("w_invariant", _status(worst >= 0), worst, 10 * cfg.solver.rel_tolerance,
                       {"max_residual": max(r.w_invariant_residual for r in records)})


def check_envelope_w(records: Sequence[DiagnosticsRecord], tol: float = 1e-8) -> CheckReport:
    ms = [r.envelope_margin_w for r in records]
    if any(m is None for m in ms):
        return CheckReport("comparison_w", SKIPPED, None, tol,
                           {"reason": "dt*(K_gamma+epsilon0) >= 1"})
    scale = records[0].max_w
    worst = min(ms)
    return CheckReport("comparison_w", _status(worst >= -tol * scale), worst, tol * scale,
                       {"w0_linf": scale})


def check_envelope_v(records: Sequence[DiagnosticsRecord], cfg: SimConfig,
                     tol_tau0: float = 1e-9, tol: float = 1e-8) -> CheckReport:
    ms = [r.envelope_margin_v for r in records]
    if any(m is None for m in ms):
        return CheckReport("comparison_v", SKIPPED, None, None,
                           {"reason": "tau*(K_gamma+epsilon0) >= 1 or dt*(K_gamma+epsilon0) >= 1"})
    if cfg.tau == 0:
        margins = [m + tol_tau0 * r.max_u for m, r in zip(ms, records)]
        worst = min(margins)
        return CheckReport("comparison_v", _status(worst >= 0), min(ms), tol_tau0,
                           {"form": "min(w - v)", "relative_to": "max_u"})
    scale = max(records[0].max_w, records[0].max_v)
    worst = min(ms)
    return CheckReport("comparison_v", _status(worst >= -tol * scale), worst, tol * scale,
                       {"form": "(w0*(1-dt*K)^-n + K0)/(1 - tau*K) - v"})


def check_duality(records: Sequence[DiagnosticsRecord], cfg: SimConfig,
                  slack_constant: float = 0.0) -> CheckReport:
    """(H_{k+1} - H_k)/(2 Δt) + ∫(γ+ε)u²|_{k+1} <= (K_γ + 1) ū² |Ω| + C dt."""
    if len(records) < 2:
        return CheckReport("duality", SKIPPED, None, None, {"reason": "fewer than 2 records"})
    measure = cfg.grid.measure
    ubar = records[0].mass / measure
    rhs = (cfg.K_gamma + 1.0) * ubar**2 * measure
    margins = []
    for r0, r1 in zip(records[:-1], records[1:]):
        dt = r1.t - r0.t
        lhs = (r1.hminus1_sq - r0.hminus1_sq) / (2 * dt) + r1.weighted_mass_flux
        margins.append(rhs - lhs)
    worst = min(margins)
    slack = slack_constant * cfg.dt
    return CheckReport("duality", _status(worst >= -slack), worst, slack,
                       {"rhs": rhs, "intervals": len(margins)})


def check_entropy(records: Sequence[DiagnosticsRecord], cfg: SimConfig,
                  slack_constant: float = 0.0) -> CheckReport:
    """E(t) + ∫(γ+ε)|∇u|²/u <= E(0) + ∫(fisher/2 + ∫γu²/4 + ∫γ'^4/γ^3 |∇v|^4 / 4)."""
    if len(records) < 2:
        return CheckReport("entropy", SKIPPED, None, None, {"reason": "fewer than 2 records"})
    e0 = records[0].entropy
    lhs_acc = rhs_acc = 0.0
    margins = []
    increases = []
    for r0, r1 in zip(records[:-1], records[1:]):
        dt = r1.t - r0.t
        lhs_acc += dt * r1.fisher_reg
        rhs_acc += dt * (0.5 * r1.fisher + 0.25 * r1.gamma_u2 + 0.25 * r1.quartic_v)
        margins.append((e0 + rhs_acc) - (r1.entropy + lhs_acc))
        increases.append(r1.entropy - r0.entropy)
    worst = min(margins)
    slack = slack_constant * cfg.dt
    return CheckReport("entropy", _status(worst >= -slack), worst, slack,
                       {"max_step_increase": max(increases)})


def check_lyapunov(records: Sequence[DiagnosticsRecord], slack: float = 0.0) -> CheckReport:
    """F(t_{k+1}) - F(t_k) <= slack for every interval."""
    if any(r.lyapunov_F is None for r in records):
        raise WrongMotility("records carry no energy values (motility is not ExpDecay)")
    if len(records) < 2:
        return CheckReport("lyapunov", SKIPPED, None, None, {"reason": "fewer than 2 records"})
    incs = [r1.lyapunov_F - r0.lyapunov_F for r0, r1 in zip(records[:-1], records[1:])]
    worst = max(max(incs), 0.0)
    return CheckReport("lyapunov", _status(worst <= slack), -worst, slack,
                       {"max_increase": max(incs), "total_change":
                        records[-1].lyapunov_F - records[0].lyapunov_F})


BUDGETS = (
    "u_L1_sup",
    "u_Hm1_sup",
    "u_L2_L2",
    "grad_u_L43_L43",
    "fisher_L1",
    "v_Linf_sup",
    "v_H2_L2",
    "tau_v_H1_sup",
    "grad_v_L4_L4",
    "u_t_dual_L43",
    "w_t_L2_L2",
)


def norm_budgets(records: Sequence[DiagnosticsRecord], cfg: SimConfig) -> dict[str, float]:
    """Time-aggregated norms of the regularity classes (right-endpoint sums)."""
    acc = dict.fromkeys(BUDGETS, 0.0)
    acc["u_L1_sup"] = max(abs(r.mass) for r in records)
    acc["u_Hm1_sup"] = max(r.hminus1_sq for r in records)
    acc["v_Linf_sup"] = max(r.max_v for r in records)
    acc["tau_v_H1_sup"] = cfg.tau * max(r.v_H1_sq for r in records)
    for r0, r1 in zip(records[:-1], records[1:]):
        dt = r1.t - r0.t
        acc["u_L2_L2"] += dt * r1.u_L2_sq
        acc["grad_u_L43_L43"] += dt * r1.grad_u_L43 ** (4 / 3)
        acc["fisher_L1"] += dt * r1.fisher
        acc["v_H2_L2"] += dt * r1.v_H2_proxy
        acc["grad_v_L4_L4"] += dt * r1.grad_v_L4**4
        acc["u_t_dual_L43"] += dt * r1.u_t_dual_norm_proxy ** (4 / 3)
        acc["w_t_L2_L2"] += dt * r1.w_t_L2_sq
    return acc


def _ratio(values) -> float:
    vals = np.asarray(values, dtype=float)
    hi, lo = vals.max(), vals.min()
    if hi == lo:
        return 1.0
    if lo <= 0:
        return math.inf
    return float(hi / lo)


def check_norm_budgets(family: dict, stability: float = 3.0) -> CheckReport:
    """family: run id -> (records, cfg).  PASS iff every budget's max/min <= stability."""
    per_run = {rid: norm_budgets(recs, cfg) for rid, (recs, cfg) in sorted(family.items())}
    ratios = {b: _ratio([per_run[rid][b] for rid in per_run]) for b in BUDGETS}
    worst = max(ratios.values())
    return CheckReport("norm_budgets", _status(worst <= stability), stability - worst, stability,
                       {"ratios": ratios, "budgets": per_run,
                        "note": "u_t dual norm is a proxy: ||w_t||_L2 + ||grad(a u)||_L4/3"})


def audit_report(records: Sequence[DiagnosticsRecord], cfg: SimConfig,
                 slack_constant: float | None = None) -> dict:
    """All single-run checks, keyed by name, for audit_report.json."""
    if slack_constant is None:
        measure = cfg.grid.measure
        ubar = records[0].mass / measure
        slack_constant = (cfg.K_gamma + 1.0) * ubar**2 * measure
    reports = [
        check_mass(records),
        check_positivity(records),
        check_key_identity(records),
        check_w_invariant(records, cfg),
    ]
    theory_ok = not cfg.theory_violations()
    comp = [check_envelope_w(records), check_envelope_v(records, cfg)]
    if not theory_ok:
        comp = [CheckReport(c.name, SKIPPED, c.worst_margin, c.tolerance,
                            {**c.detail, "reason": "outside theory hypotheses"}) for c in comp]
    reports += comp
    reports.append(check_duality(records, cfg, slack_constant))
    reports.append(check_entropy(records, cfg, slack_constant))
    if isinstance(cfg.motility, ExpDecay):
        reports.append(check_lyapunov(records, slack_constant * cfg.dt))
    else:
        reports.append(CheckReport("lyapunov", SKIPPED, None, None,
                                   {"reason": "energy structure requires ExpDecay"}))
    checks = {r.name: r.to_dict() for r in reports}
    overall = FAIL if any(r.status == FAIL for r in reports) else PASS
    return {"schema": "kymo.audit.v1", "overall": overall, "checks": checks,
            "slack_constant": slack_constant}
