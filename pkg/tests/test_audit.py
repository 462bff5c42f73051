import csv
import math

import numpy as np
import pytest
from conftest import bump_config

from kymo.audit import (
    BUDGETS,
    BoundEnvelope,
    DiagnosticsRecord,
    audit_report,
    audit_state,
    check_comparison_v,
    check_comparison_w,
    check_duality,
    check_entropy,
    check_lyapunov,
    check_norm_budgets,
    lyapunov_F,
    norm_budgets,
)
from kymo.elliptic import SolverSettings
from kymo.errors import WrongMotility
from kymo.grid import Field, GridSpec, laplacian_matrix
from kymo.io import read_diagnostics, read_field, write_diagnostics, write_field
from kymo.motility import Constant, ExpDecay
from kymo.scheme import InitSpec, SimConfig, SimState, initialize, run, step


def const_state(cfg, u, v):
    g = cfg.grid
    return SimState(0.0, Field.constant(g, u), Field.constant(g, v), Field.constant(g, u))


def unit_cfg(motility=None, tau=0.0, epsilon=1e-3, epsilon0=0.5, dt=0.01, T=0.1, u0=1.0, v0=1.0,
             n=16, dim=1, cadence=1):
    g = GridSpec((n,) * dim, (1.0,) * dim)
    return SimConfig(g, motility or ExpDecay(), tau, epsilon, epsilon0, dt, T,
                     InitSpec("Constant", {"value": u0}), InitSpec("Constant", {"value": v0}),
                     cadence=cadence)


class TestAuditState:
    def test_constant_state(self):
        cfg = unit_cfg()
        st = const_state(cfg, 1.0, 1.0)
        rec = audit_state(st, BoundEnvelope.from_state(st, cfg), cfg)
        assert rec.entropy == 0.0
        assert rec.hminus1_sq == pytest.approx(0.0, abs=1e-20)
        assert rec.fisher == 0.0
        assert rec.lyapunov_F == pytest.approx(-0.5)

    def test_zero_state(self):
        cfg = unit_cfg(u0=0.0, v0=0.0)
        st = const_state(cfg, 0.0, 0.0)
        rec = audit_state(st, BoundEnvelope.from_state(st, cfg), cfg)
        assert rec.mass == 0.0 and rec.max_u == 0.0
        for name in ("entropy", "hminus1_sq", "u_L2_sq", "grad_u_L43", "fisher", "weighted_mass_flux"):
            assert getattr(rec, name) == 0.0
        assert rec.lyapunov_F == 0.0

    def test_lyapunov_wrong_motility(self):
        cfg = unit_cfg(motility=Constant(0.5))
        with pytest.raises(WrongMotility):
            lyapunov_F(const_state(cfg, 1.0, 1.0), cfg)

    def test_records_finite_and_nonnegative(self):
        res = run(bump_config(n=32, dim=2, T=0.05, dt=0.01, cadence=1, tau=0.5))
        norms = ("mass", "hminus1_sq", "w_H1_sq", "v_H1_sq", "v_H2_proxy", "grad_v_L4",
                 "grad_u_L43", "u_L2_sq", "fisher", "weighted_mass_flux", "w_t_L2_sq",
                 "u_t_dual_norm_proxy", "quartic_v", "wv_gap_H1_sq")
        for r in res.records:
            for name in DiagnosticsRecord.header():
                val = getattr(r, name)
                assert val is None or math.isfinite(val)
            assert all(getattr(r, n) >= 0 for n in norms)

    def test_offline_recomputation_from_snapshots(self, tmp_path):
        cfg = bump_config(n=24, dim=2, T=0.03, dt=0.01, cadence=1)
        res = run(cfg)
        st = res.final
        for name in ("u", "v", "w"):
            write_field(tmp_path / f"{name}.ksf", getattr(st, name), st.t)
        u, t = read_field(tmp_path / "u.ksf", cfg.grid.lengths)
        v, _ = read_field(tmp_path / "v.ksf", cfg.grid.lengths)
        w, _ = read_field(tmp_path / "w.ksf", cfg.grid.lengths)
        assert t == st.t
        rec = res.records[-1]
        g = cfg.grid
        vol = g.cell_volume
        uu, vv, ww = u.values, v.values, w.values
        mass = ent = l2 = 0.0
        for x in uu.ravel():
            mass += x * vol
            ent += x * math.log(x) * vol if x > 0 else 0.0
            l2 += x * x * vol
        assert rec.mass == pytest.approx(mass, rel=1e-12)
        assert rec.entropy == pytest.approx(ent, rel=1e-10, abs=1e-14)
        assert rec.u_L2_sq == pytest.approx(l2, rel=1e-12)
        assert rec.max_w == ww.max() and rec.max_v == vv.max()
        # H^-1 via dense pseudo-inverse
        L = laplacian_matrix(g).toarray()
        c = uu.ravel() - uu.mean()
        hm1 = c @ np.linalg.pinv(-L) @ c * vol
        assert rec.hminus1_sq == pytest.approx(hm1, rel=1e-8)
        # w - v gap in H1
        d = (ww - vv)
        gx = np.diff(d, axis=0) / g.h[0]
        gy = np.diff(d, axis=1) / g.h[1]
        gap = (np.sum(d**2) + np.sum(gx**2) + np.sum(gy**2)) * vol
        assert rec.wv_gap_H1_sq == pytest.approx(gap, rel=1e-10)
        # Delta_h v proxy
        Lv = L @ vv.ravel()
        assert rec.v_H2_proxy == pytest.approx(np.sum(Lv**2) * vol, rel=1e-10)
        # weighted flux with gamma = exp(-v)
        assert rec.weighted_mass_flux == pytest.approx(
            np.sum((np.exp(-vv) + cfg.epsilon) * uu**2) * vol, rel=1e-12)

    def test_dissipation_matches_energy_decay(self):
        decay = []
        for dt in (2e-3, 1e-3):
            cfg = bump_config(n=64, dt=dt, T=0.02, cadence=1)
            res = run(cfg)
            r0, r1 = res.records[-2], res.records[-1]
            rate = -(r1.lyapunov_F - r0.lyapunov_F) / dt
            decay.append(abs(rate - r1.lyapunov_dissipation) / r1.lyapunov_dissipation)
        assert decay[1] < decay[0] and decay[1] < 0.05


class TestEnvelopes:
    def test_homogeneous_margin(self):
        cfg = unit_cfg(motility=Constant(0.5), epsilon=0.005, epsilon0=0.01, dt=0.01, T=1.0)
        st = initialize(cfg)
        env = BoundEnvelope.from_state(st, cfg)
        assert check_comparison_w(st, env) == pytest.approx(0.0, abs=1e-12)
        for _ in range(100):
            st = step(st, cfg)
        assert check_comparison_w(st, env) == pytest.approx((1 - 0.0051) ** -100 - 1, rel=1e-9)
        assert check_comparison_w(st, env) == pytest.approx(0.667, abs=1e-3)

    def test_v_envelope_tau_positive(self):
        cfg = unit_cfg(motility=Constant(0.5), tau=0.5, epsilon=0.01, epsilon0=0.4)
        st = const_state(cfg, 1.0, 1.0)
        env = BoundEnvelope(np.ones(cfg.grid.shape), cfg.K_eff, 0.0, 0.5, cfg.dt)
        bound = 1 / (1 - 0.5 * cfg.K_eff)
        assert check_comparison_v(st, env) == pytest.approx(bound - 1.0)
        assert bound > 1

    def test_nondecreasing(self):
        env = BoundEnvelope(np.array([1.0, 2.0]), 1.5, 0.3, 0.2, 0.1)
        prev = env.v_bound(0)
        for n in range(1, 50):
            assert np.all(env.w_bound(n) >= env.w_bound(n - 1))
            assert np.all(env.v_bound(n) >= prev)
            prev = env.v_bound(n)

    def test_inapplicable_envelope_is_nan(self):
        env = BoundEnvelope(np.ones(4), 1.5, 0.0, 0.0, 1.0)
        cfg = unit_cfg(n=4)
        assert math.isnan(check_comparison_w(const_state(cfg, 1.0, 1.0), env))

    @pytest.mark.parametrize("tau", [0.0, 0.5])
    def test_bump_runs_hold(self, tau):
        res = run(bump_config(n=64, tau=tau, T=0.3, dt=5e-3, cadence=5))
        assert min(r.envelope_margin_w for r in res.records) >= -1e-8 * res.records[0].max_w
        assert min(r.envelope_margin_v for r in res.records) >= -1e-9 * res.records[0].max_u

    def test_tau0_gap_shrinks_with_epsilon(self):
        gaps = []
        for eps in (1e-1, 1e-2, 1e-3):
            st = initialize(bump_config(n=64, epsilon=eps))
            gaps.append(np.max(st.w.values - st.v.values))
        assert gaps[0] > gaps[1] > gaps[2] > 0


class TestDualityAndEntropy:
    def test_constant_duality_margin(self):
        cfg = unit_cfg(u0=2.0, v0=0.0)
        c, eps = 2.0, cfg.epsilon
        rep = check_duality(run(cfg).records, cfg)
        # tau = 0: v is pinned at f_eps(c), so every interval has the same margin
        gam = math.exp(-c / (1 + eps * c))
        assert rep.worst_margin == pytest.approx((1 + 1 - gam - eps) * c**2, rel=1e-12)
        assert rep.status == "PASS"

    def test_zero_density_duality(self):
        cfg = unit_cfg(u0=0.0, v0=0.0)
        rep = check_duality(run(cfg).records, cfg)
        assert rep.worst_margin == 0.0 and rep.status == "PASS"

    def test_constant_motility_entropy_monotone(self):
        cfg = bump_config(n=64, motility=Constant(0.6), T=0.2, dt=5e-3, cadence=1)
        res = run(cfg)
        ents = [r.entropy for r in res.records]
        assert np.all(np.diff(ents) <= 1e-14)
        assert check_entropy(res.records, cfg).status == "PASS"

    def test_bump_duality_and_entropy(self):
        cfg = bump_config(n=64, T=0.2, dt=5e-3, cadence=1)
        rep = audit_report(run(cfg).records, cfg)
        assert rep["checks"]["duality"]["status"] == "PASS"
        assert rep["checks"]["entropy"]["status"] == "PASS"


class TestLyapunov:
    def test_requires_energy_values(self):
        cfg = bump_config(motility=Constant(0.5), T=0.02, dt=0.01)
        with pytest.raises(WrongMotility):
            check_lyapunov(run(cfg).records)

    def test_subcritical_2d_nonincreasing(self):
        cfg = bump_config(n=32, dim=2, T=0.2, dt=0.01, cadence=1, amplitude=2.0, floor=0.1)
        res = run(cfg)
        F = [r.lyapunov_F for r in res.records]
        assert np.all(np.diff(F) <= 1e-12)
        assert check_lyapunov(res.records).status == "PASS"


class TestBudgets:
    def test_constant_family(self):
        fam = {}
        for n in (16, 32):
            for eps in (1e-2, 1e-3):
                cfg = unit_cfg(n=n, epsilon=eps, u0=1.0, v0=0.0, T=0.05)
                fam[f"{n}_{eps}"] = (run(cfg).records, cfg)
        rep = check_norm_budgets(fam)
        assert rep.status == "PASS"
        for b in ("u_L1_sup", "u_L2_L2", "u_Hm1_sup", "grad_u_L43_L43"):
            assert rep.detail["ratios"][b] == pytest.approx(1.0)

    def test_zero_family(self):
        fam = {}
        for n in (16, 32):
            cfg = unit_cfg(n=n, u0=0.0, v0=0.0, T=0.05)
            fam[str(n)] = (run(cfg).records, cfg)
        rep = check_norm_budgets(fam)
        for rid in fam:
            b = rep.detail["budgets"][rid]
            assert all(b[k] == 0.0 for k in ("u_L1_sup", "u_Hm1_sup", "u_L2_L2", "grad_u_L43_L43"))
        assert rep.status == "PASS"

    def test_budget_keys(self):
        cfg = bump_config(T=0.02, dt=0.01)
        assert set(norm_budgets(run(cfg).records, cfg)) == set(BUDGETS)


class TestReport:
    def test_offline_reproduces(self, tmp_path):
        cfg = bump_config(n=32, T=0.1, dt=0.01, cadence=2, tau=0.5)
        res = run(cfg)
        rep = audit_report(res.records, cfg)
        write_diagnostics(tmp_path / "d.csv", res.records)
        back = read_diagnostics(tmp_path / "d.csv")
        assert audit_report(back, cfg) == rep
        assert [r.as_row() for r in back] == [r.as_row() for r in res.records]

    def test_header_stable(self, tmp_path):
        cfg = bump_config(T=0.01, dt=0.01)
        write_diagnostics(tmp_path / "d.csv", run(cfg).records)
        with open(tmp_path / "d.csv") as fh:
            assert fh.readline().strip() == "# kymo.diagnostics.v1"
            assert next(csv.reader(fh)) == DiagnosticsRecord.header()

    def test_outside_theory_skips_comparison(self):
        cfg = bump_config(tau=2.0, outside_theory=True, T=0.05, dt=0.01)
        rep = audit_report(run(cfg).records, cfg)
        assert rep["checks"]["comparison_w"]["status"] == "SKIPPED"
        assert rep["checks"]["comparison_v"]["status"] == "SKIPPED"
        assert rep["overall"] == "PASS"

    def test_dense_solver_run(self):
        cfg = bump_config(n=32, T=0.05, dt=0.01, cadence=1).with_(solver=SolverSettings(mode="dense_direct"))
        rep = audit_report(run(cfg).records, cfg)
        assert rep["checks"]["key_identity"]["detail"]["max_residual"] <= 1e-12
