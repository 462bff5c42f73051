import json
import struct

import numpy as np
import pytest

from kymo.cli import main
from kymo.errors import ConfigInvalid, ParseError
from kymo.grid import Field, GridSpec
from kymo.io import (
    config_from_dict,
    parse_config,
    read_field,
    read_field_any,
    read_field_csv,
    write_field,
    write_field_csv,
)

MINIMAL = {
    "grid": {"cells": [64], "lengths": [1.0]},
    "motility": {"family": "ExpDecay", "params": {}},
    "tau": 0.0,
    "epsilon": 1e-3,
    "epsilon0": 0.5,
    "dt": 1e-3,
    "T_final": 1.0,
    "initial_data": {
        "u": {"kind": "GaussianBump", "center": [0.5], "width": 0.1, "amplitude": 4.0, "floor": 0.5},
        "v": {"kind": "Constant", "value": 0.0},
    },
}


def write_cfg(tmp_path, name="cfg", **changes):
    d = json.loads(json.dumps(MINIMAL))
    d.update(changes)
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(d))
    return p


class TestSnapshots:
    def test_binary_roundtrip_2d(self, tmp_path, rng):
        g = GridSpec((5, 3), (2.0, 1.0))
        f = Field(g, rng.normal(size=g.shape))
        write_field(tmp_path / "f.ksf", f, t=0.25)
        back, t = read_field(tmp_path / "f.ksf", g.lengths)
        assert t == 0.25 and np.array_equal(back.values, f.values) and back.grid == g

    def test_header_layout(self, tmp_path):
        g = GridSpec((4,), (1.0,))
        write_field(tmp_path / "f.ksf", Field(g, [1.0, 2.0, 3.0, 4.0]), t=1.5)
        raw = (tmp_path / "f.ksf").read_bytes()
        assert len(raw) == 32 + 4 * 8
        magic, dim, n0, n1, t = struct.unpack_from("<4sIIId", raw)
        assert (magic, dim, n0, n1, t) == (b"KSF1", 1, 4, 0, 1.5)
        assert raw[24:32] == bytes(8)
        assert np.array_equal(np.frombuffer(raw[32:], "<f8"), [1.0, 2.0, 3.0, 4.0])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.ksf").write_bytes(b"NOPE" + bytes(28))
        with pytest.raises(ParseError):
            read_field(tmp_path / "x.ksf")

    def test_truncated(self, tmp_path):
        g = GridSpec((4,), (1.0,))
        write_field(tmp_path / "f.ksf", Field.constant(g, 1.0))
        (tmp_path / "g.ksf").write_bytes((tmp_path / "f.ksf").read_bytes()[:-8])
        with pytest.raises(ParseError):
            read_field(tmp_path / "g.ksf")

    def test_csv_roundtrip(self, tmp_path, rng):
        g = GridSpec((3, 4), (1.0, 1.0))
        f = Field(g, rng.normal(size=g.shape))
        write_field_csv(tmp_path / "f.csv", f)
        assert (tmp_path / "f.csv").read_text().splitlines()[0] == "i,j,value"
        assert np.array_equal(read_field_csv(tmp_path / "f.csv", g).values, f.values)
        assert np.array_equal(read_field_any(tmp_path / "f.csv", g).values, f.values)

    def test_grid_mismatch(self, tmp_path):
        write_field(tmp_path / "f.ksf", Field.constant(GridSpec.uniform(4), 1.0))
        with pytest.raises(ConfigInvalid):
            read_field_any(tmp_path / "f.ksf", GridSpec.uniform(8))


class TestConfig:
    def test_minimal_accepted(self, tmp_path):
        cfg = parse_config(write_cfg(tmp_path))
        assert cfg.grid.cells == (64,) and cfg.tau == 0.0 and cfg.n_steps == 1000

    def test_tau_violation(self, tmp_path):
        with pytest.raises(ConfigInvalid) as exc:
            parse_config(write_cfg(tmp_path, tau=2.0))
        assert any("tau < 1/K_gamma" in v for v in exc.value.violations)

    def test_epsilon_violation(self, tmp_path):
        with pytest.raises(ConfigInvalid) as exc:
            parse_config(write_cfg(tmp_path, epsilon=0.5))
        assert any("epsilon=0.5 outside (0, epsilon0)" in v for v in exc.value.violations)

    @pytest.mark.parametrize("key", ["tau", "epsilon", "motility", "initial_data"])
    def test_missing_keys(self, key):
        d = dict(MINIMAL)
        del d[key]
        with pytest.raises(ParseError):
            config_from_dict(d)

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{")
        with pytest.raises(ParseError):
            parse_config(p)

    def test_non_numeric(self):
        with pytest.raises(ParseError):
            config_from_dict({**MINIMAL, "tau": "zero"})

    def test_seed_override(self):
        d = {**MINIMAL, "initial_data": {"u": {"kind": "RandomPositive", "seed": 1},
                                         "v": {"kind": "Constant", "value": 0.0}}}
        assert config_from_dict(d, seed=99).init_u.params["seed"] == 99

    def test_roundtrip_to_dict(self):
        cfg = config_from_dict(MINIMAL)
        assert config_from_dict(cfg.to_dict()) == cfg

    def test_from_file_initial_data(self, tmp_path):
        g = GridSpec((64,), (1.0,))
        write_field(tmp_path / "u0.ksf", Field.constant(g, 2.0))
        d = {**MINIMAL, "initial_data": {"u": {"kind": "FromFile", "path": "u0.ksf"},
                                         "v": {"kind": "Constant", "value": 0.0}}}
        (tmp_path / "c.json").write_text(json.dumps(d))
        from kymo.scheme import initialize

        st = initialize(parse_config(tmp_path / "c.json"))
        assert np.all(st.u.values == 2.0)


class TestCli:
    def test_run_layout_and_rows(self, tmp_path):
        cfg = write_cfg(tmp_path, "minimal", T_final=0.2, output={"cadence": 10, "snapshot_cadence": 100})
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        rd = out / "minimal"
        for name in ("manifest.json", "diagnostics.csv", "audit_report.json", "snapshots", "plots"):
            assert (rd / name).exists()
        lines = (rd / "diagnostics.csv").read_text().splitlines()
        assert len(lines) - 2 == 1 + 200 // 10
        assert (rd / "plots" / "envelope_w.csv").exists()
        assert (rd / "snapshots" / "u_000200.ksf").exists()
        man = json.loads((rd / "manifest.json").read_text())
        assert man["exit_status"] == 0 and man["outside_theory"] is False

    def test_audit_offline_identical(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "m", T_final=0.1, tau=0.5)
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--out", str(out), "--cadence", "5"]) == 0
        assert main(["audit-offline", str(out / "m")]) == 0
        assert "matches" in capsys.readouterr().out
        assert (out / "m" / "audit_report.json").read_bytes() == \
            (out / "m" / "audit_report.offline.json").read_bytes()

    def test_invalid_config_exit_2(self, tmp_path):
        assert main(["run", "--config", str(write_cfg(tmp_path, tau=2.0)), "--out", str(tmp_path)]) == 2
        bad = tmp_path / "bad.json"
        bad.write_text("[1,")
        assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2

    def test_outside_theory(self, tmp_path):
        cfg = write_cfg(tmp_path, "wild", tau=2.0, T_final=0.05)
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--out", str(out), "--outside-theory"]) == 0
        man = json.loads((out / "wild" / "manifest.json").read_text())
        assert man["outside_theory"] is True and man["theory_violations"]
        rep = json.loads((out / "wild" / "audit_report.json").read_text())
        assert rep["checks"]["comparison_w"]["status"] == "SKIPPED"

    def test_runtime_error_flushes_partial(self, tmp_path):
        cfg = write_cfg(tmp_path, "pl", tau=0.5, T_final=2.0, dt=0.05,
                        motility={"family": "PowerLaw", "params": {"c0": 1.0, "k": 1.0, "v_min": 0.5}},
                        initial_data={"u": {"kind": "Constant", "value": 0.01},
                                      "v": {"kind": "Constant", "value": 1.0}})
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--out", str(out), "--outside-theory"]) == 2
        man = json.loads((out / "pl" / "manifest.json").read_text())
        assert "DomainViolation" in man["error"] and man["exit_status"] == 2
        assert len((out / "pl" / "diagnostics.csv").read_text().splitlines()) > 2

    def test_dense_solver_flag(self, tmp_path):
        cfg = write_cfg(tmp_path, "d", grid={"cells": [32], "lengths": [1.0]}, T_final=0.05, dt=0.01)
        out = tmp_path / "out"
        assert main(["run", "--config", str(cfg), "--out", str(out), "--dense-solver"]) == 0
        man = json.loads((out / "d" / "manifest.json").read_text())
        assert man["config"]["solver"]["mode"] == "dense_direct"

    def test_sweep_refine_probe(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_cfg(tmp_path, "s", grid={"cells": [32], "lengths": [1.0]}, T_final=0.05, dt=5e-3)
        assert main(["sweep-epsilon", "--config", str(cfg), "--out", str(out),
                     "--epsilons", "1e-1,1e-2,1e-3"]) == 0
        rep = json.loads((out / "s_eps_sweep" / "experiment_report.json").read_text())
        assert rep["kind"] == "EpsilonSweep" and sorted(rep["runs"]) == ["eps_00", "eps_01", "eps_02"]
        assert (out / "s_eps_sweep" / "eps_00" / "diagnostics.csv").exists()
        assert main(["refine", "--config", str(cfg), "--out", str(out),
                     "--levels", "0.01,0.005,0.0025"]) == 0
        cfg2 = write_cfg(tmp_path, "p", grid={"cells": [16, 16], "lengths": [1.0, 1.0]},
                         T_final=0.05, dt=0.01,
                         initial_data={"u": {"kind": "GaussianBump", "width": 0.2},
                                       "v": {"kind": "Constant", "value": 0.0}})
        assert main(["probe", "--config", str(cfg2), "--out", str(out), "--masses", "0.1,1"]) == 0
