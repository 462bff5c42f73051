"""
Command-line driver.

    kymo run           --config c.json --out OUT
    kymo sweep-epsilon --config c.json --out OUT [--epsilons 1e-1,1e-2,...]
    kymo refine        --config c.json --out OUT --mode {SelfConvergence,MMS} --levels ...
    kymo probe         --config c.json --out OUT --masses 1,10,60
    kymo audit-offline RUN_DIR

Exit status: 0 when every enabled check passes, 1 on a check FAIL, 2 on a
runtime or configuration error.  A single run writes

    OUT/<run-id>/manifest.json
    OUT/<run-id>/diagnostics.csv
    OUT/<run-id>/audit_report.json
    OUT/<run-id>/snapshots/{u,v,w}_<step>.ksf
    OUT/<run-id>/plots/<diagnostic>.csv, envelope_w.csv, envelope_v.csv

where <run-id> is the config file stem.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .audit import FAIL, BoundEnvelope, DiagnosticsRecord, audit_report
from .errors import KymoError
from .experiments import (
    critical_mass_probe,
    epsilon_sweep,
    refinement_order,
)
from .io import config_from_dict, parse_config, read_diagnostics, write_diagnostics, write_field

log = logging.getLogger("kymo")

MANIFEST_SCHEMA = "kymo.manifest.v1"
EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _load(args):
    return parse_config(
        args.config,
        outside_theory=True if args.outside_theory else None,
        dense_solver=args.dense_solver,
        seed=args.seed,
        cadence=args.cadence,
    )


def _solver_summary(result) -> dict:
    return {
        "total_iterations": result.solver_iterations,
        "max_relative_residual": result.solver_max_residual,
        "max_key_identity_residual": result.max_key_residual,
        "max_relative_mass_error": result.max_rel_mass_error,
        "min_u": result.min_u,
        "min_v": result.min_v,
    }


def _write_plots(plot_dir: Path, records, cfg, state0=None) -> None:
    """Time series per diagnostic plus max_w / max_v against their envelopes."""
    plot_dir.mkdir(parents=True, exist_ok=True)
    for name in DiagnosticsRecord.header():
        if name in ("t", "step"):
            continue
        rows = [(r.t, getattr(r, name)) for r in records if getattr(r, name) is not None]
        if not rows:
            continue
        with open(plot_dir / f"{name}.csv", "w") as fh:
            fh.write(f"t,{name}\n")
            fh.writelines(f"{t!r},{x!r}\n" for t, x in rows)
    if state0 is None or not records:
        return
    env = BoundEnvelope.from_state(state0, cfg)
    w0max = float(env.w0.max())
    nan = float("nan")
    with open(plot_dir / "envelope_w.csv", "w") as fh:
        fh.write("t,max_w,w_bound\n")
        for r in records:
            bound = w0max * env.growth(r.step) if env.w_valid else nan
            fh.write(f"{r.t!r},{r.max_w!r},{bound!r}\n")
    with open(plot_dir / "envelope_v.csv", "w") as fh:
        fh.write("t,max_v,v_bound\n")
        for r in records:
            if cfg.tau == 0:
                bound = w0max * env.growth(r.step) if env.w_valid else nan
            else:
                bound = (w0max * env.growth(r.step) + env.K0) / (1 - cfg.tau * cfg.K_eff) if env.v_valid else nan
            fh.write(f"{r.t!r},{r.max_v!r},{bound!r}\n")


def execute_run(cfg, run_dir: Path, config_source: dict | None = None, extra: dict | None = None) -> int:
    """Run one configuration into ``run_dir``; returns the exit code."""
    from .scheme import run

    run_dir.mkdir(parents=True, exist_ok=True)
    snap_dir = run_dir / "snapshots"
    snap_dir.mkdir(exist_ok=True)

    def on_snapshot(state):
        for name in ("u", "v", "w"):
            write_field(snap_dir / f"{name}_{state.step_index:06d}.ksf", getattr(state, name), state.t)

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "config_dir": str(cfg.base_dir) if cfg.base_dir else None,
        "outside_theory": cfg.outside_theory,
        "theory_violations": cfg.theory_violations(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        **(extra or {}),
    }
    if config_source is not None:
        manifest["config_source"] = config_source
    t0 = time.perf_counter()
    result = None
    status = EXIT_ERROR
    try:
        result = run(cfg, on_snapshot=on_snapshot)
        report = audit_report(result.records, cfg)
        _dump(run_dir / "audit_report.json", report)
        status = EXIT_FAIL if report["overall"] == FAIL else EXIT_OK
        manifest["audit_overall"] = report["overall"]
    except (KymoError, ValueError, ArithmeticError) as exc:
        result = getattr(exc, "partial", None)
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        log.error("run failed: %s", manifest["error"])
    finally:
        if result is not None:
            write_diagnostics(run_dir / "diagnostics.csv", result.records)
            _write_plots(run_dir / "plots", result.records, cfg,
                         result.snapshots[0] if result.snapshots else None)
            manifest["solver"] = _solver_summary(result)
            manifest["steps_completed"] = result.final.step_index
        manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        manifest["wall_seconds"] = time.perf_counter() - t0
        manifest["exit_status"] = status
        _dump(run_dir / "manifest.json", manifest)
    return status


def cmd_run(args) -> int:
    cfg = _load(args)
    run_dir = Path(args.out) / Path(args.config).stem
    source = json.loads(Path(args.config).read_text())
    return execute_run(cfg, run_dir, config_source=source)


def cmd_audit_offline(args) -> int:
    run_dir = Path(args.run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    base = Path(manifest["config_dir"]) if manifest.get("config_dir") else None
    cfg = config_from_dict(manifest["config"], base, validate=False)
    records = read_diagnostics(run_dir / "diagnostics.csv")
    report = audit_report(records, cfg)
    out = Path(args.output) if args.output else run_dir / "audit_report.offline.json"
    _dump(out, report)
    in_run = run_dir / "audit_report.json"
    if in_run.exists():
        same = in_run.read_text() == out.read_text()
        print(f"offline report {'matches' if same else 'DIFFERS from'} {in_run}")
    return EXIT_FAIL if report["overall"] == FAIL else EXIT_OK


def _write_experiment(report, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    for rid in sorted(report.results):
        res = report.results[rid]
        rdir = out_dir / rid
        rdir.mkdir(exist_ok=True)
        _dump(rdir / "manifest.json", {"schema": MANIFEST_SCHEMA, "tool_version": __version__,
                                       "run_id": rid, "config": res.config.to_dict(),
                                       "solver": _solver_summary(res)})
        if res.records:
            write_diagnostics(rdir / "diagnostics.csv", res.records)
    _dump(out_dir / "experiment_report.json", report.to_dict())
    print(f"{report.kind}: {report.status}")
    return EXIT_OK if report.status in ("PASS", "DEGENERATE", "OBSERVED") else EXIT_FAIL


def cmd_sweep_epsilon(args) -> int:
    cfg = _load(args)
    report = epsilon_sweep(cfg, _floats(args.epsilons))
    return _write_experiment(report, Path(args.out) / f"{Path(args.config).stem}_eps_sweep")


def cmd_refine(args) -> int:
    cfg = _load(args)
    levels = _floats(args.levels)
    if args.mode == "MMS" or args.vary == "h":
        levels = [int(x) for x in levels]
    report = refinement_order(cfg, args.mode, levels, vary=args.vary)
    return _write_experiment(report, Path(args.out) / f"{Path(args.config).stem}_refine")


def cmd_probe(args) -> int:
    cfg = _load(args)
    report = critical_mass_probe(cfg, _floats(args.masses))
    return _write_experiment(report, Path(args.out) / f"{Path(args.config).stem}_probe")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kymo", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("--version", action="version", version=f"kymo {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--out", default="out", help="output root directory")
        sp.add_argument("--cadence", type=int, default=None, help="audit every N steps")
        sp.add_argument("--outside-theory", action="store_true",
                        help="accept configs violating the standing hypotheses; manifest is flagged")
        sp.add_argument("--dense-solver", action="store_true",
                        help="use dense direct solves (small grids only)")
        sp.add_argument("--seed", type=int, default=None, help="seed for RandomPositive initial data")

    sp = sub.add_parser("run", help="single simulation with in-run audits")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep-epsilon", help="w - v gap as epsilon -> 0")
    common(sp)
    sp.add_argument("--epsilons", default="1e-1,1e-2,1e-3,1e-4")
    sp.set_defaults(func=cmd_sweep_epsilon)

    sp = sub.add_parser("refine", help="observed order of accuracy")
    common(sp)
    sp.add_argument("--mode", choices=["SelfConvergence", "MMS"], default="SelfConvergence")
    sp.add_argument("--vary", choices=["dt", "h"], default="dt")
    sp.add_argument("--levels", required=True, help="comma list of dt values or cell counts")
    sp.set_defaults(func=cmd_refine)

    sp = sub.add_parser("probe", help="growth classification over bump masses")
    common(sp)
    sp.add_argument("--masses", required=True)
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("audit-offline", help="recompute audit_report.json from a run directory")
    sp.add_argument("run_dir")
    sp.add_argument("--output", default=None, help="where to write the recomputed report")
    sp.set_defaults(func=cmd_audit_offline)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KymoError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
