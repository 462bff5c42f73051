"""
File formats and configuration parsing.

Field snapshots (``.ksf``): a 32-byte little-endian header

    offset  0  4s   magic b"KSF1"
    offset  4  u32  dim
    offset  8  u32  cells along axis 0
    offset 12  u32  cells along axis 1 (0 in 1D)
    offset 16  f64  time stamp
    offset 24  8x   reserved, zero

followed by the cell values as little-endian float64 in C order.  Axis
lengths are not stored; they come from the run manifest.

Cell CSV: header ``i,value`` (1D) or ``i,j,value`` (2D), one row per cell.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .elliptic import SolverSettings
from .errors import ConfigInvalid, ParseError
from .grid import Field, GridSpec
from .motility import motility_from_dict
from .scheme import InitSpec, SimConfig

__all__ = [
    "write_field",
    "read_field",
    "read_field_any",
    "write_field_csv",
    "read_field_csv",
    "config_from_dict",
    "parse_config",
    "write_diagnostics",
    "read_diagnostics",
]

MAGIC = b"KSF1"
_HEADER = struct.Struct("<4sIIId8x")
assert _HEADER.size == 32


def write_field(path, f: Field, t: float = 0.0) -> None:
    cells = f.grid.cells + (0,) * (2 - f.grid.dim)
    header = _HEADER.pack(MAGIC, f.grid.dim, cells[0], cells[1], float(t))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path, lengths=None) -> tuple[Field, float]:
    """Read a snapshot; returns (field, time).  Unit axis lengths unless given."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ParseError(f"{path}: truncated header")
    magic, dim, n0, n1, t = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}")
    if dim not in (1, 2):
        raise ParseError(f"{path}: unsupported dim {dim}")
    cells = (n0,) if dim == 1 else (n0, n1)
    if lengths is None:
        lengths = (1.0,) * dim
    grid = GridSpec(cells, tuple(lengths))
    vals = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if vals.size != grid.n_cells:
        raise ParseError(f"{path}: expected {grid.n_cells} values, found {vals.size}")
    return Field(grid, vals.astype(float)), t


def write_field_csv(path, f: Field) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        idx_names = ["i", "j"][: f.grid.dim]
        w.writerow(idx_names + ["value"])
        for idx in np.ndindex(f.grid.shape):
            w.writerow(list(idx) + [repr(float(f.values[idx]))])


def read_field_csv(path, grid: GridSpec) -> Field:
    vals = np.full(grid.shape, np.nan)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            idx = tuple(int(row[k]) for k in ["i", "j"][: grid.dim])
            vals[idx] = float(row["value"])
    if np.isnan(vals).any():
        raise ParseError(f"{path}: missing cells for grid {grid.cells}")
    return Field(grid, vals)


def read_field_any(path, grid: GridSpec) -> Field:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_field_csv(path, grid)
    f, _ = read_field(path, grid.lengths)
    if f.grid.cells != grid.cells:
        raise ConfigInvalid([f"{path}: snapshot grid {f.grid.cells} does not match {grid.cells}"])
    return f


_REQUIRED = ("grid", "motility", "tau", "epsilon", "epsilon0", "dt", "T_final", "initial_data")


def _num(d, key):
    try:
        val = d[key]
    except KeyError:
        raise ParseError(f"missing required key {key!r}") from None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ParseError(f"{key!r} must be a number, got {val!r}")
    return float(val)


def _init(d, which):
    if not isinstance(d, dict) or "kind" not in d:
        raise ParseError(f"initial_data.{which} must be an object with a 'kind'")
    params = {k: v for k, v in d.items() if k != "kind"}
    return InitSpec(d["kind"], params)


def config_from_dict(d: dict, base_dir: Path | None = None, *, outside_theory: bool | None = None,
                     dense_solver: bool = False, seed: int | None = None,
                     cadence: int | None = None, validate: bool = True) -> SimConfig:
    if not isinstance(d, dict):
        raise ParseError("configuration must be a JSON object")
    missing = [k for k in _REQUIRED if k not in d]
    if missing:
        raise ParseError(f"missing required keys: {', '.join(missing)}")
    try:
        g = d["grid"]
        cells = tuple(g["cells"])
        lengths = tuple(g.get("lengths", [1.0] * len(cells)))
        grid = GridSpec(cells, lengths)
        mot = d["motility"]
        if not isinstance(mot, dict) or "family" not in mot:
            raise ParseError("motility must be an object with a 'family'")
        motility = motility_from_dict(mot, base_dir)
        solver = SolverSettings(**d.get("solver", {}))
    except ParseError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ParseError(str(exc)) from exc
    if dense_solver:
        solver = SolverSettings(solver.rel_tolerance, solver.max_iterations, "dense_direct",
                                solver.preconditioner)
    init = d["initial_data"]
    if not isinstance(init, dict) or "u" not in init or "v" not in init:
        raise ParseError("initial_data needs 'u' and 'v' entries")
    init_u, init_v = _init(init["u"], "u"), _init(init["v"], "v")
    if seed is not None:
        init_u, init_v = (
            InitSpec(s.kind, {**s.params, "seed": seed}) if s.kind == "RandomPositive" else s
            for s in (init_u, init_v)
        )
    out = d.get("output", {})
    if outside_theory is None:
        outside_theory = bool(d.get("outside_theory", False))
    cfg = SimConfig(
        grid=grid,
        motility=motility,
        tau=_num(d, "tau"),
        epsilon=_num(d, "epsilon"),
        epsilon0=_num(d, "epsilon0"),
        dt=_num(d, "dt"),
        T_final=_num(d, "T_final"),
        init_u=init_u,
        init_v=init_v,
        solver=solver,
        cadence=int(cadence if cadence is not None else out.get("cadence", 1)),
        snapshot_cadence=int(out.get("snapshot_cadence", 0)),
        outside_theory=outside_theory,
        base_dir=base_dir,
    )
    if validate:
        cfg.validate()
    return cfg


def parse_config(path, **overrides) -> SimConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_from_dict(d, path.parent, **overrides)


def write_diagnostics(path, records) -> None:
    from .audit import SCHEMA_VERSION, DiagnosticsRecord

    with open(path, "w", newline="") as fh:
        fh.write(f"# {SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DiagnosticsRecord.header())
        for r in records:
            w.writerow(r.as_row())


def read_diagnostics(path) -> list:
    from .audit import SCHEMA_VERSION, DiagnosticsRecord

    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# {SCHEMA_VERSION}":
            raise ParseError(f"{path}: unexpected schema line {first!r}")
        return [DiagnosticsRecord.from_row(row) for row in csv.DictReader(fh)]
