"""
Cell-centered tensor grids with homogeneous Neumann operators.

The domain is a box Ω = [0, L_0] × ... × [0, L_{d-1}] (d = 1 or 2) split into
uniform cells.  Field values are cell averages stored in C order, axis 0
slowest.  The zero-flux boundary is built into the stencils by reflecting a
ghost cell across every boundary face, so boundary faces carry no flux and

    sum_i (L f)_i |cell| = 0

holds to rounding for every f.  Gradients live on interior faces; every
discrete integral of a gradient quantity is a sum over faces weighted by the
face control volume (one cell volume per face).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import NegativeDensity

__all__ = [
    "GridSpec",
    "Field",
    "laplacian_matrix",
    "laplacian_neumann",
    "apply_laplacian",
    "integrate",
    "inner",
    "norm",
    "face_gradients",
    "face_averages",
    "grad_norm",
    "entropy",
    "laplacian_eigenvalues",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centered grid on a box anchored at the origin."""

    cells: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        cells = tuple(int(n) for n in np.atleast_1d(self.cells))
        lengths = tuple(float(x) for x in np.atleast_1d(self.lengths))
        if len(cells) not in (1, 2):
            raise ValueError(f"only 1D and 2D grids are supported, got dim={len(cells)}")
        if len(lengths) != len(cells):
            raise ValueError("cells and lengths must have the same number of axes")
        if any(n < 2 for n in cells):
            raise ValueError(f"need at least 2 cells per axis, got {cells}")
        if any(not np.isfinite(x) or x <= 0 for x in lengths):
            raise ValueError(f"axis lengths must be positive, got {lengths}")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def uniform(cls, n: int, dim: int = 1, length: float = 1.0) -> GridSpec:
        return cls((n,) * dim, (length,) * dim)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.cells))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def measure(self) -> float:
        return float(np.prod(self.lengths))

    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell-center coordinates, one broadcastable array per axis."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.cells, self.h)]
        return tuple(np.meshgrid(*axes, indexing="ij"))


class Field:
    """Immutable cell-averaged scalar field on a grid."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: GridSpec, values):
        arr = np.array(values, dtype=float)
        if arr.size == 1 and grid.n_cells != 1:
            arr = np.full(grid.shape, float(arr.reshape(-1)[0]))
        if arr.size != grid.n_cells:
            raise ValueError(f"expected {grid.n_cells} values, got {arr.size}")
        arr = arr.reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Field is immutable")

    @classmethod
    def constant(cls, grid: GridSpec, c: float) -> Field:
        return cls(grid, np.full(grid.shape, float(c)))

    @classmethod
    def from_function(cls, grid: GridSpec, func: Callable[..., np.ndarray]) -> Field:
        vals = np.broadcast_to(func(*grid.centers()), grid.shape)
        return cls(grid, vals)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def __repr__(self):
        return f"Field(grid={self.grid}, min={self.min():.4g}, max={self.max():.4g})"


def _lap1d(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2


@lru_cache(maxsize=32)
def laplacian_matrix(grid: GridSpec) -> sp.csr_matrix:
    """Sparse Neumann Laplacian acting on C-ordered flattened values."""
    if grid.dim == 1:
        return _lap1d(grid.cells[0], grid.h[0])
    n0, n1 = grid.cells
    h0, h1 = grid.h
    return (
        sp.kron(_lap1d(n0, h0), sp.identity(n1), format="csr")
        + sp.kron(sp.identity(n0), _lap1d(n1, h1), format="csr")
    ).tocsr()


@lru_cache(maxsize=32)
def laplacian_eigenvalues(grid: GridSpec) -> np.ndarray:
    """Eigenvalues of the Neumann Laplacian in the orthonormal DCT-II basis.

    Entry k of the returned array (shape = grid.shape) is the eigenvalue of
    the cosine mode cos(pi k (i + 1/2) / n) along each axis; all entries are
    <= 0 and only the constant mode vanishes.
    """
    lam = np.zeros(grid.shape)
    for ax, (n, h) in enumerate(zip(grid.cells, grid.h)):
        k = np.arange(n)
        lam_ax = -4.0 / h**2 * np.sin(np.pi * k / (2 * n)) ** 2
        shape = [1] * grid.dim
        shape[ax] = n
        lam = lam + lam_ax.reshape(shape)
    lam.flags.writeable = False
    return lam


def apply_laplacian(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    """Matrix-free flux form: per axis, face differences padded with zero
    boundary flux, then differenced again.  Constants map to exact zeros."""
    values = np.asarray(values, dtype=float).reshape(grid.shape)
    out = np.zeros(grid.shape)
    for ax, h in enumerate(grid.h):
        flux = np.diff(values, axis=ax)
        pad = [(0, 0)] * grid.dim
        pad[ax] = (1, 1)
        out += np.diff(np.pad(flux, pad), axis=ax) / (h * h)
    return out


def laplacian_neumann(f: Field) -> Field:
    return Field(f.grid, apply_laplacian(f.grid, f.values))


def integrate(f: Field) -> float:
    return float(np.sum(f.values) * f.grid.cell_volume)


def inner(f: Field, g: Field) -> float:
    """Cell-volume weighted L2 inner product."""
    return float(np.sum(f.values * g.values) * f.grid.cell_volume)


def norm(f: Field, which: str | float = "L2") -> float:
    """Discrete Lebesgue norm: 'L1', 'L2', 'Linf', or a real p >= 1."""
    a = np.abs(f.values)
    if which in ("Linf", np.inf):
        return float(a.max())
    if which == "L1":
        p = 1.0
    elif which == "L2":
        p = 2.0
    else:
        p = float(which)
        if p < 1:
            raise ValueError(f"p must be >= 1, got {p}")
    return float((np.sum(a**p) * f.grid.cell_volume) ** (1.0 / p))


def face_gradients(grid: GridSpec, values: np.ndarray) -> list[np.ndarray]:
    """One-sided differences across interior faces, one array per axis.

    Boundary faces are omitted: their gradient is zero by the Neumann
    condition and contributes nothing to any face integral.
    """
    values = np.reshape(values, grid.shape)
    return [np.diff(values, axis=ax) / h for ax, h in enumerate(grid.h)]


def face_averages(grid: GridSpec, values: np.ndarray) -> list[np.ndarray]:
    """Arithmetic mean of the two cells adjacent to each interior face."""
    values = np.reshape(values, grid.shape)
    out = []
    for ax in range(grid.dim):
        lo = np.take(values, np.arange(grid.cells[ax] - 1), axis=ax)
        hi = np.take(values, np.arange(1, grid.cells[ax]), axis=ax)
        out.append(0.5 * (lo + hi))
    return out


def grad_norm(f: Field, p: float = 2.0) -> float:
    """L^p norm of the face gradient, each face weighted by a cell volume."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    total = sum(np.sum(np.abs(g) ** p) for g in face_gradients(f.grid, f.values))
    return float((total * f.grid.cell_volume) ** (1.0 / p))


def entropy(f: Field) -> float:
    """∫ f log f with 0 log 0 = 0."""
    vals = f.values
    if np.any(vals < 0):
        raise NegativeDensity(f"entropy of a field with minimum {vals.min():.3e}")
    pos = vals > 0
    return float(np.sum(vals[pos] * np.log(vals[pos])) * f.grid.cell_volume)
