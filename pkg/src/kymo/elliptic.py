"""
Inverse Neumann elliptic operators on a cell-centered grid.

All systems solved here have the form (D - beta L) x = b with D a positive
diagonal and L the Neumann Laplacian, so they are symmetric positive
definite and solved by preconditioned conjugate gradients.  The mean-zero
Poisson problem -L phi = f - mean(f) is singular; it is solved in the
orthogonal complement of constants by projecting every residual and search
direction.

Two preconditioners are available.  ``"spectral"`` inverts the
constant-coefficient part (c I - beta L) exactly with an orthonormal DCT-II,
which is the eigenbasis of the cell-centered Neumann Laplacian; for the
screened Poisson problem CG then terminates after a single iteration.
``"jacobi"`` is plain diagonal scaling.  ``mode="dense_direct"`` assembles
the dense matrix and factorizes it; it is meant as a test oracle on small
grids.

Stopping rule: ||b - A x||_inf <= rel_tolerance * ||b||_inf.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft

from .errors import NonConvergence
from .grid import Field, GridSpec, apply_laplacian, laplacian_eigenvalues, laplacian_matrix

__all__ = [
    "SolverSettings",
    "SolveStats",
    "pcg",
    "solve_shifted",
    "solve_variable",
    "solve_poisson_meanzero",
    "helmholtz_inv",
    "poisson_inv_meanzero",
    "hminus1_norm",
]

DENSE_MAX_CELLS = 64 * 64


@dataclass(frozen=True)
class SolverSettings:
    rel_tolerance: float = 1e-10
    max_iterations: int = 10_000
    mode: str = "iterative"
    preconditioner: str = "spectral"

    def __post_init__(self):
        if not 0 < self.rel_tolerance < 1:
            raise ValueError(f"rel_tolerance must lie in (0, 1), got {self.rel_tolerance}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if self.mode not in ("iterative", "dense_direct"):
            raise ValueError(f"unknown solver mode {self.mode!r}")
        if self.preconditioner not in ("spectral", "jacobi", "none"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass(frozen=True)
class SolveStats:
    iterations: int
    residual: float


def pcg(apply_A, b, apply_Minv=None, rel_tolerance=1e-10, max_iterations=10_000,
        x0=None, project=None):
    """Preconditioned conjugate gradients on flat arrays.

    ``project``, if given, is applied to the initial residual and every
    preconditioned residual to keep iterates in an invariant subspace.
    Returns (x, SolveStats); raises NonConvergence.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.max(np.abs(b)) if b.size else 0.0
    if bnorm == 0.0:
        return np.zeros_like(b), SolveStats(0, 0.0)
    # the system is linear: iterate on b / ||b|| so inner products cannot underflow
    b = b / bnorm
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float) / bnorm
    r = b - apply_A(x) if x0 is not None else b.copy()
    if project is not None:
        r = project(r)
    res = np.max(np.abs(r))
    if res <= rel_tolerance:
        return x * bnorm, SolveStats(0, float(res))
    z = apply_Minv(r) if apply_Minv is not None else r.copy()
    if project is not None:
        z = project(z)
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iterations + 1):
        Ap = apply_A(p)
        pAp = p @ Ap
        if not pAp > 0:
            raise NonConvergence(it, float(res))
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if project is not None:
            r = project(r)
        res = np.max(np.abs(r))
        if res <= rel_tolerance:
            return x * bnorm, SolveStats(it, float(res))
        z = apply_Minv(r) if apply_Minv is not None else r.copy()
        if project is not None:
            z = project(z)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NonConvergence(max_iterations, float(res))


def _spectral_inverse(grid: GridSpec, c: float, beta: float):
    """x -> (c I - beta L)^{-1} x via DCT; the zero mode is dropped when c == 0."""
    symbol = c - beta * laplacian_eigenvalues(grid)
    inv = np.zeros_like(symbol)
    nz = symbol > 0
    inv[nz] = 1.0 / symbol[nz]

    def apply(r):
        rhat = fft.dctn(r.reshape(grid.shape), type=2, norm="ortho")
        return fft.idctn(rhat * inv, type=2, norm="ortho").ravel()

    return apply


def _dense(grid: GridSpec, diag, beta):
    if grid.n_cells > DENSE_MAX_CELLS:
        raise ValueError(
            f"dense_direct mode is limited to {DENSE_MAX_CELLS} cells, grid has {grid.n_cells}"
        )
    A = -beta * laplacian_matrix(grid).toarray()
    A[np.diag_indices_from(A)] += diag
    return A


def solve_variable(grid: GridSpec, b, diag, beta: float, settings: SolverSettings,
                   x0=None):
    """Solve (diag(d) - beta L) x = b for a positive cell array d and beta >= 0."""
    b = np.ravel(np.asarray(b, dtype=float))
    d = np.broadcast_to(np.ravel(np.asarray(diag, dtype=float)), b.shape)
    if settings.mode == "dense_direct":
        x = np.linalg.solve(_dense(grid, d, beta), b)
        return x.reshape(grid.shape), SolveStats(0, 0.0)
    L = laplacian_matrix(grid)

    def apply_A(x):
        return d * x - beta * (L @ x)

    if settings.preconditioner == "spectral":
        Minv = _spectral_inverse(grid, float(np.mean(d)), beta)
    elif settings.preconditioner == "jacobi":
        jd = 1.0 / (d - beta * L.diagonal())
        Minv = lambda r: jd * r  # noqa: E731
    else:
        Minv = None
    x, stats = pcg(apply_A, b, Minv, settings.rel_tolerance, settings.max_iterations,
                   x0=None if x0 is None else np.ravel(x0))
    return x.reshape(grid.shape), stats


def solve_shifted(grid: GridSpec, b, alpha: float, beta: float, settings: SolverSettings,
                  x0=None):
    """Solve (alpha I - beta L) x = b with alpha > 0, beta >= 0."""
    return solve_variable(grid, b, alpha, beta, settings, x0=x0)


def _center(values):
    return values - np.mean(values)


def solve_poisson_meanzero(grid: GridSpec, f, settings: SolverSettings):
    """Solve -L phi = f - mean(f) with mean(phi) = 0."""
    g = _center(np.ravel(np.asarray(f, dtype=float)))
    if settings.mode == "dense_direct":
        n = grid.n_cells
        A = _dense(grid, 0.0, 1.0)
        # rank-one fill of the constant direction; the solution of the filled
        # system with a centered right-hand side is automatically mean-zero
        A += np.full((n, n), np.mean(np.diag(A)) / n)
        phi = _center(np.linalg.solve(A, g))
        return phi.reshape(grid.shape), SolveStats(0, 0.0)
    L = laplacian_matrix(grid)

    def apply_A(x):
        return -(L @ x)

    if settings.preconditioner == "spectral":
        Minv = _spectral_inverse(grid, 0.0, 1.0)
    elif settings.preconditioner == "jacobi":
        jd = 1.0 / (-L.diagonal())
        Minv = lambda r: jd * r  # noqa: E731
    else:
        Minv = None
    phi, stats = pcg(apply_A, g, Minv, settings.rel_tolerance, settings.max_iterations,
                     project=_center)
    return _center(phi).reshape(grid.shape), stats


def helmholtz_inv(f: Field, s: SolverSettings = SolverSettings(), return_stats=False):
    """w = (I - L)^{-1} f under the Neumann condition."""
    w, stats = solve_shifted(f.grid, f.values, 1.0, 1.0, s)
    out = Field(f.grid, w)
    return (out, stats) if return_stats else out


def poisson_inv_meanzero(f: Field, s: SolverSettings = SolverSettings(), return_stats=False):
    phi, stats = solve_poisson_meanzero(f.grid, f.values, s)
    out = Field(f.grid, phi)
    return (out, stats) if return_stats else out


def hminus1_norm(f: Field, s: SolverSettings = SolverSettings()) -> float:
    """||f - mean f||_{H^-1} = sqrt(<f - mean f, (-L)^+ (f - mean f)>)."""
    phi, _ = solve_poisson_meanzero(f.grid, f.values, s)
    q = float(np.sum(_center(f.values) * phi) * f.grid.cell_volume)
    return float(np.sqrt(max(q, 0.0)))


def laplacian_residual(grid: GridSpec, x, b, alpha=1.0, beta=1.0) -> float:
    """||(alpha I - beta L) x - b||_inf, for invariant checks."""
    return float(np.max(np.abs(alpha * x - beta * apply_laplacian(grid, x) - b)))
