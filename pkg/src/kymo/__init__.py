"""Finite-volume solver and estimate audits for a regularized chemotaxis system
with signal-dependent motility."""

from .elliptic import SolverSettings, helmholtz_inv, hminus1_norm, poisson_inv_meanzero
from .grid import Field, GridSpec
from .motility import Algebraic, Constant, ExpDecay, PowerLaw, Tabulated
from .scheme import InitSpec, SimConfig, initialize, run, step

__version__ = "0.1.0"

__all__ = [
    "GridSpec",
    "Field",
    "SolverSettings",
    "helmholtz_inv",
    "poisson_inv_meanzero",
    "hminus1_norm",
    "ExpDecay",
    "Algebraic",
    "PowerLaw",
    "Constant",
    "Tabulated",
    "InitSpec",
    "SimConfig",
    "initialize",
    "step",
    "run",
]
