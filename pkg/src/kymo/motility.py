"""
Signal-dependent motility functions gamma(v) and their certified bounds.

Only boundedness from above is assumed; gamma need not be monotone, and the
tabulated family may oscillate, so nothing downstream may rely on the sign
of gamma'.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DomainViolation
from .grid import Field

__all__ = [
    "MotilitySpec",
    "ExpDecay",
    "Algebraic",
    "PowerLaw",
    "Constant",
    "Tabulated",
    "MotilityBoundsOnRange",
    "eval_gamma",
    "eval_gamma_prime",
    "certify_bounds",
    "motility_from_dict",
]


@dataclass(frozen=True)
class MotilityBoundsOnRange:
    v_star: float
    k_gamma: float
    K_gamma: float
    K_gamma_prime: float
    scan_points: int = 0

    def __post_init__(self):
        if not (0 < self.k_gamma <= self.K_gamma * (1 + 1e-12)):
            raise ValueError(f"inconsistent bounds k={self.k_gamma}, K={self.K_gamma}")
        if self.K_gamma_prime < 0:
            raise ValueError("K_gamma_prime must be nonnegative")


class MotilitySpec:
    """Base class: subclasses provide gamma, gamma_prime and bounds."""

    family: str = ""
    singular_at_zero = False

    @property
    def K_gamma(self) -> float:
        raise NotImplementedError

    def gamma(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gamma_prime(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bounds(self, v_star: float) -> MotilityBoundsOnRange:
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def symbolic(self, v):
        """sympy expression for gamma(v); used to build manufactured sources."""
        raise NotImplementedError(f"{self.family} has no symbolic form")

    def check_domain(self, v: np.ndarray) -> None:
        pass

    def to_dict(self) -> dict:
        return {"family": self.family, "params": self.params()}


@dataclass(frozen=True)
class ExpDecay(MotilitySpec):
    """gamma(v) = exp(-v)."""

    family = "ExpDecay"

    @property
    def K_gamma(self):
        return 1.0

    def gamma(self, v):
        return np.exp(-np.asarray(v, dtype=float))

    def gamma_prime(self, v):
        return -np.exp(-np.asarray(v, dtype=float))

    def bounds(self, v_star):
        return MotilityBoundsOnRange(v_star, math.exp(-v_star), 1.0, 1.0)

    def params(self):
        return {}

    def symbolic(self, v):
        import sympy

        return sympy.exp(-v)


@dataclass(frozen=True)
class Algebraic(MotilitySpec):
    """gamma(v) = 1 / (c + v**k)."""

    c: float = 1.0
    k: float = 1.0
    family = "Algebraic"

    def __post_init__(self):
        if self.c <= 0 or self.k <= 0:
            raise ValueError("Algebraic motility needs c > 0 and k > 0")

    @property
    def K_gamma(self):
        return 1.0 / self.c

    def gamma(self, v):
        v = np.asarray(v, dtype=float)
        return 1.0 / (self.c + np.maximum(v, 0.0) ** self.k)

    def gamma_prime(self, v):
        v = np.maximum(np.asarray(v, dtype=float), 0.0)
        with np.errstate(divide="ignore"):
            num = self.k * v ** (self.k - 1.0)
        return -num / (self.c + v**self.k) ** 2

    def bounds(self, v_star):
        c, k = self.c, self.k
        k_gamma = 1.0 / (c + v_star**k)
        if k < 1:
            # |gamma'| ~ k v^{k-1} / c^2 blows up at v = 0
            Kp = math.inf
        elif k == 1:
            Kp = 1.0 / c**2
        else:
            v_peak = (c * (k - 1) / (k + 1)) ** (1.0 / k)
            v_eval = min(v_peak, v_star)
            Kp = k * v_eval ** (k - 1) / (c + v_eval**k) ** 2
        return MotilityBoundsOnRange(v_star, k_gamma, 1.0 / c, Kp)

    def params(self):
        return {"c": self.c, "k": self.k}

    def symbolic(self, v):
        return 1 / (self.c + v**self.k)


@dataclass(frozen=True)
class PowerLaw(MotilitySpec):
    """gamma(v) = c0 * v**(-k), admissible only on v >= v_min > 0."""

    c0: float = 1.0
    k: float = 1.0
    v_min: float = 1.0
    family = "PowerLaw"
    singular_at_zero = True

    def __post_init__(self):
        if self.c0 <= 0 or self.k <= 0 or self.v_min <= 0:
            raise ValueError("PowerLaw motility needs c0, k, v_min > 0")

    @property
    def K_gamma(self):
        return self.c0 * self.v_min ** (-self.k)

    def check_domain(self, v):
        vmin = float(np.min(v))
        if vmin < self.v_min:
            raise DomainViolation(
                f"PowerLaw motility evaluated at v={vmin:.4g} below the floor v_min={self.v_min}"
            )

    def gamma(self, v):
        v = np.asarray(v, dtype=float)
        self.check_domain(v)
        return self.c0 * v ** (-self.k)

    def gamma_prime(self, v):
        v = np.asarray(v, dtype=float)
        self.check_domain(v)
        return -self.k * self.c0 * v ** (-self.k - 1)

    def bounds(self, v_star):
        if v_star < self.v_min:
            raise DomainViolation(f"v_star={v_star} lies below the PowerLaw floor v_min={self.v_min}")
        return MotilityBoundsOnRange(
            v_star,
            self.c0 * v_star ** (-self.k),
            self.K_gamma,
            self.k * self.c0 * self.v_min ** (-self.k - 1),
        )

    def params(self):
        return {"c0": self.c0, "k": self.k, "v_min": self.v_min}

    def symbolic(self, v):
        return self.c0 * v ** (-self.k)


@dataclass(frozen=True)
class Constant(MotilitySpec):
    g0: float = 1.0
    family = "Constant"

    def __post_init__(self):
        if self.g0 <= 0:
            raise ValueError("Constant motility needs g0 > 0")

    @property
    def K_gamma(self):
        return self.g0

    def gamma(self, v):
        return np.full(np.shape(v), self.g0)

    def gamma_prime(self, v):
        return np.zeros(np.shape(v))

    def bounds(self, v_star):
        return MotilityBoundsOnRange(v_star, self.g0, self.g0, 0.0)

    def params(self):
        return {"g0": self.g0}

    def symbolic(self, v):
        import sympy

        return sympy.Float(self.g0)


@dataclass(frozen=True)
class Tabulated(MotilitySpec):
    """Shape-preserving (PCHIP) interpolant through (v, gamma) knots.

    Knots must start at v = 0 and carry strictly positive gamma.  Beyond the
    last knot gamma is held constant.  PCHIP never overshoots its data, so
    the maximum knot value is a certified upper bound.
    """

    v_knots: tuple[float, ...] = ()
    g_knots: tuple[float, ...] = ()
    scan_points: int = 4001
    family = "Tabulated"
    _interp: PchipInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.v_knots, dtype=float)
        g = np.asarray(self.g_knots, dtype=float)
        if v.ndim != 1 or v.size < 2 or v.size != g.size:
            raise ValueError("Tabulated motility needs at least two (v, gamma) knots")
        if v[0] != 0.0 or np.any(np.diff(v) <= 0):
            raise ValueError("knots must start at v=0 and increase strictly")
        if np.any(g <= 0):
            raise ValueError("tabulated gamma values must be strictly positive")
        object.__setattr__(self, "v_knots", tuple(v))
        object.__setattr__(self, "g_knots", tuple(g))
        object.__setattr__(self, "_interp", PchipInterpolator(v, g, extrapolate=False))

    @classmethod
    def from_csv(cls, path) -> Tabulated:
        rows = []
        with open(Path(path), newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    continue  # header line
        v, g = zip(*rows)
        return cls(tuple(v), tuple(g))

    @property
    def v_max(self):
        return self.v_knots[-1]

    @property
    def K_gamma(self):
        return max(self.g_knots)

    def gamma(self, v):
        v = np.clip(np.asarray(v, dtype=float), 0.0, self.v_max)
        return self._interp(v)

    def gamma_prime(self, v):
        v = np.asarray(v, dtype=float)
        out = self._interp.derivative()(np.clip(v, 0.0, self.v_max))
        return np.where(v >= self.v_max, 0.0, out)

    def bounds(self, v_star):
        grid = np.linspace(0.0, v_star, self.scan_points)
        grid = np.union1d(grid, [x for x in self.v_knots if x <= v_star])
        g = self.gamma(grid)
        gp = np.abs(self.gamma_prime(grid))
        return MotilityBoundsOnRange(
            v_star, float(g.min()), self.K_gamma, float(gp.max()), scan_points=grid.size
        )

    def params(self):
        return {"knots": [[a, b] for a, b in zip(self.v_knots, self.g_knots)]}


_FAMILIES = {
    "ExpDecay": ExpDecay,
    "Algebraic": Algebraic,
    "PowerLaw": PowerLaw,
    "Constant": Constant,
    "Tabulated": Tabulated,
}


def motility_from_dict(d: dict, base_dir: Path | None = None) -> MotilitySpec:
    """Build a motility from ``{"family": name, "params": {...}}``."""
    family = d.get("family")
    if family not in _FAMILIES:
        raise ValueError(f"unknown motility family {family!r}; expected one of {sorted(_FAMILIES)}")
    params = dict(d.get("params", {}))
    if family == "Tabulated":
        if "csv" in params:
            path = Path(params["csv"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return Tabulated.from_csv(path)
        knots = np.asarray(params["knots"], dtype=float)
        return Tabulated(tuple(knots[:, 0]), tuple(knots[:, 1]))
    return _FAMILIES[family](**params)


def eval_gamma(spec: MotilitySpec, v: Field) -> Field:
    return Field(v.grid, spec.gamma(v.values))


def eval_gamma_prime(spec: MotilitySpec, v: Field) -> Field:
    return Field(v.grid, spec.gamma_prime(v.values))


def certify_bounds(spec: MotilitySpec, v_star: float) -> MotilityBoundsOnRange:
    if v_star < 0:
        raise ValueError("v_star must be nonnegative")
    return spec.bounds(float(v_star))
