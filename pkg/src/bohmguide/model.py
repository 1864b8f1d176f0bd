"""Domain types shared by every other module.

All quantities use SI metres and seconds with hbar = 1, so energies and
potentials are angular frequencies (s^-1) and the mass carries units of
s m^-2.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "PAPER_PARAMS",
    "EnergySpec",
    "FieldPair",
    "Grid",
    "PhysicalParams",
    "PotentialProfile",
    "Regime",
    "build_potential",
    "energy_spec",
    "spec_from_delta",
]


class Regime(enum.Enum):
    ALLOWED = "allowed"
    FORBIDDEN = "forbidden"


@dataclass(frozen=True)
class PhysicalParams:
    """Mass, step height and inter-guide coupling (hbar = 1)."""

    m: float
    V0: float
    J0: float

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError(f"mass must be positive, got {self.m}")
        if not self.V0 > 0:
            raise ValueError(f"V0 must be positive, got {self.V0}")
        # J0 = 0 is permitted for decoupled-guide checks.
        if not self.J0 >= 0:
            raise ValueError(f"J0 must be non-negative, got {self.J0}")


PAPER_PARAMS = PhysicalParams(m=0.0659, V0=817e9, J0=40e9)


@dataclass(frozen=True)
class EnergySpec:
    E: float
    delta: float
    regime: Regime

    @property
    def allowed(self) -> bool:
        return self.regime is Regime.ALLOWED


def energy_spec(params: PhysicalParams, E: float) -> EnergySpec:
    """Classify a total energy by the sign of ``delta = E - V0 + J0``.

    Raises ``ValueError`` for non-positive ``E`` and for the degenerate
    crossover ``delta == 0`` (tested to ``1e-12 * V0``).
    """
    if not E > 0:
        raise ValueError(f"energy must be positive, got {E}")
    delta = E - params.V0 + params.J0
    if abs(delta) <= 1e-12 * params.V0:
        raise ValueError("delta = E - V0 + J0 vanishes; the crossover point is unsupported")
    regime = Regime.ALLOWED if delta > 0 else Regime.FORBIDDEN
    return EnergySpec(E=float(E), delta=float(delta), regime=regime)


def spec_from_delta(params: PhysicalParams, delta: float) -> EnergySpec:
    """Energy spec for a requested detuning ``delta``."""
    return energy_spec(params, delta + params.V0 - params.J0)


@dataclass(frozen=True)
class Grid:
    """Uniform 1-D grid whose nodes include the step location x = 0."""

    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("grid needs at least 3 nodes")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if not self.x_min <= 0 <= self.x_max:
            raise ValueError("grid must contain x = 0")
        i0 = -self.x_min / self.dx
        if abs(i0 - round(i0)) > 1e-6:
            raise ValueError(f"x = 0 is not a grid node (fractional index {i0:.6f})")

    @classmethod
    def from_spacing(cls, x_min: float, x_max: float, dx: float) -> "Grid":
        """Grid with spacing ``dx`` covering at least ``[x_min, x_max]``, aligned on x = 0."""
        i_lo = int(np.ceil(-x_min / dx - 1e-9))
        i_hi = int(np.ceil(x_max / dx - 1e-9))
        return cls(x_min=-i_lo * dx, x_max=i_hi * dx, n=i_lo + i_hi + 1)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def i0(self) -> int:
        """Index of the node at x = 0."""
        return int(round(-self.x_min / self.dx))

    @property
    def x(self) -> np.ndarray:
        # Built from the step index so that x[i0] is exactly 0.0.
        return (np.arange(self.n) - self.i0) * self.dx


@dataclass(frozen=True, eq=False)
class PotentialProfile:
    v_m: np.ndarray
    v_a: np.ndarray
    v_i: np.ndarray
    wall_mask: np.ndarray
    grid: Grid
    params: PhysicalParams


def build_potential(params: PhysicalParams, grid: Grid) -> PotentialProfile:
    """Discretise the piecewise step potentials on ``grid``.

    The node at exactly x = 0 takes the step-side values.  The auxiliary
    guide is clamped on x < 0 and additionally at x = 0 itself, which is
    where the continuum Dirichlet condition psi_a(0) = 0 lives.
    """
    x = grid.x
    right = x >= 0
    v_step = params.V0 - params.J0
    v_m = np.where(right, v_step, 0.0)
    v_a = np.where(right, v_step, 0.0)
    v_i = np.where(right, params.J0, 0.0)
    wall = x <= 0
    for a in (v_m, v_a, v_i, wall):
        a.setflags(write=False)
    return PotentialProfile(v_m=v_m, v_a=v_a, v_i=v_i, wall_mask=wall, grid=grid, params=params)


@dataclass(frozen=True, eq=False)
class FieldPair:
    """Main/auxiliary amplitudes on a grid at time ``t``."""

    psi_m: np.ndarray
    psi_a: np.ndarray
    grid: Grid
    t: float = 0.0

    def __post_init__(self):
        n = self.grid.n
        if self.psi_m.shape != (n,) or self.psi_a.shape != (n,):
            raise ValueError("field arrays must have length grid.n")
        if np.any(self.psi_a[: self.grid.i0] != 0):
            raise ValueError("psi_a must vanish on x < 0")

    @property
    def density_m(self) -> np.ndarray:
        return np.abs(self.psi_m) ** 2

    @property
    def density_a(self) -> np.ndarray:
        return np.abs(self.psi_a) ** 2

    @property
    def density(self) -> np.ndarray:
        return self.density_m + self.density_a

    def norm(self) -> float:
        return float(np.sum(self.density) * self.grid.dx)

    def with_time(self, t: float) -> "FieldPair":
        return replace(self, t=t)

    def crop(self, x_lo: float, x_hi: float) -> "FieldPair":
        """Restrict to the nodes within ``[x_lo, x_hi]`` (x_lo < 0 <= x_hi)."""
        g = self.grid
        lo = max(0, g.i0 - int(np.floor(-x_lo / g.dx + 1e-9)))
        hi = min(g.n - 1, g.i0 + int(np.floor(x_hi / g.dx + 1e-9)))
        sub = Grid(x_min=(lo - g.i0) * g.dx, x_max=(hi - g.i0) * g.dx, n=hi - lo + 1)
        return FieldPair(self.psi_m[lo : hi + 1].copy(), self.psi_a[lo : hi + 1].copy(), sub, self.t)
