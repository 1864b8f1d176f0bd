"""Closed-form results for the two-state model and the stationary step states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import EnergySpec, FieldPair, Grid, PhysicalParams, Regime

__all__ = [
    "DEFAULT_GUARD",
    "MatchingCoefficients",
    "RegimeGuardError",
    "Wavenumbers",
    "apparent_speed",
    "matching_coefficients",
    "pa_profile",
    "quartic_residual",
    "stationary_state",
    "two_state_evolve",
    "wavenumbers",
]

DEFAULT_GUARD = 2.0


class RegimeGuardError(ValueError):
    """Raised when |delta| / J0 is too small for the requested branch."""


def two_state_evolve(J0: float, t: float) -> tuple[complex, complex]:
    """Main/auxiliary amplitudes of the two-level model started in the main guide."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return complex(np.cos(J0 * t)), complex(-1j * np.sin(J0 * t))


@dataclass(frozen=True)
class Wavenumbers:
    k0: float
    k1: float
    k2: float
    exact: bool


def wavenumbers(
    params: PhysicalParams, spec: EnergySpec, exact: bool = False, guard: float = DEFAULT_GUARD
) -> Wavenumbers:
    """Incident, population-transfer and propagation/decay wavenumbers.

    The approximate branch uses ``k2 = sqrt(2 m |delta|)`` and
    ``k1 = m J0 / k2``.  The exact branch takes the larger root of

        k2**4 - 2 m |delta| k2**2 + (m J0)**2 = 0,

    which in both regimes makes ``k2 +- k1`` the true wavenumbers (or decay
    constants) of the two coupled-guide eigenmodes.  It needs
    ``|delta| > J0``; the approximate branch needs ``|delta| / J0 >= guard``.
    """
    m, J0 = params.m, params.J0
    k0 = float(np.sqrt(2.0 * m * spec.E))
    ad = abs(spec.delta)
    if exact:
        if J0 >= ad:
            raise RegimeGuardError(
                f"|delta| = {ad:.4g} does not exceed J0 = {J0:.4g}; the quartic has no real root"
            )
        ratio = J0 / ad
        # sqrt(1 - r^2) written to avoid cancellation when r is tiny.
        k2 = float(np.sqrt(m * ad * (1.0 + np.sqrt((1.0 - ratio) * (1.0 + ratio)))))
    else:
        if J0 > 0 and ad / J0 < guard:
            raise RegimeGuardError(
                f"|delta|/J0 = {ad / J0:.3g} is below the guard {guard:g}; the approximate "
                "dispersion assumes |delta| >> J0 (use exact=True or lower the guard)"
            )
        k2 = float(np.sqrt(2.0 * m * ad))
    k1 = m * J0 / k2
    return Wavenumbers(k0=k0, k1=k1, k2=k2, exact=exact)


def quartic_residual(params: PhysicalParams, spec: EnergySpec, k2: float) -> float:
    """Relative residual of the exact dispersion quartic at ``k2``."""
    a = 2.0 * params.m * abs(spec.delta) * k2**2
    r = k2**4 - a + (params.m * params.J0) ** 2
    return abs(r) / a


@dataclass(frozen=True)
class MatchingCoefficients:
    c_i: complex
    c_r: complex
    a: complex

    @property
    def reflection_ratio(self) -> float:
        return abs(self.c_r) / abs(self.c_i)


def matching_coefficients(spec: EnergySpec, k: Wavenumbers, a: complex = 1.0) -> MatchingCoefficients:
    """Incident and reflected amplitudes from value/slope continuity of psi_m at x = 0."""
    q = k.k2 / k.k0 if spec.allowed else 1j * k.k2 / k.k0
    return MatchingCoefficients(c_i=0.5 * (1 + q) * a, c_r=0.5 * (1 - q) * a, a=complex(a))


def stationary_state(
    params: PhysicalParams,
    spec: EnergySpec,
    grid: Grid,
    a: complex = 1.0,
    exact: bool = False,
    guard: float = DEFAULT_GUARD,
) -> FieldPair:
    """Sample the matched plane-wave ansatz on ``grid``.

    The amplitude ``a`` only fixes the overall scale; the states are not
    normalisable.  Use ``exact=True`` for a true eigenstate of the coupled
    equations (the approximate wavenumbers leave an O((J0/delta)^2) residual).
    """
    k = wavenumbers(params, spec, exact=exact, guard=guard)
    c = matching_coefficients(spec, k, a)
    x = grid.x
    left = x < 0
    xr = np.where(left, 0.0, x)
    if spec.regime is Regime.ALLOWED:
        carrier = np.exp(1j * k.k2 * xr)
        right_m = c.a * np.cos(k.k1 * xr) * carrier
        right_a = -1j * c.a * np.sin(k.k1 * xr) * carrier
    else:
        carrier = np.exp(-k.k2 * xr)
        right_m = c.a * np.cosh(k.k1 * xr) * carrier
        right_a = -c.a * np.sinh(k.k1 * xr) * carrier
    xl = np.where(left, x, 0.0)
    incident = c.c_i * np.exp(1j * k.k0 * xl) + c.c_r * np.exp(-1j * k.k0 * xl)
    psi_m = np.where(left, incident, right_m)
    psi_a = np.where(left, 0.0, right_a).astype(complex)
    return FieldPair(psi_m=psi_m.astype(complex), psi_a=psi_a, grid=grid)


def pa_profile(field: FieldPair) -> np.ndarray:
    """Auxiliary-guide fraction ``|psi_a|^2 / (|psi_m|^2 + |psi_a|^2)`` per node.

    Nodes with zero total density are returned as NaN.
    """
    rho_a = field.density_a
    total = field.density_m + rho_a
    out = np.full(total.shape, np.nan)
    ok = total > 0
    out[ok] = rho_a[ok] / total[ok]
    return out


def apparent_speed(delta: float, m: float) -> float:
    """Speed ``sqrt(2 |delta| / m)`` implied by the small-x population law."""
    if delta == 0:
        raise ValueError("delta must be non-zero")
    return float(np.sqrt(2.0 * abs(delta) / m))
