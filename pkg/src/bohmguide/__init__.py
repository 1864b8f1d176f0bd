"""Schrodinger and pilot-wave dynamics of a particle in two coupled waveguides.

The main guide carries a potential step at ``x = 0``; the auxiliary guide
is closed for ``x < 0``.  Units have hbar = 1: energies and rates in s^-1,
the mass in s m^-2, lengths in m.
"""

from .analysis import dwell_time, fit_k1, fringe_amplitudes, inferred_speed, measure_speed, sweep
from .analytic import (
    apparent_speed,
    matching_coefficients,
    pa_profile,
    stationary_state,
    two_state_evolve,
    wavenumbers,
)
from .bohmian import (
    Ensemble,
    advance,
    continuity_residual,
    dwell_statistics,
    equivariance_check,
    guidance,
    propagate,
    sample_ensemble,
)
from .model import (
    PAPER_PARAMS,
    EnergySpec,
    FieldPair,
    Grid,
    PhysicalParams,
    PotentialProfile,
    Regime,
    build_potential,
    energy_spec,
    spec_from_delta,
)
from .scenarios import plan_scattering
from .tdse import (
    EvolveConfig,
    PacketSpec,
    Propagator,
    evolve,
    gaussian_packet,
    probability_current,
    quasi_stationary_pa,
    step,
    stored_number,
)

__version__ = "0.1.0"
