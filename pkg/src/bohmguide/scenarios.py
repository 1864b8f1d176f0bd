"""Domain, packet and time-step sizing for step-scattering runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic import wavenumbers
from .model import EnergySpec, FieldPair, Grid, PhysicalParams, PotentialProfile, build_potential
from .tdse import EvolveConfig, PacketSpec, carrier_wavenumber, default_dt, gaussian_packet

__all__ = ["ScatteringPlan", "plan_scattering"]


@dataclass(frozen=True)
class ScatteringPlan:
    params: PhysicalParams
    spec: EnergySpec
    grid: Grid
    potential: PotentialProfile
    packet: PacketSpec
    config: EvolveConfig
    group_velocity: float
    t_center: float  # packet centre reaches the step
    probe: float  # extent of the step-side region watched for the plateau
    crop: tuple[float, float]  # region kept in snapshots

    def initial_field(self) -> FieldPair:
        return gaussian_packet(self.grid, self.packet)


def _k1_scale(params: PhysicalParams, spec: EnergySpec) -> float:
    if params.J0 == 0:
        return 0.0
    if abs(spec.delta) > params.J0:
        return wavenumbers(params, spec, exact=True).k1
    return params.m * params.J0 / np.sqrt(2 * params.m * abs(spec.delta))


def plan_scattering(
    params: PhysicalParams,
    spec: EnergySpec,
    *,
    dx: float | None = None,
    sigma: float | None = None,
    plateau_sigmas: float = 34.0,
    full_reflection: bool = False,
    dt: float | None = None,
    n_snapshots: int = 150,
    gap_sigmas: float = 3.2,
    max_sigma: float = 3e-4,
    min_sigma_k: float = 20.0,
) -> ScatteringPlan:
    """Size a run in which a long packet hits the step from the left.

    ``plateau_sigmas`` sets the flat-top length in units of the edge width
    (0 gives a plain Gaussian).  The erf edges eat about 7 widths at each end
    before the amplitude is flat to 1e-6, so the default leaves ~20 widths of
    truly flat field.  The edge width defaults to ``gap_sigmas``
    times the momentum spread that would reach the nearest transmission
    threshold, clipped to ``[min_sigma_k / k, max_sigma]``.  Plateau runs
    stop 30% of a plateau length after the centre arrives; with
    ``full_reflection`` the run continues until the packet has left the step.
    """
    m = params.m
    k1 = _k1_scale(params, spec)
    k0_cont = np.sqrt(2 * m * spec.E)
    if dx is None:
        dx = 0.1 / k0_cont
        if k1 > 0:
            dx = min(dx, 0.1 / (15 * k1))
    k = carrier_wavenumber(spec.E, m, dx)
    vg = np.sin(k * dx) / (m * dx)

    threshold = params.V0 - 2 * params.J0  # lowest step-side mode
    gap = abs(spec.E - threshold) if spec.E < threshold else abs(spec.delta)
    if sigma is None:
        sigma = gap_sigmas * vg / gap
        sigma = float(np.clip(sigma, min_sigma_k / k, max_sigma))
    plateau = plateau_sigmas * sigma
    packet = PacketSpec(x0=-1.0, sigma=sigma, k=k, plateau=plateau, min_sigma_k=min_sigma_k)
    he = packet.half_extent
    x0 = -(he + sigma)
    packet = PacketSpec(x0=x0, sigma=sigma, k=k, plateau=plateau, min_sigma_k=min_sigma_k)

    t_center = abs(x0) / vg
    if full_reflection:
        t_end = (2 * he + 3 * sigma) / vg
        x_min = -(2 * he + 5 * sigma)
    else:
        t_end = t_center + 0.3 * plateau / vg
        x_min = x0 - he - 2 * sigma

    # Fastest possible transmitted component, from the top of the packet spectrum.
    e_top = spec.E + 4 * vg / (2 * sigma)
    v_fast = np.sqrt(2 * max(e_top - threshold, 0.0) / m)
    x_max = 1.1 * v_fast * t_end + 10 * sigma * v_fast / vg
    if not spec.allowed:
        kappa = np.sqrt(2 * m * max(abs(spec.delta) - params.J0, 1e-3 * abs(spec.delta)))
        x_max = max(x_max, 25 / kappa)
    x_max = max(x_max, 200 * dx)

    grid = Grid.from_spacing(x_min, x_max, dx)
    potential = build_potential(params, grid)
    if dt is None:
        dt = default_dt(potential, k + 3 / sigma)
    n_steps = int(np.ceil(t_end / dt))
    stride = max(1, n_steps // n_snapshots)
    config = EvolveConfig(dt=dt, t_end=n_steps * dt, snapshot_stride=stride, energy_ref=spec.E)

    probe = 0.3 / k1 if k1 > 0 else 50 * dx
    probe = float(min(max(probe, 20 * dx), grid.x_max))
    crop_right = grid.x_max if not spec.allowed else max(probe, min(grid.x_max, 3e-4))
    crop = (-min(8 * np.pi / k, abs(grid.x_min)), float(min(crop_right, 3e-4)))
    return ScatteringPlan(
        params=params,
        spec=spec,
        grid=grid,
        potential=potential,
        packet=packet,
        config=config,
        group_velocity=float(vg),
        t_center=float(t_center),
        probe=probe,
        crop=crop,
    )
