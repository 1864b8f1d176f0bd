"""Speed inference from the auxiliary-guide profile, dwell times and sweeps."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .analytic import DEFAULT_GUARD, apparent_speed, wavenumbers
from .model import EnergySpec, FieldPair, Grid, PhysicalParams, spec_from_delta
from .scenarios import plan_scattering
from .tdse import evolve, probability_current, quasi_stationary_pa, stored_number

log = logging.getLogger(__name__)

__all__ = [
    "DwellError",
    "FitWindowError",
    "FringeError",
    "SpeedMeasurement",
    "SweepRow",
    "dwell_time",
    "fit_k1",
    "fringe_amplitudes",
    "inferred_speed",
    "measure_speed",
    "sweep",
    "write_sweep_csv",
]

ZERO_CURRENT = 1e-9  # |j| below this fraction of the incident flux counts as zero


class FitWindowError(ValueError):
    """The small-x fit window holds too few nodes."""


class FringeError(ValueError):
    """Incident/reflected amplitudes could not be read off the fringes."""


class DwellError(ValueError):
    """The field is not quasi-stationary."""


def fit_k1(
    pa: np.ndarray, grid: Grid, window_max_pa: float = 0.01, min_nodes: int = 8
) -> tuple[float, float]:
    """Slope of ``sqrt(p_a)`` against ``x`` through the origin.

    The window is the contiguous run of nodes from ``x = 0`` on which
    ``p_a <= window_max_pa`` (a NaN ends it).

    Returns
    -------
    k1_hat, stderr : float
        Least-squares slope and its standard error from the residuals.
    """
    pa = np.asarray(pa, float)
    if pa.shape != (grid.n,):
        raise ValueError("pa does not match the grid")
    tail = pa[grid.i0 :]
    bad = ~(np.isfinite(tail) & (tail <= window_max_pa))
    stop = int(np.argmax(bad)) if bad.any() else tail.size
    if stop < min_nodes:
        raise FitWindowError(
            f"only {stop} nodes with p_a <= {window_max_pa:g} next to the step (need {min_nodes}); "
            "refine the grid or raise window_max_pa"
        )
    x = grid.x[grid.i0 : grid.i0 + stop]
    y = np.sqrt(np.maximum(tail[:stop], 0.0))
    sxx = float(x @ x)
    k1 = float(x @ y) / sxx
    res = y - k1 * x
    stderr = math.sqrt(float(res @ res) / max(stop - 1, 1) / sxx)
    return k1, stderr


def inferred_speed(k1_hat: float, J0: float) -> float:
    """Speed ``J0 / k1_hat`` read off the small-x law ``p_a = (J0 x / v)^2``."""
    if not k1_hat > 0:
        raise ValueError("k1_hat must be positive")
    return J0 / k1_hat


def _refine_extremum(y: np.ndarray, i: int) -> float:
    if i == 0 or i == y.size - 1:
        return float(y[i])
    a, b, c = y[i - 1], y[i], y[i + 1]
    den = a - 2 * b + c
    if den == 0:
        return float(b)
    return float(b - 0.125 * (c - a) ** 2 / den)


def fringe_amplitudes(field: FieldPair, span: float) -> tuple[float, float]:
    """``|C_I|`` and ``|C_R|`` from the interference pattern on ``-span <= x < 0``.

    With extrema ``max`` and ``min`` of ``|psi_m|^2`` (refined by a parabola
    through the neighbouring nodes), ``|C_I| = (sqrt(max) + sqrt(min)) / 2``
    and ``|C_R| = (sqrt(max) - sqrt(min)) / 2``.  The span must cover at
    least one full fringe period.
    """
    g = field.grid
    lo = max(0, g.i0 - int(np.floor(span / g.dx + 1e-9)))
    rho = field.density_m[lo : g.i0]
    if rho.size < 5:
        raise FringeError("fringe span holds fewer than 5 nodes")
    imax, imin = int(np.argmax(rho)), int(np.argmin(rho))
    interior = 0 < imax < rho.size - 1 and 0 < imin < rho.size - 1
    if not interior and np.ptp(rho) > 1e-9 * rho.max():
        raise FringeError("no complete fringe inside the span; widen it")
    hi = _refine_extremum(rho, imax)
    low = max(_refine_extremum(rho, imin), 0.0)
    if not hi > 0:
        raise FringeError("no density left of the step")
    a, b = math.sqrt(hi), math.sqrt(low)
    return 0.5 * (a + b), 0.5 * (a - b)


def dwell_time(
    field: FieldPair,
    params: PhysicalParams,
    spec: EnergySpec,
    variant: str,
    *,
    fringe_span: float | None = None,
    reference: FieldPair | None = None,
    plateau_tolerance: float = 0.01,
    upto: float | None = None,
) -> float:
    """``N / j_in`` with ``N`` the probability stored at ``x >= 0``.

    ``variant="bohmian"`` takes ``j_in`` as the net current just left of the
    step and returns ``inf`` when it is below ``1e-9`` of the incident flux
    ``|C_I|^2 k0 / m``.  ``variant="standard"`` uses that incident flux.
    Passing a ``reference`` field from another time checks that the stored
    number is quasi-stationary.
    """
    if variant not in ("bohmian", "standard"):
        raise ValueError(f"unknown dwell-time variant {variant!r}")
    k0 = wavenumbers(params, spec, exact=False, guard=0.0).k0
    N = stored_number(field, upto)
    if reference is not None:
        N_ref = stored_number(reference, upto)
        if abs(N - N_ref) > plateau_tolerance * max(N, N_ref):
            raise DwellError(
                f"stored number changes by {abs(N - N_ref) / max(N, N_ref):.2%} between the two fields"
            )
    span = fringe_span if fringe_span is not None else 8 * np.pi / k0
    c_i, _ = fringe_amplitudes(field, span)
    j_inc = c_i**2 * k0 / params.m
    if variant == "standard":
        return N / j_inc
    j = probability_current(field, params.m, "main")[field.grid.i0 - 1]
    if abs(j) < ZERO_CURRENT * j_inc:
        return math.inf
    return N / j


@dataclass(frozen=True)
class SpeedMeasurement:
    delta: float
    regime: str
    k1: float  # small-coupling value
    k1_exact: float  # NaN when |delta| <= J0
    k1_hat: float
    k1_stderr: float
    v: float
    v_hat: float
    pa: np.ndarray
    grid: Grid
    plateau: tuple[float, float]
    field: FieldPair  # last snapshot of the plateau
    snapshots: tuple[FieldPair, ...] = dataclasses.field(default=(), repr=False)  # cropped to ``grid``


def measure_speed(
    params: PhysicalParams,
    delta: float,
    *,
    window_max_pa: float = 0.01,
    plateau_tolerance: float = 0.01,
    guard: float = DEFAULT_GUARD,
    **plan_kw,
) -> SpeedMeasurement:
    """Scatter a long packet off the step and infer the speed from the plateau profile.

    Detunings with ``|delta| / J0 < guard`` are rejected before any run.
    """
    spec = spec_from_delta(params, delta)
    wavenumbers(params, spec, guard=guard)
    plan = plan_scattering(params, spec, **plan_kw)
    snaps: list[FieldPair] = []
    evolve(
        plan.initial_field(),
        plan.potential,
        plan.config,
        observers=[lambda f: snaps.append(f.crop(*plan.crop))],
        keep=False,
    )
    q = quasi_stationary_pa(snaps, tolerance=plateau_tolerance, upto=plan.probe)
    k1_hat, err = fit_k1(q.masked(), q.grid, window_max_pa)
    k = wavenumbers(params, spec, exact=False, guard=0.0)
    k1_exact = wavenumbers(params, spec, exact=True).k1 if abs(delta) > params.J0 else math.nan
    last = next(s for s in reversed(snaps) if s.t <= q.t_stop)
    return SpeedMeasurement(
        delta=delta,
        regime=spec.regime.name.lower(),
        k1=k.k1,
        k1_exact=k1_exact,
        k1_hat=k1_hat,
        k1_stderr=err,
        v=apparent_speed(delta, params.m),
        v_hat=inferred_speed(k1_hat, params.J0),
        pa=q.masked(),
        grid=q.grid,
        plateau=(q.t_start, q.t_stop),
        field=last,
        snapshots=tuple(snaps),
    )


@dataclass(frozen=True)
class SweepRow:
    delta: float
    regime: str = ""
    k1: float = math.nan
    k1_hat: float = math.nan
    k1_stderr: float = math.nan
    v: float = math.nan
    v_hat: float = math.nan
    tau_bohmian: float = math.nan
    tau_standard: float = math.nan
    status: str = "ok"
    error: str = ""


SWEEP_UNITS = {
    "delta": "s^-1",
    "k1": "m^-1",
    "k1_hat": "m^-1",
    "k1_stderr": "m^-1",
    "v": "m/s",
    "v_hat": "m/s",
    "tau_bohmian": "s",
    "tau_standard": "s",
}


def _sweep_row(args) -> SweepRow:
    params, delta, plan_kw = args
    try:
        res = measure_speed(params, delta, **plan_kw)
        spec = spec_from_delta(params, delta)
        taus = {}
        for variant in ("bohmian", "standard"):
            try:
                taus[variant] = dwell_time(res.field, params, spec, variant)
            except ValueError as exc:
                log.warning("dwell time (%s) failed at delta=%g: %s", variant, delta, exc)
                taus[variant] = math.nan
        return SweepRow(
            delta=delta,
            regime=res.regime,
            k1=res.k1,
            k1_hat=res.k1_hat,
            k1_stderr=res.k1_stderr,
            v=res.v,
            v_hat=res.v_hat,
            tau_bohmian=taus["bohmian"],
            tau_standard=taus["standard"],
        )
    except Exception as exc:  # recorded per row; the sweep carries on
        log.error("sweep row delta=%g failed: %s", delta, exc)
        regime = "allowed" if delta > 0 else "forbidden" if delta < 0 else ""
        return SweepRow(delta=delta, regime=regime, status="failed", error=f"{type(exc).__name__}: {exc}")


def sweep(
    params: PhysicalParams, deltas: Iterable[float], *, workers: int = 1, **plan_kw
) -> list[SweepRow]:
    """One speed measurement per detuning; failures become rows with ``status="failed"``."""
    jobs = [(params, float(d), plan_kw) for d in deltas]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_sweep_row, jobs))
    return [_sweep_row(j) for j in jobs]


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    names = [f.name for f in fields(SweepRow)]
    with open(path, "w", newline="") as fh:
        fh.write("# units: " + ", ".join(f"{k} [{u}]" for k, u in SWEEP_UNITS.items()) + "\n")
        w = csv.writer(fh)
        w.writerow(names)
        for r in rows:
            d = asdict(r)
            w.writerow([repr(v) if isinstance(v, float) else v for v in (d[n] for n in names)])
