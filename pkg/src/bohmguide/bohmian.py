"""Pilot-wave particles with stochastic jumps between the two guides.

Particles drift along the guidance velocity of the guide they are in and
hop to the other guide, at the same position, with the positive-part jump
rates.  Random numbers are drawn from counter-based Philox streams keyed
on ``(seed, step)`` and indexed by particle id, so results do not depend
on how the ensemble is chunked across workers.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .model import FieldPair, Grid, PotentialProfile
from .tdse import Propagator, probability_current

__all__ = [
    "AUX",
    "MAIN",
    "DwellStatistics",
    "Ensemble",
    "EquivarianceResult",
    "FrozenRegime",
    "GuidanceField",
    "Particle",
    "ParticleStreams",
    "TrajectoryRecorder",
    "advance",
    "continuity_residual",
    "dwell_statistics",
    "equivariance_check",
    "frozen_regime",
    "guidance",
    "histogram_distance",
    "jump_fluxes",
    "propagate",
    "sample_ensemble",
    "sector_histograms",
]

MAIN, AUX = 0, 1
SECTOR_NAMES = {MAIN: "main", AUX: "aux"}
DENSITY_FLOOR = 1e-12


@dataclass(frozen=True)
class Particle:
    sector: str
    x: float
    alive: bool
    rng_stream: int

    def __post_init__(self):
        if self.sector not in ("main", "aux"):
            raise ValueError(f"unknown sector {self.sector!r}")
        if self.sector == "aux" and self.x < 0:
            raise ValueError("auxiliary-guide particles must sit at x >= 0")


@dataclass(frozen=True, eq=False)
class GuidanceField:
    v_m: np.ndarray
    v_a: np.ndarray
    sigma_m: np.ndarray
    sigma_a: np.ndarray
    mask_m: np.ndarray  # True where the density is below the floor
    mask_a: np.ndarray
    floor: float
    grid: Grid
    t: float = 0.0

    def lerp(self, other: "GuidanceField", theta: float) -> "GuidanceField":
        if theta == 0.0:
            return self
        if theta == 1.0:
            return other
        a, b = 1.0 - theta, theta
        return GuidanceField(
            v_m=a * self.v_m + b * other.v_m,
            v_a=a * self.v_a + b * other.v_a,
            sigma_m=a * self.sigma_m + b * other.sigma_m,
            sigma_a=a * self.sigma_a + b * other.sigma_a,
            mask_m=self.mask_m & other.mask_m,
            mask_a=self.mask_a & other.mask_a,
            floor=self.floor,
            grid=self.grid,
            t=a * self.t + b * other.t,
        )

    def scaled(self, velocity_scale: float) -> "GuidanceField":
        return replace(self, v_m=velocity_scale * self.v_m, v_a=velocity_scale * self.v_a)


def jump_fluxes(field: FieldPair, potential: PotentialProfile) -> tuple[np.ndarray, np.ndarray]:
    """Probability fluxes main->aux and aux->main (``sigma_m rho_m``, ``sigma_a rho_a``).

    With ``g = 2 V_i Im(psi_m^* psi_a)`` the net source of the main guide,
    the two are ``[-g]^+`` and ``[g]^+``.
    """
    g = 2.0 * potential.v_i * np.imag(np.conj(field.psi_m) * field.psi_a)
    return np.maximum(-g, 0.0), np.maximum(g, 0.0)


def guidance(
    field: FieldPair, potential: PotentialProfile, floor: float = DENSITY_FLOOR
) -> GuidanceField:
    """Velocities and jump rates on the grid.

    Nodes whose density in a guide is below ``floor * max|psi|^2`` are
    masked: velocity and rate are set to zero there.
    """
    m = potential.params.m
    rho_m, rho_a = field.density_m, field.density_a
    cut = floor * max(rho_m.max(), rho_a.max())
    mask_m = rho_m <= cut
    mask_a = rho_a <= cut
    j_m = probability_current(field, m, "main")
    j_a = probability_current(field, m, "aux")
    f_ma, f_am = jump_fluxes(field, potential)
    safe_m = np.where(mask_m, 1.0, rho_m)
    safe_a = np.where(mask_a, 1.0, rho_a)
    return GuidanceField(
        v_m=np.where(mask_m, 0.0, j_m / safe_m),
        v_a=np.where(mask_a, 0.0, j_a / safe_a),
        sigma_m=np.where(mask_m, 0.0, f_ma / safe_m),
        sigma_a=np.where(mask_a, 0.0, f_am / safe_a),
        mask_m=mask_m,
        mask_a=mask_a,
        floor=floor,
        grid=field.grid,
        t=field.t,
    )


@dataclass(eq=False)
class Ensemble:
    """Particle positions and sector labels as parallel arrays."""

    x: np.ndarray
    sector: np.ndarray
    alive: np.ndarray
    ids: np.ndarray
    t: float = 0.0
    diagnostics: dict = field(default_factory=lambda: {"anomalies": 0, "jumps": 0, "steps": 0})

    def __len__(self) -> int:
        return self.x.size

    def __getitem__(self, i: int) -> Particle:
        return Particle(
            sector=SECTOR_NAMES[int(self.sector[i])],
            x=float(self.x[i]),
            alive=bool(self.alive[i]),
            rng_stream=int(self.ids[i]),
        )

    def copy(self) -> "Ensemble":
        return Ensemble(
            self.x.copy(), self.sector.copy(), self.alive.copy(), self.ids.copy(), self.t, dict(self.diagnostics)
        )

    @classmethod
    def at(cls, x: np.ndarray, sector: int | np.ndarray = MAIN, t: float = 0.0) -> "Ensemble":
        x = np.asarray(x, float)
        sec = np.broadcast_to(np.asarray(sector, np.int8), x.shape).copy()
        return cls(x=x.copy(), sector=sec, alive=np.ones(x.size, bool), ids=np.arange(x.size), t=t)


class ParticleStreams:
    """Uniform variates indexed by ``(seed, step, particle id)``."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)

    def generator(self, step: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=(self.seed << 64) | (step & (2**64 - 1))))

    def uniforms(self, step: int, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        if ids.size == 0:
            return np.zeros(0)
        return self.generator(step).random(int(ids.max()) + 1)[ids]


def sample_ensemble(field: FieldPair, count: int, seed: int, floor: float = DENSITY_FLOOR) -> Ensemble:
    """Draw ``count`` particles from ``(|psi_m|^2, |psi_a|^2)`` by inverse CDF.

    The two guides are concatenated into one discrete distribution over
    nodes; each particle is then placed uniformly within its node's cell.
    """
    g = field.grid
    rho = np.concatenate([field.density_m, field.density_a])
    if not rho.sum() > 0:
        raise ValueError("cannot sample from a field with zero norm")
    rho = np.where(rho > floor * rho.max(), rho, 0.0)
    cdf = np.cumsum(rho)
    cdf /= cdf[-1]
    rng = ParticleStreams(seed).generator(2**63)
    u = rng.random((2, count)) if count else np.zeros((2, 0))
    idx = np.minimum(np.searchsorted(cdf, u[0], side="right"), cdf.size - 1)
    sector = (idx >= g.n).astype(np.int8)
    node = idx % g.n
    x = g.x[node] + (u[1] - 0.5) * g.dx
    x = np.clip(x, g.x_min, g.x_max)
    x = np.where(sector == AUX, np.maximum(x, 0.0), x)
    return Ensemble(x=x, sector=sector, alive=np.ones(count, bool), ids=np.arange(count), t=field.t)


def _stencil(x: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    s = (x - grid.x_min) / grid.dx
    i = np.clip(np.floor(s).astype(np.intp), 0, grid.n - 2)
    return i, np.clip(s - i, 0.0, 1.0)


def _gather(a_main: np.ndarray, a_aux: np.ndarray, sector: np.ndarray, i: np.ndarray, w: np.ndarray):
    arr = np.stack([a_main, a_aux])
    return arr[sector, i] * (1.0 - w) + arr[sector, i + 1] * w


def _sector_value(a_main: np.ndarray, a_aux: np.ndarray, x: np.ndarray, sector: np.ndarray, grid: Grid):
    i, w = _stencil(x, grid)
    return _gather(a_main, a_aux, sector, i, w)


def _advance_chunk(x, sector, alive, u, g0, g1, dt):
    grid = g0.grid
    gm = g0.lerp(g1, 0.5)
    i, w = _stencil(x, grid)
    sig = _gather(gm.sigma_m, gm.sigma_a, sector, i, w)
    jump = alive & (u < -np.expm1(-sig * dt))
    drift = alive & ~jump
    v0 = _gather(g0.v_m, g0.v_a, sector, i, w)
    x_mid = x + 0.5 * dt * v0
    v_mid = _sector_value(gm.v_m, gm.v_a, x_mid, sector, grid)
    x_new = np.where(drift, x + dt * v_mid, x)
    sector_new = np.where(jump, 1 - sector, sector).astype(np.int8)

    out = (x_new < grid.x_min) | (x_new > grid.x_max)
    x_new = np.clip(x_new, grid.x_min, grid.x_max)
    wall = (sector_new == AUX) & (x_new < 0)
    x_new = np.where(wall, 0.0, x_new)
    node = np.clip(np.rint((x_new - grid.x_min) / grid.dx).astype(np.intp), 0, grid.n - 1)
    masked = np.stack([g1.mask_m, g1.mask_a])[sector_new, node]
    anomalies = int(np.count_nonzero(alive & (out | wall | masked)))
    return x_new, sector_new, int(np.count_nonzero(jump)), anomalies


def advance(
    ensemble: Ensemble,
    guidance_t: GuidanceField,
    guidance_t_dt: GuidanceField,
    dt: float,
    streams: ParticleStreams,
    step: int,
    workers: int = 1,
) -> Ensemble:
    """Move every particle by one step of length ``dt``.

    A particle first jumps with probability ``1 - exp(-sigma dt)`` (staying
    at the same x); otherwise it drifts by the midpoint rule with the
    velocity interpolated linearly in x and between the two guidance
    snapshots.  Landing on a masked node, leaving the grid or crossing the
    auxiliary wall is counted in ``diagnostics["anomalies"]``.
    """
    u = streams.uniforms(step, ensemble.ids)
    n = len(ensemble)
    if workers > 1 and n > 1:
        bounds = np.linspace(0, n, workers + 1).astype(int)
        parts = list(zip(bounds[:-1], bounds[1:]))
        with ThreadPoolExecutor(workers) as pool:
            results = list(
                pool.map(
                    lambda ab: _advance_chunk(
                        ensemble.x[ab[0] : ab[1]],
                        ensemble.sector[ab[0] : ab[1]],
                        ensemble.alive[ab[0] : ab[1]],
                        u[ab[0] : ab[1]],
                        guidance_t,
                        guidance_t_dt,
                        dt,
                    ),
                    parts,
                )
            )
        x_new = np.concatenate([r[0] for r in results])
        sec_new = np.concatenate([r[1] for r in results])
        jumps = sum(r[2] for r in results)
        anomalies = sum(r[3] for r in results)
    else:
        x_new, sec_new, jumps, anomalies = _advance_chunk(
            ensemble.x, ensemble.sector, ensemble.alive, u, guidance_t, guidance_t_dt, dt
        )
    diag = dict(ensemble.diagnostics)
    diag["jumps"] += jumps
    diag["anomalies"] += anomalies
    diag["steps"] += 1
    return Ensemble(x_new, sec_new, ensemble.alive.copy(), ensemble.ids, ensemble.t + dt, diag)


def _substeps(g0: GuidanceField, g1: GuidanceField, dt: float, cfl: float, max_sub: int) -> int:
    vmax = max(np.abs(g0.v_m).max(), np.abs(g0.v_a).max(), np.abs(g1.v_m).max(), np.abs(g1.v_a).max())
    return int(np.clip(np.ceil(vmax * dt / (cfl * g0.grid.dx)), 1, max_sub))


def propagate(
    field_trajectory: Iterable[FieldPair],
    potential: PotentialProfile,
    ensemble: Ensemble,
    seed: int,
    *,
    observers: Iterable[Callable[[FieldPair, Ensemble], None]] = (),
    cadence: int = 1,
    velocity_scale: float = 1.0,
    cfl: float = 1.0,
    max_substeps: int = 4,
    workers: int = 1,
) -> Ensemble:
    """Carry an ensemble along a sequence of consecutive field snapshots.

    Each interval between snapshots is split into enough substeps that no
    particle moves more than ``cfl`` cells per substep (capped at
    ``max_substeps``).  Observers see ``(field, ensemble)`` on the first
    snapshot and then every ``cadence`` snapshots.
    """
    observers = list(observers)
    streams = ParticleStreams(seed)
    it = iter(field_trajectory)
    f_prev = next(it)
    g_prev = guidance(f_prev, potential).scaled(velocity_scale)
    for ob in observers:
        ob(f_prev, ensemble)
    counter = 0
    for k, f in enumerate(it, start=1):
        g = guidance(f, potential).scaled(velocity_scale)
        dt = f.t - f_prev.t
        nsub = _substeps(g_prev, g, dt, cfl, max_substeps)
        h = dt / nsub
        for s in range(nsub):
            ga = g_prev.lerp(g, s / nsub)
            gb = g_prev.lerp(g, (s + 1) / nsub)
            ensemble = advance(ensemble, ga, gb, h, streams, counter, workers)
            counter += 1
        ensemble.t = f.t
        if k % cadence == 0:
            for ob in observers:
                ob(f, ensemble)
        f_prev, g_prev = f, g
    return ensemble


def sector_histograms(
    field: FieldPair, ensemble: Ensemble, bins: int = 100, x_range: tuple[float, float] | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bin edges plus ``(2, bins)`` arrays of Born and empirical probabilities."""
    g = field.grid
    lo, hi = x_range or (g.x_min, g.x_max)
    edges = np.linspace(lo, hi, bins + 1)
    # cell-averaged density integrated exactly over each bin, matching how samples are placed
    cell_edges = np.concatenate([[g.x[0] - 0.5 * g.dx], g.x + 0.5 * g.dx])
    born = np.vstack(
        [
            np.diff(np.interp(edges, cell_edges, np.concatenate([[0.0], np.cumsum(rho)])))
            for rho in (field.density_m, field.density_a)
        ]
    )
    born /= born.sum()
    live = ensemble.alive
    emp = np.vstack(
        [np.histogram(ensemble.x[live & (ensemble.sector == s)], edges)[0] for s in (MAIN, AUX)]
    ).astype(float)
    emp /= max(np.count_nonzero(live), 1)
    return edges, born, emp


def histogram_distance(field: FieldPair, ensemble: Ensemble, bins: int = 100, x_range=None) -> float:
    """Total-variation distance between sector-resolved histograms and ``|psi|^2``."""
    _, born, emp = sector_histograms(field, ensemble, bins, x_range)
    return float(0.5 * np.abs(born - emp).sum())


@dataclass(frozen=True)
class EquivarianceResult:
    times: np.ndarray
    distances: np.ndarray
    ensemble: Ensemble
    anomalies: int


def equivariance_check(
    field_trajectory: Iterable[FieldPair],
    potential: PotentialProfile,
    ensemble: Ensemble,
    cadence: int,
    seed: int,
    *,
    bins: int = 100,
    velocity_scale: float = 1.0,
    **propagate_kw,
) -> EquivarianceResult:
    """Histogram distance to ``|psi(t)|^2`` at every ``cadence``-th snapshot.

    ``velocity_scale != 1`` deliberately corrupts the guidance and serves
    as a negative control.
    """
    times, dists = [], []

    def probe(f, ens):
        times.append(f.t)
        dists.append(histogram_distance(f, ens, bins))

    final = propagate(
        field_trajectory,
        potential,
        ensemble,
        seed,
        observers=[probe],
        cadence=cadence,
        velocity_scale=velocity_scale,
        **propagate_kw,
    )
    return EquivarianceResult(np.array(times), np.array(dists), final, final.diagnostics["anomalies"])


class TrajectoryRecorder:
    """Observer storing positions and sectors of (a subset of) particles."""

    def __init__(self, ids: Sequence[int] | None = None):
        self.ids = None if ids is None else np.asarray(ids)
        self.times: list[float] = []
        self.x: list[np.ndarray] = []
        self.sector: list[np.ndarray] = []

    def __call__(self, field: FieldPair, ensemble: Ensemble) -> None:
        sel = slice(None) if self.ids is None else self.ids
        self.times.append(ensemble.t)
        self.x.append(ensemble.x[sel].copy())
        self.sector.append(ensemble.sector[sel].copy())

    @property
    def particle_ids(self) -> np.ndarray:
        if self.ids is not None:
            return self.ids
        return np.arange(self.x[0].size) if self.x else np.zeros(0, int)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.particle_ids.size
        if not self.times:
            return np.zeros(0), np.zeros((0, n)), np.zeros((0, n), np.int8)
        return np.array(self.times), np.vstack(self.x), np.vstack(self.sector)

    def write_csv(self, path) -> None:
        times, xs, secs = self.arrays()
        ids = self.particle_ids
        with open(path, "w", newline="") as fh:
            fh.write("# t [s], x [m], sector in {main, aux}\n")
            w = csv.writer(fh)
            w.writerow(["t", "particle", "sector", "x"])
            for t, xrow, srow in zip(times, xs, secs):
                for pid, xv, sv in zip(ids, xrow, srow):
                    w.writerow([repr(float(t)), int(pid), SECTOR_NAMES[int(sv)], repr(float(xv))])


@dataclass(frozen=True)
class DwellStatistics:
    first_entry: np.ndarray  # NaN if never entered x >= 0
    last_exit: np.ndarray  # NaN if never left after entering
    residence: np.ndarray  # total time spent at x >= 0
    inside_at_end: np.ndarray

    @property
    def never_entered_fraction(self) -> float:
        return float(np.mean(np.isnan(self.first_entry))) if self.first_entry.size else 0.0

    @property
    def entered_fraction(self) -> float:
        return 1.0 - self.never_entered_fraction if self.first_entry.size else 0.0

    @property
    def trapped_fraction(self) -> float:
        return float(np.mean(self.inside_at_end)) if self.inside_at_end.size else 0.0


def dwell_statistics(times: np.ndarray, x_history: np.ndarray) -> DwellStatistics:
    """Entry/exit times and residence in ``x >= 0`` from recorded trajectories.

    ``x_history`` has shape ``(len(times), n_particles)``.  Residence is
    accumulated with the left-point rule over the recording times.
    """
    times = np.asarray(times, float)
    x_history = np.asarray(x_history, float)
    if x_history.ndim != 2 or x_history.shape[0] != times.size:
        raise ValueError("x_history must have shape (len(times), n_particles)")
    n = x_history.shape[1]
    if times.size == 0 or n == 0:
        empty = np.zeros(n)
        return DwellStatistics(empty * np.nan, empty * np.nan, empty, np.zeros(n, bool))
    inside = x_history >= 0
    ever = inside.any(axis=0)
    first = np.where(ever, times[np.argmax(inside, axis=0)], np.nan)
    exits = inside[:-1] & ~inside[1:]
    has_exit = exits.any(axis=0)
    last_exit_idx = exits.shape[0] - np.argmax(exits[::-1], axis=0)
    last = np.where(has_exit, times[np.minimum(last_exit_idx, times.size - 1)], np.nan)
    dts = np.diff(times)
    residence = (inside[:-1] * dts[:, None]).sum(axis=0) if times.size > 1 else np.zeros(n)
    return DwellStatistics(first, last, residence, inside[-1].copy())


def continuity_residual(
    field: FieldPair, potential: PotentialProfile, dt_probe: float, energy_ref: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Per-node residual of the sector continuity equations with ``rho = |psi|^2``.

    ``d rho/dt`` is a centred difference over ``psi(t -+ dt_probe/2)`` from
    the Crank-Nicolson propagator; the flux divergence uses centred
    differences of the probability current; the sources use the jump
    fluxes.  Clamped nodes (domain ends, auxiliary wall) report zero.
    """
    m = potential.params.m
    dx = field.grid.dx
    back = Propagator(potential, -0.5 * dt_probe, energy_ref).step(field)
    fwd = Propagator(potential, 0.5 * dt_probe, energy_ref).step(field)
    f_ma, f_am = jump_fluxes(field, potential)
    out = []
    for comp, src, rho_b, rho_f in (
        ("main", f_am - f_ma, back.density_m, fwd.density_m),
        ("aux", f_ma - f_am, back.density_a, fwd.density_a),
    ):
        j = probability_current(field, m, comp)
        div = np.zeros_like(j)
        div[1:-1] = (j[2:] - j[:-2]) / (2 * dx)
        res = (rho_f - rho_b) / dt_probe + div - src
        res[[0, 1, -2, -1]] = 0.0
        out.append(res)
    res_m, res_a = out
    res_a[potential.wall_mask] = 0.0
    return res_m, res_a



@dataclass(frozen=True)
class FrozenRegime:
    v_window: float
    sigma_window: float
    v_transient: float
    sigma_transient: float

    @property
    def v_ratio(self) -> float:
        return self.v_window / self.v_transient if self.v_transient > 0 else np.inf

    @property
    def sigma_ratio(self) -> float:
        return self.sigma_window / self.sigma_transient if self.sigma_transient > 0 else np.inf


def frozen_regime(
    snapshots: Sequence[FieldPair],
    potential: PotentialProfile,
    window: tuple[float, float],
    floor: float = DENSITY_FLOOR,
) -> FrozenRegime:
    """Largest |v| and sigma on occupied ``x >= 0`` nodes, inside and before ``window``.

    Occupied means above the guidance density floor.  Snapshots after the
    window are ignored.
    """
    t0, t1 = window
    vw = sw = vt = st = 0.0
    right = potential.grid.x >= 0
    seen = False
    for f in snapshots:
        if f.t > t1:
            break
        g = guidance(f, potential, floor)
        om = right & ~g.mask_m
        oa = right & ~g.mask_a
        v = max(np.abs(g.v_m[om]).max(initial=0.0), np.abs(g.v_a[oa]).max(initial=0.0))
        sg = max(g.sigma_m[om].max(initial=0.0), g.sigma_a[oa].max(initial=0.0))
        if f.t < t0:
            vt, st = max(vt, v), max(st, sg)
        else:
            vw, sw = max(vw, v), max(sw, sg)
            seen = True
    if not seen:
        raise ValueError("no snapshot falls inside the window")
    return FrozenRegime(vw, sw, vt, st)
