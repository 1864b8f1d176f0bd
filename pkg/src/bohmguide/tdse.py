"""Crank-Nicolson evolution of the coupled main/auxiliary guide pair.

The two components are interleaved (main at even, auxiliary at odd
unknowns) so the implicit operator is a banded matrix with 2x2 blocks on
the tridiagonal.  It is factorised once per (potential, dt) and reused.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.special import erf

from .analytic import pa_profile
from .model import FieldPair, Grid, PotentialProfile

log = logging.getLogger(__name__)

__all__ = [
    "EdgeContaminationError",
    "EvolveConfig",
    "PacketSpec",
    "PlateauError",
    "Propagator",
    "QuasiStationaryProfile",
    "carrier_wavenumber",
    "default_dt",
    "dump_state_csv",
    "edge_fraction",
    "evolve",
    "gaussian_packet",
    "iter_evolve",
    "probability_current",
    "quasi_stationary_pa",
    "step",
    "stored_number",
]


class EdgeContaminationError(RuntimeError):
    """The wave function reached the hard domain walls."""


class PlateauError(RuntimeError):
    """No quasi-stationary window could be identified."""


@dataclass(frozen=True)
class PacketSpec:
    """Right-moving packet in the main guide.

    ``plateau`` > 0 gives a box of that length convolved with a Gaussian of
    width ``sigma``, ``(erf((a + h) / 2 sigma) - erf((a - h) / 2 sigma)) / 2``
    with ``a = x - x0`` and ``h = plateau / 2``.  The envelope is smooth, so
    the spectrum has no algebraic tails.  ``plateau = 0`` is the plain
    Gaussian ``exp(-(x - x0)^2 / (4 sigma^2))``.
    """

    x0: float
    sigma: float
    k: float
    plateau: float = 0.0
    min_sigma_k: float = 20.0

    def __post_init__(self):
        if not self.x0 < 0:
            raise ValueError("packet centre must lie at x < 0")
        if not (self.sigma > 0 and self.k > 0):
            raise ValueError("sigma and k must be positive")
        if self.plateau < 0:
            raise ValueError("plateau length must be non-negative")
        if self.sigma * self.k < self.min_sigma_k:
            raise ValueError(
                f"sigma*k = {self.sigma * self.k:.3g} < {self.min_sigma_k:g}: packet is not wide "
                "compared with its wavelength"
            )

    @property
    def half_extent(self) -> float:
        """Distance from centre to where the density falls below 1e-12 of peak."""
        # exp(-d^2 / (2 sigma^2)) = 1e-12
        return 0.5 * self.plateau + np.sqrt(2 * np.log(1e12)) * self.sigma

    def envelope(self, x: np.ndarray) -> np.ndarray:
        if self.plateau == 0:
            return np.exp(-((x - self.x0) ** 2) / (4 * self.sigma**2))
        a = x - self.x0
        h = 0.5 * self.plateau
        s = 2 * self.sigma
        return 0.5 * (erf((a + h) / s) - erf((a - h) / s))


def carrier_wavenumber(E: float, m: float, dx: float) -> float:
    """Carrier wavenumber whose lattice kinetic energy equals ``E``.

    On the three-point Laplacian a plane wave has energy
    ``(1 - cos(k dx)) / (m dx^2)``; matching that removes the O((k dx)^2)
    energy offset that would otherwise shift delta.
    """
    c = 1.0 - m * dx**2 * E
    if c <= -1.0:
        raise ValueError("grid too coarse to represent this energy")
    return float(np.arccos(c) / dx)


def gaussian_packet(grid: Grid, spec: PacketSpec) -> FieldPair:
    x = grid.x
    env = spec.envelope(x)
    peak = env.max() ** 2
    if peak == 0:
        raise ValueError("packet lies outside the grid")
    edge = max(2, grid.n // 100)
    if (env[grid.i0 :] ** 2).max() > 1e-12 * peak:
        raise ValueError("packet overlaps the step at x >= 0")
    if max(env[:edge].max(), env[-edge:].max()) ** 2 > 1e-12 * peak:
        raise ValueError("packet overlaps the domain edges")
    psi = env * np.exp(1j * spec.k * x)
    psi /= np.sqrt(np.sum(np.abs(psi) ** 2) * grid.dx)
    return FieldPair(psi_m=psi, psi_a=np.zeros(grid.n, complex), grid=grid)


def _hamiltonian(potential: PotentialProfile) -> tuple[sp.csc_matrix, np.ndarray]:
    """Interleaved sparse Hamiltonian and the mask of active unknowns."""
    g = potential.grid
    n = g.n
    c = 1.0 / (2.0 * potential.params.m * g.dx**2)

    active = np.zeros(2 * n, bool)
    active[2:-2:2] = True
    interior = np.zeros(n, bool)
    interior[1:-1] = True
    active[1::2] = interior & ~potential.wall_mask

    rows, cols, vals = [], [], []
    for comp, v in ((0, potential.v_m), (1, potential.v_a)):
        idx = 2 * np.arange(n) + comp
        rows.append(idx)
        cols.append(idx)
        vals.append(2 * c + v)
        rows += [idx[:-1], idx[1:]]
        cols += [idx[1:], idx[:-1]]
        vals += [np.full(n - 1, -c), np.full(n - 1, -c)]
    im, ia = 2 * np.arange(n), 2 * np.arange(n) + 1
    rows += [im, ia]
    cols += [ia, im]
    vals += [potential.v_i, potential.v_i]

    r = np.concatenate(rows)
    cc = np.concatenate(cols)
    vv = np.concatenate(vals).astype(float)
    keep = active[r] & active[cc]
    H = sp.csc_matrix((vv[keep], (r[keep], cc[keep])), shape=(2 * n, 2 * n))
    return H, active


class Propagator:
    """Factorised implicit-midpoint step ``(1 + i dt H/2) psi' = (1 - i dt H/2) psi``.

    With ``energy_ref`` the scheme is applied to ``H - energy_ref`` and the
    exact phase ``exp(-i energy_ref dt)`` is restored afterwards.  Both
    variants are exactly unitary; the shifted one keeps the scheme's
    O((omega dt)^2) group-velocity error small for states whose energy is
    near ``energy_ref``.
    """

    def __init__(self, potential: PotentialProfile, dt: float, energy_ref: float = 0.0):
        self.potential = potential
        self.dt = dt
        self.energy_ref = energy_ref
        H, self.active = _hamiltonian(potential)
        n2 = H.shape[0]
        eye = sp.identity(n2, dtype=complex, format="csc")
        Hs = H - energy_ref * sp.diags(self.active.astype(float), format="csc")
        half = 0.5j * dt
        self._phase = np.exp(-1j * energy_ref * dt)
        self._rhs = (eye - half * Hs).tocsr()
        lhs = (eye + half * Hs).tocsc()
        try:
            self._lu = splu(lhs, permc_spec="NATURAL")
        except RuntimeError as exc:  # singular factor
            raise RuntimeError(f"Crank-Nicolson factorisation failed: {exc}") from exc
        self.H = H

    def pack(self, field: FieldPair) -> np.ndarray:
        vec = np.empty(2 * field.grid.n, complex)
        vec[0::2] = field.psi_m
        vec[1::2] = field.psi_a
        vec[~self.active] = 0.0
        return vec

    def unpack(self, vec: np.ndarray, t: float) -> FieldPair:
        return FieldPair(psi_m=vec[0::2].copy(), psi_a=vec[1::2].copy(), grid=self.potential.grid, t=t)

    def advance_vector(self, vec: np.ndarray) -> np.ndarray:
        out = self._lu.solve(self._rhs @ vec)
        if self.energy_ref:
            out *= self._phase
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite values after Crank-Nicolson solve")
        return out

    def step(self, field: FieldPair) -> FieldPair:
        return self.unpack(self.advance_vector(self.pack(field)), field.t + self.dt)


def step(field: FieldPair, potential: PotentialProfile, dt: float, energy_ref: float = 0.0) -> FieldPair:
    """One implicit-midpoint step.  Negative ``dt`` steps backwards."""
    if field.grid != potential.grid:
        raise ValueError("field and potential live on different grids")
    return Propagator(potential, dt, energy_ref).step(field)


@dataclass(frozen=True)
class EvolveConfig:
    dt: float
    t_end: float
    snapshot_stride: int = 1
    edge_tolerance: float = 1e-6
    energy_ref: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end != 0 and self.t_end < self.dt:
            raise ValueError("t_end must be 0 or at least dt")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


def default_dt(potential: PotentialProfile, k_max: float) -> float:
    """``0.2 / max(|V|, k_max^2 / 2m)``."""
    v = max(np.abs(potential.v_m).max(), np.abs(potential.v_a).max() + np.abs(potential.v_i).max())
    kin = k_max**2 / (2 * potential.params.m)
    return 0.2 / max(v, kin)


def edge_fraction(field: FieldPair, width: int | None = None) -> float:
    """Share of the total density sitting on the outermost nodes."""
    n = field.grid.n
    w = width or max(2, n // 100)
    rho = field.density
    total = rho.sum()
    if total == 0:
        return 0.0
    return float((rho[:w].sum() + rho[-w:].sum()) / total)


def iter_evolve(field: FieldPair, potential: PotentialProfile, config: EvolveConfig) -> Iterator[FieldPair]:
    """Yield the field after every step (the initial state is not yielded)."""
    dt = config.dt
    ref = config.energy_ref
    vmax = max(np.abs(potential.v_m - ref).max(), np.abs(potential.v_a - ref).max())
    if dt * vmax > 0.5:
        warnings.warn(f"dt*max|V| = {dt * vmax:.3g} > 0.5: phases are poorly resolved", stacklevel=2)
    prop = Propagator(potential, dt, ref)
    vec = prop.pack(field)
    for i in range(1, config.n_steps + 1):
        vec = prop.advance_vector(vec)
        out = prop.unpack(vec, field.t + i * dt)
        frac = edge_fraction(out)
        if frac > config.edge_tolerance:
            raise EdgeContaminationError(
                f"edge density {frac:.3g} exceeds {config.edge_tolerance:g} of the total at "
                f"t = {out.t:.4g} s; enlarge the domain or shorten the run"
            )
        yield out


def evolve(
    field: FieldPair,
    potential: PotentialProfile,
    config: EvolveConfig,
    observers: Iterable[Callable[[FieldPair], None]] = (),
    keep: bool = True,
) -> list[FieldPair]:
    """Run to ``config.t_end``; snapshots every ``snapshot_stride`` steps.

    Each snapshot (the initial state included) is passed to every observer.
    Set ``keep=False`` to rely on observers only and avoid holding every
    snapshot in memory.
    """
    observers = list(observers)
    snaps = []

    def emit(f):
        for ob in observers:
            ob(f)
        if keep:
            snaps.append(f)

    emit(field)
    stride = config.snapshot_stride
    n = config.n_steps
    for i, f in enumerate(iter_evolve(field, potential, config), start=1):
        if i % stride == 0 or i == n:
            emit(f)
    return snaps


def probability_current(field: FieldPair, m: float, component: str = "main") -> np.ndarray:
    """``j = Im(psi^* d psi/dx) / m`` with central differences (zero at the end nodes)."""
    psi = _component(field, component)
    d = np.zeros_like(psi)
    d[1:-1] = (psi[2:] - psi[:-2]) / (2 * field.grid.dx)
    return np.imag(np.conj(psi) * d) / m


def _component(field: FieldPair, component: str) -> np.ndarray:
    if component in ("main", "m"):
        return field.psi_m
    if component in ("aux", "a"):
        return field.psi_a
    raise ValueError(f"unknown component {component!r}")


def stored_number(field: FieldPair, upto: float | None = None) -> float:
    """Probability on ``0 <= x [<= upto]`` summed over both guides."""
    g = field.grid
    rho = field.density[g.i0 :]
    if upto is not None:
        rho = rho[: int(np.floor(upto / g.dx + 1e-9)) + 1]
    return float(rho.sum() * g.dx)


@dataclass(frozen=True)
class QuasiStationaryProfile:
    pa: np.ndarray
    valid: np.ndarray
    t_start: float
    t_stop: float
    count: int
    grid: Grid
    drift: float

    def masked(self) -> np.ndarray:
        out = self.pa.copy()
        out[~self.valid] = np.nan
        return out


def quasi_stationary_pa(
    snapshots: Sequence[FieldPair],
    window: tuple[float, float] | None = None,
    *,
    tolerance: float = 0.01,
    upto: float | None = None,
    density_floor: float = 1e-12,
    min_snapshots: int = 3,
) -> QuasiStationaryProfile:
    """Time-averaged auxiliary fraction over a plateau of the stored number.

    With ``window=None`` the plateau is the longest contiguous run of
    snapshots over which ``stored_number(upto=upto)`` varies by less than
    ``tolerance`` of its largest value.  An explicit ``(t0, t1)`` window is checked against
    the same drift criterion; ``t0 == t1`` picks the single nearest snapshot.
    """
    if not snapshots:
        raise PlateauError("no snapshots supplied")
    times = np.array([s.t for s in snapshots])
    N = np.array([stored_number(s, upto) for s in snapshots])
    if window is None:
        if N.max() <= 0:
            raise PlateauError("nothing has reached the step region")
        lo, hi = _longest_flat_run(N, tolerance)
        if hi - lo + 1 < min_snapshots:
            raise PlateauError(
                f"stored number never holds within {tolerance:.0%} for {min_snapshots} snapshots"
            )
        if hi == len(N) - 1:
            log.info("plateau extends to the last snapshot")
        idx = np.arange(lo, hi + 1)
    else:
        t0, t1 = window
        if t1 < t0:
            raise ValueError("window must be (t_start, t_stop) with t_start <= t_stop")
        if t0 == t1:
            idx = np.array([int(np.argmin(np.abs(times - t0)))])
        else:
            idx = np.flatnonzero((times >= t0) & (times <= t1))
            if idx.size == 0:
                raise PlateauError("no snapshots fall inside the window")
    Nw = N[idx]
    drift = float((Nw.max() - Nw.min()) / Nw.max()) if Nw.max() > 0 else np.inf
    if drift >= tolerance and idx.size > 1:
        raise PlateauError(f"stored number drifts by {drift:.2%} over the window")

    grid = snapshots[idx[0]].grid
    acc = np.zeros(grid.n)
    valid = np.ones(grid.n, bool)
    for j in idx:
        s = snapshots[j]
        rho = s.density
        valid &= rho >= density_floor * rho.max()
        pa = pa_profile(s)
        valid &= np.isfinite(pa)
        acc += np.nan_to_num(pa)
    return QuasiStationaryProfile(
        pa=acc / idx.size,
        valid=valid,
        t_start=float(times[idx[0]]),
        t_stop=float(times[idx[-1]]),
        count=int(idx.size),
        grid=grid,
        drift=drift,
    )


def _longest_flat_run(values: np.ndarray, tolerance: float) -> tuple[int, int]:
    """Longest index run with ``max - min < tolerance * max`` (later run wins ties)."""
    best = (0, 0)
    lo = 0
    for hi in range(len(values)):
        while lo < hi:
            seg = values[lo : hi + 1]
            if seg.max() > 0 and seg.max() - seg.min() < tolerance * seg.max():
                break
            lo += 1
        if values[hi] > 0 and hi - lo >= best[1] - best[0]:
            best = (lo, hi)
    return best


def dump_state_csv(field: FieldPair, path) -> None:
    """Write ``x, Re psi_m, Im psi_m, Re psi_a, Im psi_a`` rows."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# t = {field.t!r} s\n")
        fh.write("# x [m], psi [m^-1/2]\n")
        w = csv.writer(fh)
        w.writerow(["x", "re_psi_m", "im_psi_m", "re_psi_a", "im_psi_a"])
        for row in zip(field.grid.x, field.psi_m.real, field.psi_m.imag, field.psi_a.real, field.psi_a.imag):
            w.writerow([repr(float(v)) for v in row])
