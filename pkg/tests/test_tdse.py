import warnings

import numpy as np
from scipy.integrate import quad
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bohmguide import (
    PAPER_PARAMS,
    EvolveConfig,
    FieldPair,
    Grid,
    PacketSpec,
    Propagator,
    build_potential,
    evolve,
    gaussian_packet,
    plan_scattering,
    probability_current,
    quasi_stationary_pa,
    spec_from_delta,
    stationary_state,
    step,
    stored_number,
    wavenumbers,
)
from bohmguide.model import PotentialProfile
from bohmguide.tdse import (
    EdgeContaminationError,
    PlateauError,
    carrier_wavenumber,
    default_dt,
    dump_state_csv,
    iter_evolve,
)

N_FORBIDDEN_UNIT = 4.6517223563594108e-6  # quadrature of cosh(2 k1 x) exp(-2 k2 x), exact roots


def _packet_grid():
    return Grid.from_spacing(-1.1e-3, 1e-4, 5e-7)


def _spec_packet(k=3.4e5, sigma=6e-5, x0=-5.5e-4):
    return PacketSpec(x0=x0, sigma=sigma, k=k)


def test_packet_norm_position_and_wavenumber():
    g = _packet_grid()
    ps = _spec_packet()
    f = gaussian_packet(g, ps)
    assert f.norm() == pytest.approx(1.0, abs=1e-12)
    assert not f.psi_a.any()
    rho = f.density_m
    assert abs((g.x * rho).sum() / rho.sum() - ps.x0) < g.dx
    dphi = np.angle(f.psi_m[1:] * np.conj(f.psi_m[:-1])) / g.dx
    w = rho[1:] * rho[:-1]
    assert (dphi * w).sum() / w.sum() == pytest.approx(ps.k, rel=1e-3)


def test_packet_guards():
    g = _packet_grid()
    with pytest.raises(ValueError):
        PacketSpec(x0=1e-5, sigma=1e-5, k=3e5)
    with pytest.raises(ValueError, match="wide"):
        PacketSpec(x0=-1e-4, sigma=1e-5, k=1e5)
    with pytest.raises(ValueError, match="step"):
        gaussian_packet(g, _spec_packet(x0=-2e-4))
    with pytest.raises(ValueError, match="edges"):
        gaussian_packet(g, _spec_packet(x0=-9e-4))


def test_flat_top_envelope():
    sigma, h = 1e-4, 2e-3
    ps = PacketSpec(x0=-1e-3, sigma=sigma, k=3e5, plateau=2 * h)
    x = np.array([-1e-3, -1e-3 + 0.8 * h, -1e-3 - h, -1e-3 - h - 3 * sigma])
    env = ps.envelope(x)
    # box convolved with the normalised amplitude Gaussian, by quadrature
    g = lambda y: np.exp(-(y**2) / (4 * sigma**2)) / np.sqrt(4 * np.pi * sigma**2)
    oracle = [quad(g, a - h, a + h, points=[0.0], limit=200)[0] for a in x - ps.x0]
    assert env == pytest.approx(oracle, rel=1e-9, abs=1e-15)
    assert env[0] == pytest.approx(1.0, abs=1e-12) and env[2] == pytest.approx(0.5, rel=1e-9)
    plain = PacketSpec(x0=-1.0, sigma=sigma, k=3e5)
    assert plain.envelope(np.array([-1.0 + 2 * sigma]))[0] == pytest.approx(np.exp(-1.0))


def test_carrier_wavenumber_matches_lattice_energy():
    m, dx, E = 0.0659, 2e-7, 877e9
    k = carrier_wavenumber(E, m, dx)
    assert (1 - np.cos(k * dx)) / (m * dx**2) == pytest.approx(E, rel=1e-12)
    assert k == pytest.approx(np.sqrt(2 * m * E), rel=1e-3)
    with pytest.raises(ValueError):
        carrier_wavenumber(1e20, m, dx)


def _uniform_potential(grid, c, params=PAPER_PARAMS):
    n = grid.n
    return PotentialProfile(
        v_m=np.full(n, c), v_a=np.full(n, c), v_i=np.zeros(n), wall_mask=np.ones(n, bool), grid=grid, params=params
    )


@pytest.mark.parametrize("cdt", [0.01, 0.05, 0.2])
def test_uniform_potential_phase(cdt):
    g = Grid.from_spacing(-1e-4, 1e-4, 1e-6)
    c = 5e11
    pot = _uniform_potential(g, c)
    f = FieldPair(np.ones(g.n, complex), np.zeros(g.n, complex), g)
    out = step(f, pot, cdt / c)
    centre = out.psi_m[g.i0]
    exact = np.exp(-1j * cdt)
    assert abs(centre - exact) <= cdt**3 / 12 * 1.01 + 1e-14
    shifted = step(f, pot, cdt / c, energy_ref=c)
    assert abs(shifted.psi_m[g.i0] - exact) < 1e-14


def test_decoupled_auxiliary_stays_empty():
    g = _packet_grid()
    pot = _uniform_potential(g, 0.0)
    f = gaussian_packet(g, _spec_packet())
    for out in iter_evolve(f, pot, EvolveConfig(dt=1e-13, t_end=50e-13)):
        pass
    assert not out.psi_a.any()


@given(st.floats(min_value=1e-14, max_value=2e-12))
def test_step_is_reversible_and_unitary(dt):
    g = Grid.from_spacing(-1e-3, 5e-5, 1e-6)
    pot = build_potential(PAPER_PARAMS, g)
    f = gaussian_packet(g, PacketSpec(x0=-4.9e-4, sigma=6e-5, k=3.4e5))
    prop_f, prop_b = Propagator(pot, dt), Propagator(pot, -dt)
    a = prop_f.step(f)
    assert a.norm() == pytest.approx(1.0, abs=1e-12)
    back = prop_b.step(a)
    # the clamped end nodes drop the packet's 1e-6 tail amplitude, so compare the interior
    assert np.max(np.abs(back.psi_m[1:-1] - f.psi_m[1:-1])) < 1e-10


def test_step_rejects_mismatched_grid():
    g = _packet_grid()
    f = gaussian_packet(g, _spec_packet())
    other = build_potential(PAPER_PARAMS, Grid.from_spacing(-1e-4, 1e-4, 1e-6))
    with pytest.raises(ValueError, match="grids"):
        step(f, other, 1e-13)


def test_auxiliary_wall_is_enforced():
    g = Grid.from_spacing(-1e-3, 1e-4, 5e-7)
    pot = build_potential(PAPER_PARAMS, g)
    f = gaussian_packet(g, PacketSpec(x0=-4.6e-4, sigma=6e-5, k=3.4e5))
    for out in iter_evolve(f, pot, EvolveConfig(dt=2e-13, t_end=300 * 2e-13, energy_ref=877e9)):
        pass
    assert not out.psi_a[: g.i0 + 1].any()
    assert np.abs(out.psi_a).max() > 0
    assert out.psi_m[0] == 0 and out.psi_m[-1] == 0


def test_evolve_zero_time_and_strides():
    g = _packet_grid()
    pot = build_potential(PAPER_PARAMS, g)
    f = gaussian_packet(g, _spec_packet())
    assert len(evolve(f, pot, EvolveConfig(dt=1e-13, t_end=0))) == 1
    seen = []
    snaps = evolve(f, pot, EvolveConfig(dt=1e-13, t_end=10e-13, snapshot_stride=3), observers=[seen.append])
    assert [round(s.t / 1e-13) for s in snaps] == [0, 3, 6, 9, 10]
    assert len(seen) == len(snaps)
    assert evolve(f, pot, EvolveConfig(dt=1e-13, t_end=3e-13), keep=False) == []


def test_evolve_config_validation():
    with pytest.raises(ValueError):
        EvolveConfig(dt=0, t_end=1)
    with pytest.raises(ValueError):
        EvolveConfig(dt=1.0, t_end=0.5)
    with pytest.raises(ValueError):
        EvolveConfig(dt=1.0, t_end=2.0, snapshot_stride=0)


def test_edge_contamination_aborts():
    g = Grid.from_spacing(-1e-3, 1.5e-3, 1e-6)
    pot = _uniform_potential(g, 0.0)
    f = gaussian_packet(g, PacketSpec(x0=-4.8e-4, sigma=6e-5, k=3.4e5))
    with pytest.raises(EdgeContaminationError):
        evolve(f, pot, EvolveConfig(dt=5e-13, t_end=1e-9), keep=False)


def test_large_phase_step_warns():
    g = _packet_grid()
    pot = build_potential(PAPER_PARAMS, g)
    f = gaussian_packet(g, _spec_packet())
    with pytest.warns(UserWarning, match="poorly resolved"):
        evolve(f, pot, EvolveConfig(dt=1e-12, t_end=1e-12), keep=False)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        evolve(f, pot, EvolveConfig(dt=1e-12, t_end=1e-12, energy_ref=400e9), keep=False)


def test_default_dt_formula():
    g = _packet_grid()
    pot = build_potential(PAPER_PARAMS, g)
    assert default_dt(pot, 1.0) == pytest.approx(0.2 / 817e9)
    kmax = 1e6
    assert default_dt(pot, kmax) == pytest.approx(0.2 / (kmax**2 / (2 * PAPER_PARAMS.m)))


def test_current_of_real_and_plane_waves():
    g = Grid.from_spacing(-1e-5, 1e-5, 1e-8)
    z = np.zeros(g.n, complex)
    real = FieldPair(np.cos(3e5 * g.x).astype(complex), z, g)
    assert not probability_current(real, 0.0659).any()
    k, m = 3e5, 0.0659
    plane = FieldPair(np.exp(1j * k * g.x), z, g)
    j = probability_current(plane, m)
    assert np.allclose(j[1:-1], np.sin(k * g.dx) / (g.dx * m), rtol=1e-12)
    assert j[1:-1] == pytest.approx(k / m, rel=(k * g.dx) ** 2)
    assert j[0] == 0 and j[-1] == 0
    with pytest.raises(ValueError):
        probability_current(plane, m, "sideways")


def test_stored_number():
    g = _packet_grid()
    assert stored_number(gaussian_packet(g, _spec_packet())) < 1e-12
    spec = spec_from_delta(PAPER_PARAMS, -100e9)
    k = wavenumbers(PAPER_PARAMS, spec, exact=True)
    gf = Grid.from_spacing(-1e-6, 40 / (k.k2 - k.k1), 2e-9)
    f = stationary_state(PAPER_PARAMS, spec, gf, exact=True)
    # left-point sum of a decaying profile overshoots by about k2 dx
    assert stored_number(f) == pytest.approx(N_FORBIDDEN_UNIT, rel=2 * k.k2 * gf.dx)
    trap = stored_number(f) - 0.5 * f.density[gf.i0] * gf.dx
    assert trap == pytest.approx(N_FORBIDDEN_UNIT, rel=1e-4)


def _synthetic_snapshots(levels):
    g = Grid.from_spacing(-1e-5, 1e-5, 1e-6)
    out = []
    for i, lev in enumerate(levels):
        psi_m = np.full(g.n, np.sqrt(lev), complex)
        psi_a = np.zeros(g.n, complex)
        psi_a[g.i0 + 1 :] = 0.1 * np.sqrt(lev) * (1 + 0.01 * i)
        out.append(FieldPair(psi_m, psi_a, g, t=float(i)))
    return out


def test_quasi_stationary_window_detection():
    snaps = _synthetic_snapshots([0.1, 0.5, 1.0, 1.001, 0.999, 1.002, 0.6, 0.2])
    q = quasi_stationary_pa(snaps)
    assert (q.t_start, q.t_stop, q.count) == (2.0, 5.0, 4)
    g = snaps[0].grid
    expect = np.mean([(0.1 * (1 + 0.01 * i)) ** 2 / (1 + (0.1 * (1 + 0.01 * i)) ** 2) for i in range(2, 6)])
    assert q.pa[g.i0 + 3] == pytest.approx(expect, rel=1e-12)
    single = quasi_stationary_pa(snaps, window=(3.0, 3.0))
    assert single.count == 1 and single.t_start == 3.0
    with pytest.raises(PlateauError, match="drifts"):
        quasi_stationary_pa(snaps, window=(0.0, 3.0))
    with pytest.raises(PlateauError):
        quasi_stationary_pa(_synthetic_snapshots([0.1, 0.3, 0.9, 2.7]))
    with pytest.raises(PlateauError):
        quasi_stationary_pa([])


def test_dump_state_csv_round_trip(tmp_path):
    g = Grid.from_spacing(-2e-6, 2e-6, 1e-6)
    psi_a = np.zeros(g.n, complex)
    psi_a[-1] = 0.5 - 0.25j
    f = FieldPair(np.arange(g.n) * (1 + 2j), psi_a, g, t=1.5e-10)
    path = tmp_path / "state.csv"
    dump_state_csv(f, path)
    text = path.read_text().splitlines()
    assert text[0].startswith("# t = 1.5e-10")
    data = np.genfromtxt(path, delimiter=",", skip_header=3)
    assert np.array_equal(data[:, 0], g.x)
    assert np.array_equal(data[:, 1] + 1j * data[:, 2], f.psi_m)
    assert np.array_equal(data[:, 3] + 1j * data[:, 4], f.psi_a)


def test_allowed_scattering_transmits_at_group_speed():
    spec = spec_from_delta(PAPER_PARAMS, 200e9)
    plan = plan_scattering(PAPER_PARAMS, spec, plateau_sigmas=0, full_reflection=True)
    snaps = evolve(plan.initial_field(), plan.potential, plan.config)
    end = snaps[-1]
    g = end.grid
    right = g.x >= 0
    left_norm = end.density[~right].sum() * g.dx
    trans = end.density[right].sum() * g.dx
    assert left_norm + trans == pytest.approx(1.0, abs=1e-8)
    assert trans > 0.5

    def centroid(f):
        rho = f.density * right
        return (g.x * rho).sum() / rho.sum()

    a = snaps[-20]
    speed = (centroid(end) - centroid(a)) / (end.t - a.t)
    k2 = wavenumbers(PAPER_PARAMS, spec, exact=True).k2
    assert speed == pytest.approx(k2 / PAPER_PARAMS.m, rel=0.02)


def test_forbidden_plateau_fringes_and_zero_current():
    spec = spec_from_delta(PAPER_PARAMS, -200e9)
    plan = plan_scattering(PAPER_PARAMS, spec)
    snaps = []
    evolve(
        plan.initial_field(),
        plan.potential,
        plan.config,
        observers=[lambda f: snaps.append(f.crop(*plan.crop))],
        keep=False,
    )
    q = quasi_stationary_pa(snaps, upto=plan.probe)
    inside = [s for s in snaps if q.t_start <= s.t <= q.t_stop]
    f = inside[len(inside) // 2]
    g = f.grid
    rho = f.density_m[: g.i0]
    # fringe period from the minima of the standing wave
    mins = np.flatnonzero((rho[1:-1] < rho[:-2]) & (rho[1:-1] <= rho[2:])) + 1
    spacing = np.diff(g.x[mins]).mean()
    k0 = wavenumbers(PAPER_PARAMS, spec).k0
    assert spacing == pytest.approx(np.pi / k0, rel=0.02)
    j = probability_current(f, PAPER_PARAMS.m)[: g.i0]
    incident = k0 / PAPER_PARAMS.m * rho.max() / 4
    assert np.abs(j[1:]).max() < 1e-2 * incident
    N = [stored_number(s, plan.probe) for s in inside]
    assert (max(N) - min(N)) / max(N) < 0.01
