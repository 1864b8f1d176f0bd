"""Command-line runner.

Every command reads an optional flat ``key = value`` config file (``#``
starts a comment), applies ``--set key=value`` overrides and writes CSV
files into ``--out``.  Exit codes: 0 success, 1 runtime failure, 2 bad input.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import analysis, analytic, bohmian, tdse
from .model import Grid, PhysicalParams, build_potential, energy_spec, spec_from_delta
from .scenarios import plan_scattering

log = logging.getLogger("bohmguide")


class ConfigError(ValueError):
    """Malformed config file or override."""


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> list[float]:
    return [float(p) for p in s.replace(";", ",").split(",") if p.strip()]


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


# Units: s^-1 for energies and rates, s m^-2 for the mass, m for lengths, s for times.
SCHEMA: dict[str, Key] = {
    "m": Key(float, 0.0659, "effective mass [s m^-2]"),
    "V0": Key(float, 817e9, "step height [s^-1]"),
    "J0": Key(float, 40e9, "guide coupling [s^-1]"),
    "delta": Key(float, -100e9, "detuning E - V0 + J0 [s^-1]"),
    "E": Key(_opt_float, None, "energy [s^-1]; overrides delta when set"),
    "t_max": Key(_opt_float, None, "two-state end time [s]; default a quarter period"),
    "steps": Key(int, 100, "two-state time steps"),
    "exact": Key(_bool, False, "use the exact dispersion root"),
    "guard": Key(float, analytic.DEFAULT_GUARD, "minimum |delta|/J0 for the approximate branch"),
    "amplitude": Key(float, 1.0, "stationary-state amplitude on the step side"),
    "x_min": Key(_opt_float, None, "stationary grid left end [m]"),
    "x_max": Key(_opt_float, None, "stationary grid right end [m]"),
    "dx": Key(_opt_float, None, "grid spacing [m]"),
    "dt": Key(_opt_float, None, "time step [s]"),
    "sigma": Key(_opt_float, None, "packet edge width [m]"),
    "plateau_sigmas": Key(float, 0.0, "flat-top length in edge widths (evolve, trajectories)"),
    "full_reflection": Key(_bool, True, "run until the packet has left the step"),
    "gap_sigmas": Key(float, 3.2, "edge width in units of the threshold-limited spread"),
    "n_snapshots": Key(int, 150, "snapshots kept per run"),
    "edge_tolerance": Key(float, 1e-6, "allowed density share on the domain edges"),
    "plateau_tolerance": Key(float, 0.01, "stored-number drift allowed on the plateau"),
    "window_max_pa": Key(float, 0.01, "upper p_a of the small-x fit window"),
    "density_floor": Key(float, bohmian.DENSITY_FLOOR, "relative density below which guidance is masked"),
    "count": Key(int, 1000, "number of Bohmian particles"),
    "record": Key(int, 200, "particles whose trajectories are written"),
    "cadence": Key(int, 10, "snapshots between checkpoints"),
    "bins": Key(int, 100, "histogram bins per guide"),
    "cfl": Key(float, 1.0, "cells a particle may cross per substep"),
    "max_substeps": Key(int, 4, "particle substeps per snapshot interval"),
    "source": Key(str, "analytic", "dwell input: analytic or tdse"),
    "deltas": Key(_floats, [-200e9, -100e9, 100e9, 200e9], "sweep detunings [s^-1]"),
    "seed": Key(int, 0, "random seed"),
    "workers": Key(int, 1, "parallel workers"),
}


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"{origin}:{lineno}: empty key")
        raw[key] = value
    return raw


def build_config(raw: dict[str, str]) -> dict[str, Any]:
    cfg = {k: spec.default for k, spec in SCHEMA.items()}
    for key, value in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            cfg[key] = SCHEMA[key].parse(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    if cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    if cfg["count"] < 0 or cfg["record"] < 0:
        raise ConfigError("count and record must be >= 0")
    if cfg["source"] not in ("analytic", "tdse"):
        raise ConfigError("source must be 'analytic' or 'tdse'")
    return cfg


def _params(cfg) -> PhysicalParams:
    return PhysicalParams(m=cfg["m"], V0=cfg["V0"], J0=cfg["J0"])


def _spec(cfg, params):
    return energy_spec(params, cfg["E"]) if cfg["E"] is not None else spec_from_delta(params, cfg["delta"])


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows, comments: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def cmd_two_state(cfg, out: Path) -> int:
    J0 = cfg["J0"]
    t_max = cfg["t_max"] if cfg["t_max"] is not None else math.pi / (2 * J0)
    steps = cfg["steps"]
    if steps < 1 or not t_max > 0:
        raise ConfigError("two-state needs steps >= 1 and t_max > 0")
    rows = []
    for t in np.linspace(0.0, t_max, steps + 1):
        cm, ca = analytic.two_state_evolve(J0, float(t))
        rows.append((t, abs(cm) ** 2, abs(ca) ** 2))
    write_csv(
        out / "two_state.csv", ["t", "p_m", "p_a"], rows, [f"J0 = {J0!r} s^-1", "t [s]; p_m, p_a dimensionless"]
    )
    print(f"final p_a = {rows[-1][2]:.12g}")
    return 0


def _stationary_grid(cfg, params, spec) -> Grid:
    k = analytic.wavenumbers(params, spec, exact=False, guard=0.0)
    dx = cfg["dx"] if cfg["dx"] is not None else 0.02 / max(k.k0, k.k2)
    scale = 2 * math.pi / k.k1 if k.k1 > 0 else 200 * dx
    x_min = cfg["x_min"] if cfg["x_min"] is not None else -min(scale, 8 * math.pi / k.k0)
    x_max = cfg["x_max"] if cfg["x_max"] is not None else scale
    return Grid.from_spacing(x_min, x_max, dx)


def cmd_stationary(cfg, out: Path) -> int:
    params = _params(cfg)
    spec = _spec(cfg, params)
    grid = _stationary_grid(cfg, params, spec)
    field = analytic.stationary_state(
        params, spec, grid, cfg["amplitude"], exact=cfg["exact"], guard=cfg["guard"]
    )
    potential = build_potential(params, grid)
    g = bohmian.guidance(field, potential, cfg["density_floor"])
    pa = analytic.pa_profile(field)
    rows = zip(
        grid.x, field.psi_m.real, field.psi_m.imag, field.psi_a.real, field.psi_a.imag,
        pa, g.v_m, g.v_a, g.sigma_m, g.sigma_a,
    )
    write_csv(
        out / "stationary.csv",
        ["x", "re_psi_m", "im_psi_m", "re_psi_a", "im_psi_a", "p_a", "v_m", "v_a", "sigma_m", "sigma_a"],
        rows,
        [
            f"delta = {spec.delta!r} s^-1, regime = {spec.regime.name.lower()}, exact = {cfg['exact']}",
            "x [m], psi [arbitrary], p_a [1], v [m/s], sigma [s^-1]",
        ],
    )
    return 0


def _plan(cfg, params, spec):
    return plan_scattering(
        params,
        spec,
        dx=cfg["dx"],
        dt=cfg["dt"],
        sigma=cfg["sigma"],
        plateau_sigmas=cfg["plateau_sigmas"],
        full_reflection=cfg["full_reflection"],
        n_snapshots=cfg["n_snapshots"],
        gap_sigmas=cfg["gap_sigmas"],
    )


def cmd_evolve(cfg, out: Path) -> int:
    params = _params(cfg)
    spec = _spec(cfg, params)
    plan = _plan(cfg, params, spec)
    config = tdse.EvolveConfig(
        dt=plan.config.dt,
        t_end=plan.config.t_end,
        snapshot_stride=plan.config.snapshot_stride,
        edge_tolerance=cfg["edge_tolerance"],
        energy_ref=plan.config.energy_ref,
    )
    rows = []
    last: list[tdse.FieldPair] = []

    def record(f):
        g = f.grid
        left = float(f.density[: g.i0].sum() * g.dx)
        rows.append((f.t, left, tdse.stored_number(f), f.norm(), tdse.stored_number(f, plan.probe)))
        last[:] = [f]

    tdse.evolve(plan.initial_field(), plan.potential, config, observers=[record], keep=False)
    write_csv(
        out / "evolve.csv",
        ["t", "norm_left", "norm_right", "norm_total", "stored_near_step"],
        rows,
        [f"delta = {spec.delta!r} s^-1, dx = {plan.grid.dx!r} m, dt = {config.dt!r} s", "t [s]; norms dimensionless"],
    )
    tdse.dump_state_csv(last[0], out / "final_state.csv")
    final = rows[-1]
    print(f"reflected norm = {final[1] / final[3]:.12f}")
    print(f"transmitted norm = {final[2] / final[3]:.3e}")
    print(f"norm drift = {abs(final[3] - rows[0][3]):.3e}")
    return 0


def cmd_trajectories(cfg, out: Path) -> int:
    params = _params(cfg)
    spec = _spec(cfg, params)
    plan = _plan(cfg, params, spec)
    f0 = plan.initial_field()
    ens = bohmian.sample_ensemble(f0, cfg["count"], cfg["seed"], cfg["density_floor"])
    ids = np.arange(min(cfg["record"], cfg["count"]))
    recorder = bohmian.TrajectoryRecorder(ids)
    every = bohmian.TrajectoryRecorder()
    hist = []

    def checkpoint(f, e):
        if cfg["count"]:
            hist.append((f.t, bohmian.histogram_distance(f, e, cfg["bins"])))

    traj = _trajectory(f0, plan)
    final = bohmian.propagate(
        traj,
        plan.potential,
        ens,
        cfg["seed"],
        observers=[recorder, every, _every(cfg["cadence"], checkpoint)],
        cfl=cfg["cfl"],
        max_substeps=cfg["max_substeps"],
        workers=cfg["workers"],
    )
    recorder.write_csv(out / "trajectories.csv")
    write_csv(out / "histograms.csv", ["t", "tv_distance"], hist, [f"{cfg['bins']} bins per guide", "t [s]"])
    times, xs, _ = every.arrays()
    stats = bohmian.dwell_statistics(times, xs)
    write_csv(
        out / "ensemble_summary.csv",
        ["count", "never_entered", "trapped_at_end", "jumps", "anomalies"],
        [(cfg["count"], stats.never_entered_fraction, stats.trapped_fraction,
          final.diagnostics["jumps"], final.diagnostics["anomalies"])],
        ["fractions of the ensemble; counts are totals over the run"],
    )
    if final.diagnostics["anomalies"]:
        log.warning("%d particle anomalies", final.diagnostics["anomalies"])
    return 0


def _trajectory(f0, plan):
    yield f0
    stride = plan.config.snapshot_stride
    for i, f in enumerate(tdse.iter_evolve(f0, plan.potential, plan.config), start=1):
        if i % stride == 0 or i == plan.config.n_steps:
            yield f


def _every(cadence, fn):
    count = [0]

    def ob(f, e):
        if count[0] % cadence == 0:
            fn(f, e)
        count[0] += 1

    return ob


def cmd_dwell(cfg, out: Path) -> int:
    params = _params(cfg)
    spec = _spec(cfg, params)
    k = analytic.wavenumbers(params, spec, exact=False, guard=0.0)
    if cfg["source"] == "analytic":
        dx = cfg["dx"] if cfg["dx"] is not None else 0.005 / max(k.k0, k.k2)
        decay = 40 / (k.k2 - k.k1) if not spec.allowed else 2 * math.pi / k.k1
        grid = Grid.from_spacing(-8 * math.pi / k.k0, decay, dx)
        field = analytic.stationary_state(
            params, spec, grid, cfg["amplitude"], exact=cfg["exact"], guard=cfg["guard"]
        )
    else:
        res = analysis.measure_speed(
            params,
            spec.delta,
            window_max_pa=cfg["window_max_pa"],
            plateau_tolerance=cfg["plateau_tolerance"],
            guard=cfg["guard"],
            dx=cfg["dx"],
            dt=cfg["dt"],
            plateau_sigmas=cfg["plateau_sigmas"] or 20.0,
            gap_sigmas=cfg["gap_sigmas"],
        )
        field = res.field
    rows = [(v, float(analysis.dwell_time(field, params, spec, v))) for v in ("bohmian", "standard")]
    n = tdse.stored_number(field)
    write_csv(
        out / "dwell.csv",
        ["variant", "tau", "stored_number"],
        [(v, t, n) for v, t in rows],
        [f"delta = {spec.delta!r} s^-1, source = {cfg['source']}", "tau [s]; inf marks zero net current"],
    )
    for v, t in rows:
        print(f"{v}: tau = {t!r} s")
    return 0


def cmd_sweep(cfg, out: Path) -> int:
    params = _params(cfg)
    rows = analysis.sweep(
        params,
        cfg["deltas"],
        workers=cfg["workers"],
        window_max_pa=cfg["window_max_pa"],
        plateau_tolerance=cfg["plateau_tolerance"],
        guard=cfg["guard"],
        dx=cfg["dx"],
        dt=cfg["dt"],
        gap_sigmas=cfg["gap_sigmas"],
        n_snapshots=cfg["n_snapshots"],
    )
    analysis.write_sweep_csv(rows, out / "sweep.csv")
    failed = [r for r in rows if r.status != "ok"]
    for r in rows:
        if r.status == "ok":
            print(f"delta = {r.delta:+.3e}: v_hat/|v| = {r.v_hat / r.v:.4f}")
        else:
            print(f"delta = {r.delta:+.3e}: failed ({r.error})")
    return 1 if failed else 0


COMMANDS = {
    "two-state": cmd_two_state,
    "stationary": cmd_stationary,
    "evolve": cmd_evolve,
    "trajectories": cmd_trajectories,
    "dwell": cmd_dwell,
    "sweep": cmd_sweep,
}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bohmguide", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="flat key = value file")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        raw = {}
        if args.config is not None:
            try:
                text = args.config.read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
            raw.update(parse_config_text(text, str(args.config)))
        raw.update(parse_config_text("\n".join(args.overrides), "--set"))
        if args.seed is not None:
            raw["seed"] = str(args.seed)
        if args.workers is not None:
            raw["workers"] = str(args.workers)
        cfg = build_config(raw)
        args.out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, args.out)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
