"""Command-line entry point: simulate, meanfield, chaos and verify runs.

Every run writes ``config.echo.json`` (the fully materialized config), its
tables and ``summary.json`` into the output directory.  Exit codes: 0 when all
configured checks hold, 1 when any is violated, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .chaos import ChaosExperiment, chaos_rate_sweep, discrepancy_ladder
from .errors import ChaosflockError, ConfigError
from .experiments import uniform_disk_velocities
from .geometry import rope_bound_check, verify_h2
from .io import trajectory_header, trajectory_rows, write_csv, write_json
from .meanfield import (BetaBump, CosineProfile, PhaseDensity, PhaseGrid, ProductLaw,
                        nonlinear_sde_proxy, riccati_envelope, solve_kinetic)
from .rng import replica_seed
from .sde import DiffusionTruncation, ParticleEnsemble, SimParams, simulate, simulate_batch
from .transport import EmpiricalMeasure, RateModel, w1_assignment, w1_brute_force, w1_sorted_1d


class Checks:
    """Named pass/fail records collected during a run."""

    def __init__(self):
        self.items = {}

    def add(self, name, value, threshold, ok):
        self.items[name] = dict(value=value, threshold=threshold, ok=bool(ok))

    @property
    def ok(self) -> bool:
        return all(c["ok"] for c in self.items.values())


def _law(cfg):
    m = cfg.meanfield
    return ProductLaw(CosineProfile(m.L, m.x_amplitude), BetaBump(m.v_center, m.v_half_width))


def _check_band(checks, name, value, band):
    if band is not None:
        lo, hi = band
        checks.add(name, value, [lo, hi], lo <= value <= hi)


# -- subcommands ----------------------------------------------------------------


def cmd_simulate(cfg, out: Path, checks: Checks) -> dict:
    s = cfg.sim
    d = cfg.region.d
    kernel = cfg.region.kernel()
    trunc = DiffusionTruncation(s.v_m)
    params = SimParams(s.sigma, s.dt, s.t_end, cfg.seed, s.box_length, s.c_slack, s.tau_boundary)
    rng = np.random.default_rng(replica_seed(cfg.seed, 2**32))
    X0 = s.position_scale * rng.random((s.replicas, s.n, d))
    V0 = uniform_disk_velocities(rng, (s.replicas, s.n), d, s.speed_max)
    every = max(1, s.snapshot_every)
    steps = sorted(set(range(0, params.n_steps + 1, every)) | {params.n_steps})
    times = [k * s.dt for k in steps]
    header = trajectory_header(d)
    if s.record_events:
        if s.replicas != 1:
            raise ConfigError("sim.record_events requires sim.replicas = 1")
        res = simulate(ParticleEnsemble(X0[0], V0[0]), params, trunc, kernel, times, record_events=True)
        max_speed = np.array([res.max_speed_seen])
        rows = []
        for t in sorted(res.snapshots):
            e = res.snapshots[t]
            rows.extend(trajectory_rows(t, e.positions, e.velocities))
        write_csv(out / "trajectories.csv", header, rows)
        write_csv(out / "events.csv", ["t", "i", "j", "dist_to_theta"], res.events)
    else:
        seeds = [cfg.seed] if s.replicas == 1 else [replica_seed(cfg.seed, k) for k in range(s.replicas)]
        _, _, max_speed, snaps = simulate_batch(X0, V0, params, trunc, kernel, seeds, times, cfg.threads,
                                                check_speed=False)
        for r in range(s.replicas):
            rows = []
            for k in sorted(snaps):
                rows.extend(trajectory_rows(k * s.dt, snaps[k][0][r], snaps[k][1][r]))
            name = "trajectories.csv" if s.replicas == 1 else f"trajectories_r{r:03d}.csv"
            write_csv(out / name, header, rows)
    limit = params.speed_limit(trunc)
    write_csv(out / "max_speed.csv", ["replica", "max_speed"], list(enumerate(max_speed.tolist())))
    if cfg.checks.speed_bound:
        checks.add("speed_bound", float(max_speed.max()), limit, max_speed.max() <= limit)
    return dict(max_speed=float(max_speed.max()), speed_limit=limit, n_steps=params.n_steps,
                replicas=s.replicas, n=s.n, d=d)


def _write_density(path, values):
    nx, nv = values.shape
    ii, kk = np.meshgrid(np.arange(nx), np.arange(nv), indexing="ij")
    write_csv(path, ["x_index", "v_index", "value"], zip(ii.ravel().tolist(), kk.ravel().tolist(),
                                                         values.ravel().tolist()))


def cmd_meanfield(cfg, out: Path, checks: Checks) -> dict:
    m = cfg.meanfield
    s = cfg.sim
    kernel = cfg.region.kernel()
    trunc = DiffusionTruncation(s.v_m)
    grid = PhaseGrid.for_speed_bound(m.L, m.nx, m.nv, s.v_m)
    law = _law(cfg)
    snap_times = sorted(set(float(t) for t in m.snapshot_times))
    if m.mode == "kinetic":
        params = SimParams(s.sigma, s.dt, m.t_end)
        res = solve_kinetic(PhaseDensity.from_law(law, grid), params, trunc, kernel, m.t_end,
                            snapshot_times=snap_times, check_envelope=False)
        for snap in res.snapshots:
            _write_density(out / f"density_t{snap.time:.6f}.csv", snap.values)
        t = res.column("t")
        mass = res.column("mass")
        mom = res.column("momentum")
        linf = res.column("linf")
        env = riccati_envelope(t, linf[0], res.envelope_rate)
        write_json(out / "ledger.json", dict(rows=res.ledger, envelope_rate=res.envelope_rate, dt=res.dt))
        drift = float(np.max(np.abs(mass - mass[0])) / mass[0] / max(m.t_end, 1e-300))
        mdrift = float(np.max(np.abs(mom - mom[0])))
        vsup = float(res.column("vsupport").max())
        c = cfg.checks
        if c.mass_drift is not None:
            checks.add("mass_drift", drift, c.mass_drift, drift <= c.mass_drift)
        if c.momentum_drift is not None:
            checks.add("momentum_drift", mdrift, c.momentum_drift, mdrift <= c.momentum_drift)
        if c.vsupport_cells is not None:
            lim = s.v_m + c.vsupport_cells * grid.dv
            checks.add("vsupport", vsup, lim, vsup <= lim)
        if c.envelope:
            ratio = float(np.max(linf / env))
            checks.add("linf_envelope", ratio, 2.0, ratio <= 2.0)
        return dict(mode="kinetic", mass_drift=drift, momentum_drift=mdrift, vsupport=vsup,
                    envelope_rate=res.envelope_rate, steps=len(res.ledger) - 1)
    params = SimParams(s.sigma, s.dt, m.t_end, cfg.seed, m.L)
    init = law.sample(m.m_samples, np.random.default_rng(replica_seed(cfg.seed, 2**32)))
    snaps = nonlinear_sde_proxy(init, params, trunc, kernel, m.refresh_every, snap_times)
    ledger = []
    for step in sorted(snaps):
        e = snaps[step]
        h, _, _ = np.histogram2d(e.positions[:, 0], e.velocities[:, 0], bins=[grid.x_faces, grid.v_faces])
        vals = h / (e.n * grid.dx * grid.dv)
        _write_density(out / f"density_t{step * s.dt:.6f}.csv", vals)
        ledger.append(dict(t=step * s.dt, mass=float(h.sum() / e.n), momentum=float(e.velocities.mean()),
                           max_speed=float(e.speeds().max())))
    write_json(out / "ledger.json", dict(rows=ledger))
    limit = params.speed_limit(trunc)
    top = max(r["max_speed"] for r in ledger)
    if cfg.checks.speed_bound:
        checks.add("speed_bound", top, limit, top <= limit)
    return dict(mode="proxy", samples=m.m_samples, max_speed=top)


def cmd_chaos(cfg, out: Path, checks: Checks) -> dict:
    c = cfg.chaos
    s = cfg.sim
    kernel = cfg.region.kernel()
    law = ProductLaw(CosineProfile(c.L, cfg.meanfield.x_amplitude),
                     BetaBump(cfg.meanfield.v_center, cfg.meanfield.v_half_width))
    params = SimParams(s.sigma, c.dt, c.horizon, cfg.seed, c.L)
    exp = ChaosExperiment(tuple(c.n_ladder), params, DiffusionTruncation(s.v_m), kernel, law, c.replicas,
                          c.horizon, c.proxy_size, c.q, cfg.seed)
    res = chaos_rate_sweep(exp, threads=cfg.threads)
    header = ["N", "t", "mean_coupling_error", "stderr", "w1_to_target", "w1_stderr", "fg_prediction"]
    write_csv(out / "chaos.csv", header, [[r[k] for k in header] for r in res.rows])
    model = RateModel(1.0, 2 * exp.d, c.q)
    fit = dict(slope=res.fit_total.slope, stderr=res.fit_total.stderr, case=model.case, q=c.q, n=model.n,
               coupling_slope=res.fit_coupling.slope, coupling_stderr=res.fit_coupling.stderr,
               predicted=res.predicted_slopes, proxy_self_distance=res.proxy_self_distance)
    write_json(out / "fit.json", fit)
    _check_band(checks, "rate_slope", res.fit_total.slope, cfg.checks.slope_range)
    return dict(slope=res.fit_total.slope, stderr=res.fit_total.stderr, ladder=list(exp.n_ladder))


def _phase_sampler(d):
    def sampler(rng, n):
        x = rng.uniform(-1.5, 1.5, (n, d))
        return np.concatenate([x, uniform_disk_velocities(rng, (n,), d, 2.0)], axis=1)

    return sampler


def cmd_verify(cfg, out: Path, checks: Checks) -> dict:
    v = cfg.verify
    d = cfg.region.d
    region = cfg.region.build()
    theta = cfg.region.theta()
    rep = verify_h2(theta, v.h2_samples, cfg.seed)
    h2 = dict(constant=rep.constant, max_ratio_ii=rep.max_ratio_ii, required_constant_iii=rep.required_constant_iii,
              required_constant_iv=rep.required_constant_iv, samples=rep.samples, violations=len(rep.violations),
              first_violation=rep.violations[0] if rep.violations else None)
    if cfg.checks.h2_zero_violations:
        checks.add("h2_violations", len(rep.violations), 0, rep.ok)

    rng = np.random.default_rng(replica_seed(cfg.seed, 1))
    n = v.rope_samples
    x1 = rng.uniform(-1.5, 1.5, (n, d))
    y1 = rng.uniform(-1.5, 1.5, (n, d))
    x2 = x1 + 0.1 * rng.standard_normal((n, d))
    y2 = y1 + 0.1 * rng.standard_normal((n, d))
    vel = uniform_disk_velocities(rng, (n,), d, 2.0)
    held = rope_bound_check(region, x1, y1, x2, y2, vel)
    rope = dict(samples=n, failures=int(np.sum(~held)))
    if cfg.checks.rope:
        checks.add("rope_failures", rope["failures"], 0, rope["failures"] == 0)

    rng = np.random.default_rng(replica_seed(cfg.seed, 2))
    dev_perm = 0.0
    for _ in range(v.w1_instances):
        a = EmpiricalMeasure(rng.random((6, 2)))
        b = EmpiricalMeasure(rng.random((6, 2)))
        dev_perm = max(dev_perm, abs(w1_assignment(a, b) - w1_brute_force(a, b)))
    dev_sorted = 0.0
    for _ in range(4 * v.w1_instances):
        m = int(rng.integers(1, 40))
        a = EmpiricalMeasure(rng.standard_normal((m, 1)))
        b = EmpiricalMeasure(rng.standard_normal((m, 1)) + 0.5)
        dev_sorted = max(dev_sorted, abs(w1_assignment(a, b) - w1_sorted_1d(a, b)))
    w1 = dict(permutation_max_deviation=dev_perm, sorted_max_deviation=dev_sorted)
    if cfg.checks.w1_oracle_tol is not None:
        worst = max(dev_perm, dev_sorted)
        checks.add("w1_oracle", worst, cfg.checks.w1_oracle_tol, worst <= cfg.checks.w1_oracle_tol)

    u_grid = np.linspace(0.0, 2.0, 64)
    lln_fit = discrepancy_ladder(_phase_sampler(d), theta, v.lln_ladder, u_grid, 8, v.lln_reps, 2**16,
                                 replica_seed(cfg.seed, 3))
    lln = dict(slope=lln_fit.slope, stderr=lln_fit.stderr, ladder=list(v.lln_ladder), means=lln_fit.means)
    _check_band(checks, "lln_exponent", lln_fit.slope, cfg.checks.lln_exponent)
    write_json(out / "verify.json", dict(h2=h2, rope=rope, w1=w1, lln=lln))
    write_csv(out / "lln.csv", ["N", "mean", "stderr"], zip(lln_fit.ns.tolist(), lln_fit.means.tolist(),
                                                             lln_fit.stderrs.tolist()))
    return dict(h2_ok=rep.ok, rope_failures=rope["failures"], w1_max_deviation=max(dev_perm, dev_sorted),
                lln_slope=lln_fit.slope)


COMMANDS = dict(simulate=cmd_simulate, meanfield=cmd_meanfield, chaos=cmd_chaos, verify=cmd_verify)


# -- argument handling ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chaosflock", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run config")
        p.add_argument("--out", type=Path, help="output directory (CHAOSFLOCK_OUT overrides)")
        p.add_argument("--seed", type=int, help="top-level seed (unsigned 64-bit)")
        p.add_argument("--threads", type=int, help="worker threads (default: logical cores)")
    return parser


def resolve_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    cfg.experiment = args.command
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    elif cfg.threads is None:
        cfg.threads = os.cpu_count() or 1
    if args.out is not None:
        cfg.output_dir = str(args.out)
    env = os.environ.get("CHAOSFLOCK_OUT")
    if env:
        cfg.output_dir = env
    return cfgmod.validate(cfg)


def run(cfg: cfgmod.RunConfig) -> tuple[dict, Checks]:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.echo.json", dataclasses.asdict(cfg))
    checks = Checks()
    results = COMMANDS[cfg.experiment](cfg, out, checks)
    summary = dict(experiment=cfg.experiment, seed=cfg.seed, results=results, checks=checks.items, ok=checks.ok)
    write_json(out / "summary.json", summary)
    return summary, checks


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        summary, checks = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ChaosflockError as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for name, c in checks.items.items():
        print(f"{'PASS' if c['ok'] else 'FAIL'} {name}: {c['value']} (threshold {c['threshold']})")
    print(f"outputs in {cfg.output_dir}")
    return 0 if checks.ok else 1


if __name__ == "__main__":
    sys.exit(main())
