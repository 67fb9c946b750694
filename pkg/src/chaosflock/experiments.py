"""Reference experiment setups shared by the acceptance tests, scripts and CLI."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chaos import ChaosExperiment, build_proxy, chaos_rate_sweep, discrepancy_ladder, fit_rate
from .geometry import FixedBall, MollifiedKernel, ThetaFamily, VisionCone, position_smoothing_gap
from .meanfield import (BetaBump, CosineProfile, PhaseDensity, PhaseGrid, ProductLaw, grid_w1, solve_kinetic,
                        stability_experiment)
from .rng import replica_seed
from .sde import DiffusionTruncation, ParticleEnsemble, SimParams, simulate_batch
from .transport import EmpiricalMeasure, PhaseMetric, fit_loglog, w1_assignment


def uniform_disk_velocities(rng, shape, d, v_max):
    g = rng.standard_normal(shape + (d,))
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    rad = v_max * rng.random(shape) ** (1.0 / d)
    return rad[..., None] * g


# -- speed bound ------------------------------------------------------------


@dataclass
class SpeedBoundResult:
    max_speeds: np.ndarray
    limit: float

    @property
    def ok(self) -> bool:
        return bool(np.all(self.max_speeds <= self.limit))


def speed_bound_experiment(n_seeds=64, n=32, d=2, sigma=0.1, v_m=1.0, dt=1e-3, steps=10_000, r=0.5, eta=0.05,
                           eps=0.05, seed=0, threads=1) -> SpeedBoundResult:
    trunc = DiffusionTruncation(v_m)
    kernel = MollifiedKernel(FixedBall(r, d), eta, eps)
    params = SimParams(sigma, dt, steps * dt, seed)
    rng = np.random.default_rng(seed)
    X0 = rng.random((n_seeds, n, d))
    V0 = uniform_disk_velocities(rng, (n_seeds, n), d, v_m)
    seeds = [replica_seed(seed, k) for k in range(n_seeds)]
    _, _, ms, _ = simulate_batch(X0, V0, params, trunc, kernel, seeds, threads=threads, check_speed=False)
    return SpeedBoundResult(ms, params.speed_limit(trunc))


# -- mollifier L1 bound -------------------------------------------------------


def mollifier_l1_rows(eps_values=(0.02, 0.05, 0.1), r=1.0, d=2):
    rows = []
    for eps in eps_values:
        k = MollifiedKernel(FixedBall(r, d), 0.05, eps)
        gap = position_smoothing_gap(k)
        bound = math.pi * ((r + 2 * eps) ** 2 - (r - 2 * eps) ** 2) if d == 2 else None
        rows.append(dict(eps=eps, gap=gap, bound=bound))
    return rows


# -- chaos rate ---------------------------------------------------------------

CHAOS_L = 2.0


def chaos_setup(n_ladder=(64, 128, 256, 512, 1024), replicas=32, horizon=1.0, proxy_size=8192, sigma=0.1,
                dt=0.01, seed=0, q=4.0) -> ChaosExperiment:
    law = ProductLaw(CosineProfile(CHAOS_L, 0.5), BetaBump(0.0, 0.8))
    kernel = MollifiedKernel(FixedBall(0.5, 1), 0.05, 0.05)
    params = SimParams(sigma, dt, horizon, seed, CHAOS_L)
    return ChaosExperiment(tuple(n_ladder), params, DiffusionTruncation(1.0), kernel, law, replicas, horizon,
                           proxy_size, q, seed)


def run_chaos(exp: ChaosExperiment, threads=1):
    return chaos_rate_sweep(exp, threads=threads)


# -- boundary discrepancy -----------------------------------------------------


def cone_phase_sampler(rng, n, box=1.5, speed_max=2.0):
    x = rng.uniform(-box, box, (n, 2))
    v = uniform_disk_velocities(rng, (n,), 2, speed_max)
    return np.concatenate([x, v], axis=1)


def discrepancy_experiment(ladder=(32, 64, 128, 256, 512, 1024), reps=16, n_probes=8, u_points=64, seed=0,
                           reference_size=2**16):
    theta = ThetaFamily(VisionCone(1.0, math.pi / 4, 2))
    u_grid = np.linspace(0.0, 2.0, u_points)
    return discrepancy_ladder(cone_phase_sampler, theta, ladder, u_grid, n_probes, reps, reference_size, seed)


# -- kinetic conservation -----------------------------------------------------


def conservation_experiment(nx=256, nv=128, L=2.0, sigma=0.1, t_end=1.0, v_m=1.0):
    """Full-coverage run: r >= L/2 + eps so every pair interacts."""
    grid = PhaseGrid.for_speed_bound(L, nx, nv, v_m)
    law = ProductLaw(CosineProfile(L, 0.5), BetaBump(0.1, 0.8))
    f0 = PhaseDensity.from_law(law, grid)
    kernel = MollifiedKernel(FixedBall(L / 2 + 0.1, 1), 0.05, 0.05)
    res = solve_kinetic(f0, SimParams(sigma, 1e-3, t_end), DiffusionTruncation(v_m), kernel, t_end)
    mass = res.column("mass")
    mom = res.column("momentum")
    return dict(
        mass_drift_rate=float(np.max(np.abs(mass - mass[0])) / mass[0] / t_end),
        momentum_drift=float(np.max(np.abs(mom - mom[0]))),
        vsupport=float(res.column("vsupport").max()),
        vsupport_limit=v_m + 2 * grid.dv,
        result=res,
    )


# -- particle / PDE consistency -------------------------------------------------


@dataclass
class ConsistencyResult:
    w1: float
    rate_at_n: float
    cell_diameter: float
    rate_slope: float

    @property
    def threshold(self) -> float:
        return 3.0 * (self.rate_at_n + self.cell_diameter)

    @property
    def ok(self) -> bool:
        return self.w1 <= self.threshold


def particle_pde_consistency(n=4096, nx=256, nv=128, t_end=0.5, sigma=0.1, dt=1e-3, seed=0,
                             rate_ladder=(256, 512, 1024, 2048), rate_reps=4) -> ConsistencyResult:
    L = CHAOS_L
    v_m = 1.0
    law = ProductLaw(CosineProfile(L, 0.5), BetaBump(0.0, 0.8))
    kernel = MollifiedKernel(FixedBall(0.5, 1), 0.05, 0.05)
    trunc = DiffusionTruncation(v_m)
    grid = PhaseGrid.for_speed_bound(L, nx, nv, v_m)
    f0 = PhaseDensity.from_law(law, grid)
    res = solve_kinetic(f0, SimParams(sigma, dt, t_end), trunc, kernel, t_end, snapshot_times=[t_end])
    fT = res.snapshots[-1]
    rng = np.random.default_rng(seed)
    init = law.sample(n, rng)
    params = SimParams(sigma, dt, t_end, replica_seed(seed, 1), L)
    X, V, _, _ = simulate_batch(init.positions, init.velocities, params, trunc, kernel, [params.seed])
    metric = PhaseMetric(1, "sum", L)
    particles = EmpiricalMeasure(np.concatenate([X[0], V[0]], axis=1))
    grid_pts = EmpiricalMeasure(fT.sample(rng.random((n, 2))))
    w1 = w1_assignment(particles, grid_pts, metric)
    # sampling rate of the grid law itself: W1 between independent N-samples
    vals = np.empty((len(rate_ladder), rate_reps))
    for a, m in enumerate(rate_ladder):
        for r in range(rate_reps):
            pa = EmpiricalMeasure(fT.sample(rng.random((m, 2))))
            pb = EmpiricalMeasure(fT.sample(rng.random((m, 2))))
            vals[a, r] = w1_assignment(pa, pb, metric)
    slope, icpt, _ = fit_loglog(rate_ladder, vals.mean(axis=1))
    rate = float(math.exp(icpt) * n**slope)
    return ConsistencyResult(w1, rate, grid.cell_diameter, slope)


# -- stability envelope ---------------------------------------------------------

STAB_L = 4.0


def random_law(rng, L=STAB_L):
    x = BetaBump(rng.uniform(0, L), rng.uniform(0.3, 1.2), 4.0, period=L)
    v = BetaBump(rng.uniform(-0.3, 0.3), rng.uniform(0.3, 0.6))
    return ProductLaw(x, v)


def stability_suite(n_pairs=5, nx=128, nv=64, horizon=1.0, sigma=0.1, seed=0, n_checkpoints=5, n_samples=4096,
                    shift_cells=16, method="flow"):
    grid = PhaseGrid.for_speed_bound(STAB_L, nx, nv, 1.0)
    trunc = DiffusionTruncation(1.0)
    params = SimParams(sigma, 1e-3, horizon)
    rng = np.random.default_rng(seed)
    generic = MollifiedKernel(FixedBall(1.0, 1), 0.05, 0.05)
    reports = []
    for k in range(n_pairs):
        fa = PhaseDensity.from_law(random_law(rng), grid)
        fb = PhaseDensity.from_law(random_law(rng), grid)
        reports.append(stability_experiment(fa, fb, params, trunc, generic, horizon, n_checkpoints, n_samples,
                                            seed + k, method))
    full = MollifiedKernel(FixedBall(STAB_L / 2 + 0.1, 1), 0.05, 0.05)
    law = ProductLaw(BetaBump(1.25, 0.5, 4.0, period=STAB_L), BetaBump(0.0, 0.5))
    fa = PhaseDensity.from_law(law, grid)
    fb = fa.shifted(shift_cells)
    translated = stability_experiment(fa, fb, params, trunc, full, horizon, n_checkpoints, n_samples, seed, method)
    delta = shift_cells * grid.dx
    return reports, translated, delta
