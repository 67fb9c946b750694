"""Propagation-of-chaos experiments: synchronous coupling, rate fits and LLN checks."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InsufficientReplicas
from .geometry import ThetaFamily
from .meanfield import ProductLaw, nonlinear_sde_proxy
from .rng import replica_seed
from .sde import (DiffusionTruncation, ParticleEnsemble, SimParams, brownian_increments, coupled_pair_step,
                  field_forces, minimal_image)
from .transport import EmpiricalMeasure, PhaseMetric, RateModel, fg_rate, fit_loglog, w1_assignment

MIN_REPLICAS = 8


@dataclass
class ChaosExperiment:
    n_ladder: tuple
    params: SimParams
    trunc: DiffusionTruncation
    kernel: object
    law: ProductLaw
    replicas: int = 32
    horizon: float = 1.0
    proxy_size: int = 8192
    q: float = 4.0
    seed: int = 0

    def __post_init__(self):
        ladder = [int(n) for n in self.n_ladder]
        if not ladder or any(b <= a for a, b in zip(ladder, ladder[1:])) or ladder[0] < 1:
            raise ValueError("n_ladder must be a strictly increasing list of positive sizes")
        self.n_ladder = tuple(ladder)

    @property
    def d(self) -> int:
        return self.kernel.region.d

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.params.dt))

    @property
    def metric(self) -> PhaseMetric:
        return PhaseMetric(self.d, "sum", self.params.box_length)


@dataclass
class RateFit:
    slope: float
    intercept: float
    stderr: float
    ns: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray


def fit_rate(ns, samples) -> RateFit:
    """Log-log fit of per-N replica means; samples is (len(ns), R)."""
    samples = np.asarray(samples, dtype=float)
    means = samples.mean(axis=1)
    se = samples.std(axis=1, ddof=1) / np.sqrt(samples.shape[1]) if samples.shape[1] > 1 else np.zeros(len(ns))
    slope, icpt, s_err = fit_loglog(ns, means)
    return RateFit(slope, icpt, s_err, np.asarray(ns), means, se)


def build_proxy(exp: ChaosExperiment) -> dict:
    """Per-step states of the large-M mean-field proxy."""
    rng = np.random.default_rng(replica_seed(exp.seed, 2**31))
    init = exp.law.sample(exp.proxy_size, rng)
    p = SimParams(exp.params.sigma, exp.params.dt, exp.horizon, replica_seed(exp.seed, 2**31 + 1),
                  exp.params.box_length)
    return nonlinear_sde_proxy(init, p, exp.trunc, exp.kernel, refresh_every=1, record_every_step=True)


def _phase_gap(sys: ParticleEnsemble, mf: ParticleEnsemble, box_length):
    dx = minimal_image(sys.positions - mf.positions, box_length)
    return float(np.mean(np.linalg.norm(dx, axis=1) + np.linalg.norm(sys.velocities - mf.velocities, axis=1)))


def coupled_run(N: int, t: float, seed: int, exp: ChaosExperiment, proxy: dict | None = None,
                mean_field_force: Callable | None = None):
    """Run the synchronous coupling to time t; returns (error, system, mean-field copies)."""
    rng = np.random.default_rng(seed)
    sys = exp.law.sample(N, rng)
    if exp.params.box_length is not None:
        sys = ParticleEnsemble(np.mod(sys.positions, exp.params.box_length), sys.velocities)
    mf = sys.copy()
    steps = int(round(t / exp.params.dt))
    ids = np.arange(N)
    for n in range(steps):
        if mean_field_force is not None:
            frozen = mean_field_force
        else:
            src = proxy[n]

            def frozen(y, w, src=src):
                return field_forces(y, w, src.positions, src.velocities, exp.kernel, exp.params.box_length)

        dB = brownian_increments([seed], n, ids, exp.d, exp.params.dt)[0]
        sys, mf = coupled_pair_step(sys, mf, exp.params, exp.trunc, exp.kernel, frozen, dB)
    return _phase_gap(sys, mf, exp.params.box_length), sys, mf


def coupled_error(N: int, t: float, seed: int, exp: ChaosExperiment, proxy: dict | None = None,
                  mean_field_force: Callable | None = None) -> float:
    """(1/N) sum (|X_i - Y_i| + |V_i - W_i|) at time t under shared noise."""
    if t == 0:
        return 0.0
    return coupled_run(N, t, seed, exp, proxy, mean_field_force)[0]


def sampling_term(mf: ParticleEnsemble, target: ParticleEnsemble, seed: int, metric: PhaseMetric) -> float:
    """W1 between the mean-field copies and an independent equal-size subsample of the target."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(target.n, size=mf.n, replace=False)
    sub = EmpiricalMeasure(np.concatenate([target.positions[idx], target.velocities[idx]], axis=1))
    return w1_assignment(EmpiricalMeasure(mf.phase_points()), sub, metric)


@dataclass
class SweepResult:
    rows: list
    fit_total: RateFit
    fit_coupling: RateFit
    predicted_slopes: dict
    fg_predictions: dict
    proxy_self_distance: float

    def summary(self) -> dict:
        return dict(
            slope=self.fit_total.slope,
            stderr=self.fit_total.stderr,
            coupling_slope=self.fit_coupling.slope,
            coupling_stderr=self.fit_coupling.stderr,
            predicted=self.predicted_slopes,
            proxy_self_distance=self.proxy_self_distance,
        )


def _local_slope(model, ns):
    ns = np.asarray(ns, dtype=float)
    return float(np.polyfit(np.log(ns), np.log(fg_rate(model, ns)), 1)[0])


def chaos_rate_sweep(exp: ChaosExperiment, threads: int = 1, proxy: dict | None = None) -> SweepResult:
    if exp.replicas < MIN_REPLICAS:
        raise InsufficientReplicas(f"need at least {MIN_REPLICAS} replicas, got {exp.replicas}")
    proxy = build_proxy(exp) if proxy is None else proxy
    target = proxy[exp.n_steps]
    metric = exp.metric
    coup = np.zeros((len(exp.n_ladder), exp.replicas))
    samp = np.zeros_like(coup)

    def job(args):
        a, r = args
        N = exp.n_ladder[a]
        s = replica_seed(exp.seed, 1000 * N + r)
        err, _, mf = coupled_run(N, exp.horizon, s, exp, proxy)
        return a, r, err, sampling_term(mf, target, s + 1, metric)

    jobs = [(a, r) for a in range(len(exp.n_ladder)) for r in range(exp.replicas)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, jobs))
    else:
        results = [job(j) for j in jobs]
    for a, r, e, w in results:
        coup[a, r] = e
        samp[a, r] = w
    fit_total = fit_rate(exp.n_ladder, coup + samp)
    fit_coup = fit_rate(exp.n_ladder, coup)
    models = {f"n={n}": RateModel(1.0, n, exp.q) for n in (exp.d, 2 * exp.d)}
    predicted = {k: _local_slope(m, exp.n_ladder) for k, m in models.items()}
    preds = {k: [float(fg_rate(m, N)) for N in exp.n_ladder] for k, m in models.items()}
    # two disjoint halves of the proxy give its own sampling error bar
    half = target.n // 2
    pts = target.phase_points()
    n_self = min(half, 1024)
    self_dist = w1_assignment(EmpiricalMeasure(pts[:n_self]), EmpiricalMeasure(pts[half:half + n_self]), metric)
    rows = []
    for a, N in enumerate(exp.n_ladder):
        rows.append(dict(
            N=N, t=exp.horizon,
            mean_coupling_error=float(fit_coup.means[a]), stderr=float(fit_coup.stderrs[a]),
            w1_to_target=float(samp[a].mean()), w1_stderr=float(samp[a].std(ddof=1) / np.sqrt(exp.replicas)),
            fg_prediction=preds[f"n={2 * exp.d}"][a],
        ))
    return SweepResult(rows, fit_total, fit_coup, predicted, preds, self_dist)


# ---------------------------------------------------------------------------
# discrepancy estimates


def boundary_discrepancy_sup(f_samples: EmpiricalMeasure, reference: EmpiricalMeasure, theta: ThetaFamily,
                             u_grid, probes) -> tuple[float, np.ndarray]:
    """sup_u |int 1{dist(y - Y, Theta(W)) <= u} (mu_N - ref)(dy)|, averaged over probes (Y, W).

    Only the first d coordinates of the samples are used (positions).
    Returns (mean over probes, per-probe sups).
    """
    u_grid = np.asarray(u_grid, dtype=float)
    if u_grid.size == 0 or np.any(np.diff(u_grid) <= 0):
        raise ValueError("u_grid must be nonempty and strictly increasing")
    d = theta.region.d
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    ys = f_samples.points[:, :d]
    yr = reference.points[:, :d]
    sups = np.empty(probes.shape[0])
    for p, (Y, W) in enumerate(zip(probes[:, :d], probes[:, d:])):
        cdfs = []
        for pts, wts in ((ys, f_samples.weights), (yr, reference.weights)):
            dist = theta.distance(np.broadcast_to(W, pts.shape), pts - Y)
            order = np.argsort(dist)
            cw = np.concatenate([[0.0], np.cumsum(wts[order])])
            cdfs.append(cw[np.searchsorted(dist[order], u_grid, side="right")])
        sups[p] = np.max(np.abs(cdfs[0] - cdfs[1]))
    return float(sups.mean()), sups


def discrepancy_ladder(sampler: Callable, theta: ThetaFamily, ladder, u_grid, n_probes: int = 8, reps: int = 16,
                       reference_size: int = 2**16, seed: int = 0) -> RateFit:
    """Fit the decay of boundary_discrepancy_sup over sample sizes."""
    rng = np.random.default_rng(seed)
    ref = EmpiricalMeasure(sampler(rng, reference_size))
    probes = sampler(rng, n_probes)
    vals = np.empty((len(ladder), reps))
    for a, N in enumerate(ladder):
        for r in range(reps):
            vals[a, r] = boundary_discrepancy_sup(EmpiricalMeasure(sampler(rng, N)), ref, theta, u_grid, probes)[0]
    return fit_rate(ladder, vals)


def kernel_lln_check(h: Callable, sampler: Callable, ladder, reps: int = 32, reference_size: int = 2**17,
                     seed: int = 0) -> RateFit:
    """Decay of E|int h(Z, .)(rho_N - rho)| with a fresh probe Z per replica.

    h(probe, samples) returns one value (or vector) per sample row; sampler(rng, n)
    returns n i.i.d. rows.  The reference integral uses ``reference_size`` samples.
    """
    rng = np.random.default_rng(seed)
    ref = sampler(rng, reference_size)
    vals = np.empty((len(ladder), reps))
    for a, N in enumerate(ladder):
        for r in range(reps):
            probe = sampler(rng, 1)[0]
            hn = np.asarray(h(probe, sampler(rng, N)), dtype=float)
            hr = np.asarray(h(probe, ref), dtype=float)
            diff = hn.mean(axis=0) - hr.mean(axis=0)
            vals[a, r] = float(np.linalg.norm(np.atleast_1d(diff)))
    if np.all(vals == 0):
        return RateFit(0.0, -np.inf, 0.0, np.asarray(ladder), vals.mean(axis=1), np.zeros(len(ladder)))
    return fit_rate(ladder, vals)
