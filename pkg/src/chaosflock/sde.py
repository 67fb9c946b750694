"""Euler-Maruyama integration of the regularized particle system.

    dX_i = V_i dt
    dV_i = F_i dt + sqrt(2 sigma) R(|V_i|) dB_i,
    F_i  = (1/N) sum_j 1^{eta,eps}_{K(V_i)}(X_j - X_i) (V_j - V_i)

Arrays are batched over replicas as (R, N, d).  Brownian increments come from
the counter-based generator keyed on (replica seed, step, particle id).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import rng as crng
from ._pairsum import alignment_1d, radial_batch_forces
from .errors import NonFiniteState, SpeedBoundBreach
from .geometry import FixedBall, MollifiedKernel, ThetaFamily

# replicas are always integrated in fixed-size chunks so that results do not
# depend on how chunks are spread over threads
REPLICA_CHUNK = 64


@dataclass(frozen=True)
class DiffusionTruncation:
    """R(s) = (1 - (s/V_m)^2)^3 for s < V_m, zero beyond; C^2 across s = V_m."""

    v_m: float = 1.0

    def __post_init__(self):
        if self.v_m <= 0:
            raise ValueError("v_m must be positive")

    def profile(self, s):
        u = np.asarray(s, dtype=float) / self.v_m
        return np.where(u < 1.0, (1.0 - np.minimum(u * u, 1.0)) ** 3, 0.0)

    @property
    def lipschitz(self) -> float:
        # max over u of 6 u (1 - u^2)^2, attained at u = 1/sqrt(5)
        return 6.0 * (1.0 / math.sqrt(5.0)) * (16.0 / 25.0) / self.v_m

    @property
    def max_profile(self) -> float:
        return 1.0


@dataclass(frozen=True)
class SimParams:
    sigma: float = 0.1
    dt: float = 1e-3
    t_end: float = 1.0
    seed: int = 0
    box_length: float | None = None
    c_slack: float | None = None
    tau_boundary: float | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.box_length is not None and self.box_length <= 0:
            raise ValueError("box_length must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def speed_limit(self, trunc: DiffusionTruncation) -> float:
        c = 2.0 * trunc.v_m if self.c_slack is None else self.c_slack
        return trunc.v_m + c * self.dt


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have the same shape")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def speeds(self):
        return np.linalg.norm(self.velocities, axis=1)

    def phase_points(self):
        return np.concatenate([self.positions, self.velocities], axis=1)

    def copy(self) -> ParticleEnsemble:
        return ParticleEnsemble(self.positions.copy(), self.velocities.copy(), self.time)


@dataclass
class StepRecord:
    """Pair weights for pairs within reach of K, and pairs close to Theta(V_i)."""

    pairs: np.ndarray  # (P, 2) int (i, j)
    pair_weights: np.ndarray  # (P,)
    boundary_events: np.ndarray  # (E, 2) int, subset of pairs
    event_distances: np.ndarray  # (E,)


@dataclass
class TrajectorySummary:
    final: ParticleEnsemble
    max_speed_seen: float
    snapshots: dict = field(default_factory=dict)
    events: list = field(default_factory=list)  # (t, i, j, dist)
    speed_history: np.ndarray | None = None


def minimal_image(dx, box_length):
    if box_length is None:
        return dx
    return dx - box_length * np.round(dx / box_length)


def wrap(x, box_length):
    if box_length is None:
        return x
    return np.mod(x, box_length)


def _uses_window_path(kernel, d):
    return isinstance(kernel, MollifiedKernel) and isinstance(kernel.region, FixedBall) and d == 1


def field_forces(xq, vq, xs, vs, kernel, box_length=None, chunk: int = 256):
    """Alignment rates at query states (n, d) from a uniform source cloud (m, d)."""
    xq = np.asarray(xq, dtype=float)
    vq = np.asarray(vq, dtype=float)
    xs = np.asarray(xs, dtype=float)
    vs = np.asarray(vs, dtype=float)
    n, d = xq.shape
    m = xs.shape[0]
    if _uses_window_path(kernel, d):
        out = alignment_1d(
            wrap(xq[:, 0], box_length), vq[:, 0], wrap(xs[:, 0], box_length), vs[:, 0],
            kernel.region.r, kernel.eps, box_length,
        )
        return out[:, None]
    out = np.empty((n, d))
    step = max(1, min(chunk, (4_000_000 // max(m * d, 1))))
    for s in range(0, n, step):
        sl = slice(s, s + step)
        dx = minimal_image(xs[None, :, :] - xq[sl, None, :], box_length)
        w = kernel.weights(vq[sl, None, :], dx)
        out[sl] = (w @ vs - w.sum(axis=1)[:, None] * vq[sl]) / m
    return out


def force(ensemble: ParticleEnsemble, kernel, i: int, box_length=None):
    """Alignment rate on particle i; the j = i term vanishes."""
    if not 0 <= i < ensemble.n:
        raise IndexError("particle index out of range")
    x, v = ensemble.positions, ensemble.velocities
    dx = minimal_image(x - x[i], box_length)
    w = kernel.weights(np.broadcast_to(v[i], dx.shape), dx)
    return (w[:, None] * (v - v[i])).sum(axis=0) / ensemble.n


def batch_forces(X, V, kernel, box_length=None):
    """Self-consistent alignment rates for replica batches (R, N, d)."""
    R, N, d = X.shape
    if _uses_window_path(kernel, d):
        out = np.empty_like(V)
        for r in range(R):
            out[r] = field_forces(X[r], V[r], X[r], V[r], kernel, box_length)
        return out
    if isinstance(kernel, MollifiedKernel) and isinstance(kernel.region, FixedBall):
        prof = kernel._profile
        lo, hi = prof.domain
        return radial_batch_forces(X, V, prof.coef, lo, hi, box_length)
    if N * N * R * d > 8_000_000:
        return np.stack([field_forces(X[r], V[r], X[r], V[r], kernel, box_length) for r in range(R)])
    dx = minimal_image(X[:, None, :, :] - X[:, :, None, :], box_length)
    w = kernel.weights(V[:, :, None, :], dx)
    return (np.matmul(w, V) - w.sum(axis=-1)[..., None] * V) / N


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteState("non-finite state encountered; reduce dt")


def _increment(V, F, noise, params, trunc):
    amp = math.sqrt(2.0 * params.sigma) * trunc.profile(np.linalg.norm(V, axis=-1))
    return V + F * params.dt + amp[..., None] * noise


def step_record(ensemble, kernel, tau=None):
    """Recorded pair weights and boundary events for one configuration."""
    x, v = ensemble.positions, ensemble.velocities
    n = ensemble.n
    tau = 2.0 * kernel.eps if tau is None else tau
    theta = ThetaFamily(kernel.region)
    dx = x[None, :, :] - x[:, None, :]
    reach = np.linalg.norm(dx, axis=-1) <= kernel.region.master_radius + max(tau, kernel.eps)
    np.fill_diagonal(reach, False)
    i, j = np.nonzero(reach)
    w = kernel.weights(v[i], dx[i, j]) if i.size else np.zeros(0)
    dist = theta.distance(v[i], dx[i, j]) if i.size else np.zeros(0)
    ev = dist <= tau
    return StepRecord(np.stack([i, j], axis=1), np.asarray(w, dtype=float),
                      np.stack([i[ev], j[ev]], axis=1), dist[ev])


def em_step(ensemble: ParticleEnsemble, params: SimParams, trunc: DiffusionTruncation, kernel, noise,
            record: bool = True):
    """One explicit step.  ``noise`` holds N(0, dt) increments of shape (N, d)."""
    x, v = ensemble.positions, ensemble.velocities
    noise = np.asarray(noise, dtype=float).reshape(x.shape)
    box = params.box_length
    rec = step_record(ensemble, kernel, params.tau_boundary) if record else None
    F = batch_forces(x[None], v[None], kernel, box)[0]
    x_new = wrap(x + v * params.dt, box)
    v_new = _increment(v, F, noise, params, trunc)
    _check_finite(x_new, v_new)
    return ParticleEnsemble(x_new, v_new, ensemble.time + params.dt), rec


def brownian_increments(seeds, step, particle_ids, d, dt):
    return crng.fast_normals(seeds, step, particle_ids, d) * math.sqrt(dt)


def _run_chunk(X, V, seeds, ids, params, trunc, kernel, snap_steps, check_speed):
    limit = params.speed_limit(trunc)
    R, N, d = X.shape
    max_speed = np.linalg.norm(V, axis=-1).max(axis=-1)
    snaps = {}
    if 0 in snap_steps:
        snaps[0] = (X.copy(), V.copy())
    for n in range(params.n_steps):
        F = batch_forces(X, V, kernel, params.box_length)
        dB = brownian_increments(seeds, n, ids, d, params.dt)
        X = wrap(X + V * params.dt, params.box_length)
        V = _increment(V, F, dB, params, trunc)
        _check_finite(X, V)
        sp = np.linalg.norm(V, axis=-1).max(axis=-1)
        max_speed = np.maximum(max_speed, sp)
        if check_speed and np.any(sp > limit):
            r = int(np.argmax(sp))
            raise SpeedBoundBreach(f"speed {sp[r]:.6g} exceeds {limit:.6g} at step {n + 1} (replica {r})")
        if n + 1 in snap_steps:
            snaps[n + 1] = (X.copy(), V.copy())
    return X, V, max_speed, snaps


def simulate_batch(X0, V0, params: SimParams, trunc: DiffusionTruncation, kernel, seeds,
                   record_times=(), threads: int = 1, particle_ids=None, check_speed: bool = True):
    """Integrate R independent replicas; returns (X, V, max_speed (R,), snapshots).

    Snapshots map step index to (X, V) batches.  Output is identical for any
    thread count.
    """
    X0 = np.asarray(X0, dtype=float)
    V0 = np.asarray(V0, dtype=float)
    if X0.ndim == 2:
        X0, V0 = X0[None], V0[None]
    R, N, d = X0.shape
    seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1)
    if seeds.size != R:
        raise ValueError("one seed per replica required")
    if np.any(np.linalg.norm(V0, axis=-1) > trunc.v_m * (1 + 1e-12)):
        raise ValueError("initial speeds must not exceed v_m")
    ids = np.arange(N) if particle_ids is None else np.asarray(particle_ids)
    snap_steps = {int(round(t / params.dt)) for t in record_times}
    X0 = wrap(X0, params.box_length)
    chunks = [slice(s, min(s + REPLICA_CHUNK, R)) for s in range(0, R, REPLICA_CHUNK)]

    def work(sl):
        return _run_chunk(X0[sl].copy(), V0[sl].copy(), seeds[sl], ids, params, trunc, kernel, snap_steps, check_speed)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(sl) for sl in chunks]
    X = np.concatenate([r[0] for r in results])
    V = np.concatenate([r[1] for r in results])
    ms = np.concatenate([r[2] for r in results])
    snaps = {k: (np.concatenate([r[3][k][0] for r in results]), np.concatenate([r[3][k][1] for r in results]))
             for k in sorted(snap_steps) if all(k in r[3] for r in results)}
    return X, V, ms, snaps


def simulate(initial: ParticleEnsemble, params: SimParams, trunc: DiffusionTruncation, kernel,
             record_times=(), record_events: bool = False, particle_ids=None) -> TrajectorySummary:
    """Single-run integration with optional snapshots and boundary-event log."""
    if np.any(initial.speeds() > trunc.v_m * (1 + 1e-12)):
        raise ValueError("initial speeds must not exceed v_m")
    if not record_events:
        X, V, ms, snaps = simulate_batch(initial.positions, initial.velocities, params, trunc, kernel,
                                         [params.seed], record_times, particle_ids=particle_ids)
        snapshots = {
            round(k * params.dt, 12): ParticleEnsemble(s[0][0], s[1][0], k * params.dt) for k, s in snaps.items()
        }
        final = ParticleEnsemble(X[0], V[0], initial.time + params.n_steps * params.dt)
        return TrajectorySummary(final, float(ms[0]), snapshots)
    ids = np.arange(initial.n) if particle_ids is None else np.asarray(particle_ids)
    limit = params.speed_limit(trunc)
    ens = ParticleEnsemble(wrap(initial.positions, params.box_length), initial.velocities, initial.time)
    snap_steps = {int(round(t / params.dt)) for t in record_times}
    snapshots = {}
    if 0 in snap_steps:
        snapshots[0.0] = ens.copy()
    events = []
    max_speed = float(ens.speeds().max())
    for n in range(params.n_steps):
        dB = brownian_increments([params.seed], n, ids, ens.d, params.dt)[0]
        t = ens.time
        ens, rec = em_step(ens, params, trunc, kernel, dB, record=True)
        for (i, j), dist in zip(rec.boundary_events, rec.event_distances):
            events.append((t, int(i), int(j), float(dist)))
        sp = float(ens.speeds().max())
        max_speed = max(max_speed, sp)
        if sp > limit:
            raise SpeedBoundBreach(f"speed {sp:.6g} exceeds {limit:.6g} at step {n + 1}")
        if n + 1 in snap_steps:
            snapshots[round((n + 1) * params.dt, 12)] = ens.copy()
    return TrajectorySummary(ens, max_speed, snapshots, events)


def coupled_pair_step(sys: ParticleEnsemble, mf: ParticleEnsemble, params: SimParams, trunc: DiffusionTruncation,
                      kernel, frozen_density_force: Callable, noise):
    """Advance the interacting system and the mean-field copies with the same increments."""
    if sys.n != mf.n:
        raise ValueError("coupled ensembles must have equal size")
    noise = np.asarray(noise, dtype=float).reshape(sys.positions.shape)
    box = params.box_length
    F_sys = batch_forces(sys.positions[None], sys.velocities[None], kernel, box)[0]
    F_mf = np.asarray(frozen_density_force(mf.positions, mf.velocities), dtype=float).reshape(mf.positions.shape)
    out = []
    for ens, F in ((sys, F_sys), (mf, F_mf)):
        x_new = wrap(ens.positions + ens.velocities * params.dt, box)
        v_new = _increment(ens.velocities, F, noise, params, trunc)
        _check_finite(x_new, v_new)
        out.append(ParticleEnsemble(x_new, v_new, ens.time + params.dt))
    return out[0], out[1]


def with_seed(params: SimParams, seed: int) -> SimParams:
    return replace(params, seed=int(seed))
