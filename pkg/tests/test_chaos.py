import math

import numpy as np
import pytest

from chaosflock.chaos import (boundary_discrepancy_sup, build_proxy, chaos_rate_sweep, coupled_error,
                              discrepancy_ladder, fit_rate, kernel_lln_check)
from chaosflock.errors import InsufficientReplicas
from chaosflock.experiments import chaos_setup, cone_phase_sampler
from chaosflock.geometry import ThetaFamily, VisionCone, indicator
from chaosflock.sde import batch_forces
from chaosflock.transport import EmpiricalMeasure


def small(sigma=0.1, replicas=8, ladder=(32, 64, 128, 256), horizon=0.5, proxy_size=2048):
    return chaos_setup(ladder, replicas=replicas, horizon=horizon, proxy_size=proxy_size, sigma=sigma, dt=0.01)


def self_force(exp):
    box = exp.params.box_length

    def force(y, w):
        return batch_forces(y[None], w[None], exp.kernel, box)[0]

    return force


def test_experiment_validation():
    with pytest.raises(ValueError):
        small(ladder=(64, 32))
    with pytest.raises(InsufficientReplicas):
        chaos_rate_sweep(small(replicas=4), proxy={})


def test_coupled_error_zero_at_start():
    exp = small()
    for N in (1, 17, 64):
        for seed in (0, 5):
            assert coupled_error(N, 0.0, seed, exp) == 0.0


def test_identical_dynamics_give_zero_error():
    # sigma = 0 and the mean-field copies feel the force of their own ensemble
    exp = small(sigma=0.0)
    for t in (0.1, 0.5):
        assert coupled_error(64, t, 3, exp, mean_field_force=self_force(exp)) == 0.0


def test_coupling_error_grows_in_time():
    exp = small(sigma=0.0, horizon=0.6, proxy_size=1024)
    proxy = build_proxy(exp)
    times = (0.2, 0.4, 0.6)
    errs = np.array([[coupled_error(64, t, s, exp, proxy) for s in range(8)] for t in times])
    m = errs.mean(axis=1)
    se = errs.std(axis=1, ddof=1) / math.sqrt(errs.shape[1])
    assert np.all(np.diff(m) >= -2 * np.hypot(se[1:], se[:-1]))


def test_small_sweep_shapes_and_monotonicity():
    res = chaos_rate_sweep(small())
    fit = res.fit_coupling
    assert fit.stderr >= 0 and np.all(fit.means >= 0) and np.all(fit.stderrs >= 0)
    # per-N means nonincreasing within two standard errors
    assert np.all(np.diff(fit.means) <= 2 * np.hypot(fit.stderrs[1:], fit.stderrs[:-1]))
    assert [r["N"] for r in res.rows] == [32, 64, 128, 256]
    assert set(res.rows[0]) >= {"N", "t", "mean_coupling_error", "stderr", "w1_to_target", "fg_prediction"}
    assert res.proxy_self_distance > 0
    s = res.summary()
    assert s["slope"] < 0 and s["coupling_slope"] < 0


def test_sweep_is_deterministic():
    exp = small(ladder=(16, 32), replicas=8, horizon=0.2, proxy_size=256)
    a = chaos_rate_sweep(exp)
    b = chaos_rate_sweep(exp, threads=2)
    assert a.rows == b.rows


def test_slope_insensitive_to_doubling_sigma():
    fits = [chaos_rate_sweep(small(sigma=s, replicas=16)).fit_coupling for s in (0.05, 0.1)]
    assert abs(fits[0].slope - fits[1].slope) <= max(f.stderr for f in fits)


def test_predicted_slopes_follow_rate_cases():
    res = chaos_rate_sweep(small(ladder=(16, 32), horizon=0.1, proxy_size=256))
    # phase dimension 2 sits on the log-corrected case, dimension 1 on the pure N^{-1/2} case
    assert res.predicted_slopes["n=2"] > -0.5
    assert res.predicted_slopes["n=1"] <= -0.5


def test_fit_rate_exact_power():
    ns = np.array([10, 100, 1000])
    fit = fit_rate(ns, np.repeat((2.0 * ns**-0.5)[:, None], 3, axis=1))
    assert fit.slope == pytest.approx(-0.5)
    assert np.all(fit.stderrs <= 1e-15)


# -- discrepancy and LLN --------------------------------------------------------------

THETA = ThetaFamily(VisionCone(1.0, math.pi / 4, 2))
U = np.linspace(0.0, 2.0, 64)


def test_discrepancy_rejects_bad_grid():
    pts = EmpiricalMeasure(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        boundary_discrepancy_sup(pts, pts, THETA, [0.5, 0.1], np.zeros((1, 4)))


def test_discrepancy_self_noise_floor():
    rng = np.random.default_rng(0)
    M = 4096
    ref = cone_phase_sampler(rng, M)
    probes = cone_phase_sampler(rng, 8)
    same, _ = boundary_discrepancy_sup(EmpiricalMeasure(ref), EmpiricalMeasure(ref), THETA, U, probes)
    assert same == 0.0
    resampled = EmpiricalMeasure(ref[rng.integers(0, M, M)])
    val, _ = boundary_discrepancy_sup(resampled, EmpiricalMeasure(ref), THETA, U, probes)
    # Dvoretzky-Kiefer-Wolfowitz at level 1e-3
    assert val <= math.sqrt(math.log(2 / 1e-3) / (2 * M))


def test_discrepancy_grid_refinement():
    coarse = discrepancy_ladder(cone_phase_sampler, THETA, (128,), np.linspace(0, 2, 64), reps=16,
                                reference_size=2**14, seed=1)
    fine = discrepancy_ladder(cone_phase_sampler, THETA, (128,), np.linspace(0, 2, 127), reps=16,
                              reference_size=2**14, seed=1)
    assert abs(fine.means[0] - coarse.means[0]) < coarse.stderrs[0]


def test_kernel_lln_zero_kernel():
    fit = kernel_lln_check(lambda z, y: np.zeros(len(y)), lambda rng, n: rng.random((n, 1)), (8, 16), reps=4)
    assert np.all(fit.means == 0)


def test_kernel_lln_tanh_rate():
    def h(z, y):
        return np.tanh(y[:, 0] - z[0])

    fit = kernel_lln_check(h, lambda rng, n: rng.standard_normal((n, 1)), (32, 64, 128, 256, 512, 1024), reps=64)
    assert abs(fit.slope + 0.5) <= 0.15


def test_kernel_lln_alignment_kernel_rate():
    cone = VisionCone(1.0, math.pi / 4, 2)

    def h(z, s):
        # -1_{K(W)}(y - Y) w for the probe (Y, W) against samples (y, w)
        inside = indicator(cone, np.broadcast_to(z[2:], (len(s), 2)), s[:, :2] - z[:2])
        return -inside[:, None] * s[:, 2:]

    fit = kernel_lln_check(h, cone_phase_sampler, (32, 64, 128, 256, 512, 1024), reps=64, reference_size=2**16)
    assert abs(fit.slope + 0.5) <= 0.15
