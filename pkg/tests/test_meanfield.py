import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaosflock.errors import BoundBlowup, CflViolation
from chaosflock.geometry import FixedBall, MollifiedKernel
from chaosflock.meanfield import (BetaBump, CosineProfile, DensityForceField, PhaseDensity, PhaseGrid, ProductLaw,
                                  density_force, fit_envelope_rate, grid_force, grid_w1, nonlinear_sde_proxy,
                                  riccati_envelope, solve_kinetic, stability_experiment, vfp_step)
from chaosflock.sde import DiffusionTruncation, ParticleEnsemble, SimParams, field_forces
from chaosflock.transport import EmpiricalMeasure, PhaseMetric, fit_loglog, moment, w1_assignment

L = 2.0
TRUNC = DiffusionTruncation(1.0)
LOCAL = MollifiedKernel(FixedBall(0.5, 1), 0.05, 0.05)
FULL = MollifiedKernel(FixedBall(L / 2 + 0.1, 1), 0.05, 0.05)


def grid(n=64, m=32):
    return PhaseGrid.for_speed_bound(L, n, m, 1.0)


def bump_density(g, v_center=0.1, v_half=0.8, amp=0.5):
    return PhaseDensity.from_law(ProductLaw(CosineProfile(L, amp), BetaBump(v_center, v_half)), g)


# -- density and force ---------------------------------------------------------


def test_initial_density_has_unit_mass_and_support():
    f = bump_density(grid())
    assert f.mass() == pytest.approx(1.0, abs=1e-12)
    assert f.vsupport() <= 1.0 + 1e-12
    assert np.all(f.values >= 0)


def test_symmetric_source_gives_zero_force():
    g = grid(64, 64)
    f = bump_density(g, v_center=0.0, amp=0.0)
    F = density_force(DensityForceField(f, FULL), [[0.7]], [[0.0]])
    assert abs(F[0, 0]) < 1e-12


def test_point_mass_force():
    src = EmpiricalMeasure([[0.3, 0.6]])
    F = density_force(DensityForceField(src, LOCAL, L), [[0.25]], [[-0.2]])
    assert F[0, 0] == pytest.approx(0.6 - (-0.2), abs=1e-12)


def test_grid_force_matches_direct_quadrature():
    g = grid(64, 32)
    f = bump_density(g)
    Fg = grid_force(f, LOCAL)
    i, k = np.array([3, 17, 40]), np.array([5, 16, 27])
    direct = density_force(DensityForceField(f, LOCAL), g.x_centers[i][:, None], g.v_centers[k][:, None])[:, 0]
    assert np.allclose(Fg[i, k], direct, atol=1e-10)


def test_grid_force_against_monte_carlo():
    g = grid(128, 64)
    f = bump_density(g)
    rng = np.random.default_rng(0)
    pts = f.sample(rng.random((10**6, 2)))
    xq = np.array([[0.2], [1.1], [1.7]])
    vq = np.array([[0.0], [0.4], [-0.3]])
    quad = density_force(DensityForceField(f, LOCAL), xq, vq)[:, 0]
    # per-sample integrand for the standard error
    for q in range(3):
        dx = pts[:, :1] - xq[q]
        dx -= L * np.round(dx / L)
        w = LOCAL.weights(np.broadcast_to(vq[q], (len(pts), 1)), dx)
        vals = w * (pts[:, 1] - vq[q, 0])
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - quad[q]) <= 3 * se + 1e-4


def test_force_bounded_by_twice_vm():
    g = grid(64, 32)
    f = bump_density(g, v_center=0.0, v_half=1.0)
    assert np.max(np.abs(grid_force(f, LOCAL))[:, np.abs(g.v_centers) <= 1.0]) <= 2.0


# -- finite-volume steps ---------------------------------------------------------


def test_cfl_violation():
    f = bump_density(grid())
    with pytest.raises(CflViolation):
        vfp_step(f, DensityForceField(f, LOCAL), 0.1, TRUNC, 1.0)


def test_pure_advection_one_period():
    g = PhaseGrid(L, 128, 4, 1.25)
    vals = np.zeros((g.nx, g.nv))
    # a slab in one positive-velocity row
    k = 3
    vals[:, k] = (1 + 0.5 * np.cos(2 * np.pi * g.x_centers / L))
    vals /= vals.sum() * g.dx * g.dv
    f0 = PhaseDensity(g, vals)
    v = g.v_centers[k]
    dt = 0.5 * g.dx / g.v_box
    steps = int(round(L / v / dt))
    dt = L / v / steps
    f = f0
    zero = np.zeros_like(vals)
    for _ in range(steps):
        f = vfp_step(f, None, 0.0, TRUNC, dt, F=zero)
    assert abs(f.mass() - f0.mass()) <= 1e-12
    err = np.abs(f.values - f0.values).sum() * g.dx * g.dv
    # first-order upwind smears a smooth profile by O(dx) per period
    assert err <= 0.05
    # no phase drift: the first Fourier mode keeps its argument
    m0 = np.fft.rfft(f0.x_marginal())[1]
    m1 = np.fft.rfft(f.x_marginal())[1]
    assert abs(np.angle(m1 / m0)) <= 2 * np.pi / g.nx


def test_no_diffusion_beyond_vm():
    g = PhaseGrid(L, 32, 40, 1.25)
    vals = np.zeros((g.nx, g.nv))
    outer = np.abs(g.v_centers) - 0.5 * g.dv >= 1.0
    vals[:, outer] = 1.0
    vals /= vals.sum() * g.dx * g.dv
    f0 = PhaseDensity(g, vals)
    f = f0
    zero = np.zeros_like(vals)
    for _ in range(20):
        f = vfp_step(f, None, 0.5, TRUNC, 1e-3, F=zero)
        f = PhaseDensity(g, f.values)  # drop the x-transport drift of the check below
    assert abs(f.mass() - f0.mass()) <= 1e-12
    assert np.all(f.values[:, ~outer] == 0.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.3))
def test_step_positive_and_conservative(seed, sigma):
    g = grid(32, 32)
    rng = np.random.default_rng(seed)
    vals = rng.random((g.nx, g.nv))
    vals[:, np.abs(g.v_centers) > 1.0] = 0.0
    vals /= vals.sum() * g.dx * g.dv
    f = PhaseDensity(g, vals)
    F = grid_force(f, LOCAL)
    dt = 0.9 * min(g.dx / g.v_box, g.dv / max(np.abs(F).max(), 1e-12), g.dv**2 / (2 * max(sigma, 1e-12)))
    out = vfp_step(f, None, sigma, TRUNC, dt, F=F)
    assert np.all(out.values >= 0)
    assert abs(out.mass() - f.mass()) <= 1e-13


def _characteristic_solution(x, v, t, bump):
    # f_t + v f_x - (v f)_v = 0: v(t) = v0 e^{-t}, x(t) = x0 + v0 (1 - e^{-t})
    v0 = v * np.exp(t)
    x0 = x - v0 * (1 - np.exp(-t))
    return (1 + 0.5 * np.cos(2 * np.pi * x0 / L)) / L * bump.density(v0) * np.exp(t)


def _cell_average(g, t, bump):
    nodes, wts = np.polynomial.legendre.leggauss(4)
    out = 0.0
    for a, wa in zip(nodes, wts):
        for b, wb in zip(nodes, wts):
            X, V = np.meshgrid(g.x_centers + 0.5 * a * g.dx, g.v_centers + 0.5 * b * g.dv, indexing="ij")
            out = out + 0.25 * wa * wb * _characteristic_solution(X, V, t, bump)
    return out


def test_manufactured_linear_drift_order():
    bump = BetaBump(0.0, 0.6)
    T = 0.25
    errs = []
    sizes = (64, 128, 256, 512)
    for n in sizes:
        g = PhaseGrid.for_speed_bound(L, n, n, 1.0)
        F = -np.broadcast_to(g.v_centers, (n, n))
        f = PhaseDensity(g, _cell_average(g, 0.0, bump))
        dt = 0.4 * min(g.dx, g.dv) / g.v_box
        k = int(math.ceil(T / dt))
        for _ in range(k):
            f = vfp_step(f, None, 0.0, TRUNC, T / k, F=F)
        errs.append(np.abs(f.values - _cell_average(g, T, bump)).sum() * g.dx * g.dv)
    orders = -np.diff(np.log(errs)) / math.log(2)
    # first-order scheme: local orders climb towards 1 from below
    assert np.all(np.diff(orders) > 0)
    assert orders[-1] >= 0.95


# -- kinetic solver ---------------------------------------------------------------------


def test_solve_kinetic_ledger():
    g = grid(64, 32)
    res = solve_kinetic(bump_density(g), SimParams(0.1, 1e-3, 0.3), TRUNC, LOCAL)
    mass = res.column("mass")
    assert np.max(np.abs(mass - 1.0)) <= 1e-8
    assert res.column("vsupport").max() <= 1.0 + 2 * g.dv
    env = riccati_envelope(res.column("t"), res.column("linf")[0], res.envelope_rate)
    assert np.all(res.column("linf") <= 2 * env)


def test_momentum_conserved_under_full_coverage():
    g = grid(64, 32)
    for sigma in (0.0, 0.2):
        res = solve_kinetic(bump_density(g, v_center=0.15, v_half=0.7), SimParams(sigma, 1e-3, 0.5), TRUNC, FULL)
        mom = res.column("momentum")
        assert np.max(np.abs(mom - mom[0])) <= 1e-8 * 0.5


def test_solve_kinetic_preconditions():
    g = grid(32, 32)
    f = bump_density(g)
    with pytest.raises(ValueError):
        solve_kinetic(PhaseDensity(g, 2 * f.values), SimParams(), TRUNC, LOCAL, 0.1)
    wide = bump_density(g, v_center=0.0, v_half=1.2)
    with pytest.raises(ValueError):
        solve_kinetic(wide, SimParams(), TRUNC, LOCAL, 0.1)


def test_envelope_rate_and_blowup_shape():
    t = np.linspace(0, 1, 11)
    g = riccati_envelope(t, 2.0, 0.3)
    assert fit_envelope_rate(t, g) == pytest.approx(0.3, rel=1e-9)
    assert np.isinf(riccati_envelope([10.0], 2.0, 0.3)[0])
    assert fit_envelope_rate(t, np.full_like(t, 2.0)) == 0.0
    assert issubclass(BoundBlowup, Exception)


def test_moment_growth_tracked():
    g = grid(64, 32)
    q = 2.0
    res = solve_kinetic(bump_density(g), SimParams(0.1, 1e-3, 0.5), TRUNC, LOCAL, snapshot_times=np.linspace(0, 0.5, 6))
    m = np.array([moment(s, q, center=L / 2) for s in res.snapshots])
    t = np.array([s.time for s in res.snapshots])
    # smallest C with m(t) <= (m(0) + C) e^{Ct}
    lo, hi = 0.0, 10.0
    for _ in range(60):
        C = 0.5 * (lo + hi)
        ok = np.all(m <= (m[0] + C) * np.exp(C * t))
        lo, hi = (lo, C) if ok else (C, hi)
    assert hi < q * g.v_box


# -- particle proxy ----------------------------------------------------------------------


def test_proxy_single_atom_moves_straight():
    X0 = np.array([[0.4]])
    V0 = np.array([[1.0]])
    params = SimParams(0.3, 0.01, 0.5, 7, L)
    out = nonlinear_sde_proxy(ParticleEnsemble(X0, V0), params, TRUNC, LOCAL, record_times=[0.5])
    end = out[50]
    assert end.velocities[0, 0] == 1.0
    assert end.positions[0, 0] == pytest.approx(0.9, abs=1e-12)


def test_proxy_single_atom_has_no_drift():
    # own-law force vanishes, so the velocity path is the pure truncated noise path
    init = ParticleEnsemble(np.array([[0.4]]), np.array([[0.1]]))
    params = SimParams(0.2, 0.01, 0.3, 3, L)
    a = nonlinear_sde_proxy(init, params, TRUNC, LOCAL, record_every_step=True)
    b = nonlinear_sde_proxy(init, params, TRUNC, MollifiedKernel(FixedBall(0.1, 1), 0.05, 0.05),
                            record_every_step=True)
    assert all(np.array_equal(a[k].velocities, b[k].velocities) for k in a)


def test_proxy_deterministic():
    rng = np.random.default_rng(0)
    init = ProductLaw(CosineProfile(L), BetaBump(0.0, 0.8)).sample(64, rng)
    params = SimParams(0.1, 0.01, 0.2, 5, L)
    a = nonlinear_sde_proxy(init, params, TRUNC, LOCAL, refresh_every=2, record_times=[0.2])
    b = nonlinear_sde_proxy(init, params, TRUNC, LOCAL, refresh_every=2, record_times=[0.2])
    assert np.array_equal(a[20].positions, b[20].positions)
    assert np.array_equal(a[20].velocities, b[20].velocities)
    with pytest.raises(ValueError):
        nonlinear_sde_proxy(init, params, TRUNC, LOCAL, refresh_every=0)


def test_proxy_approaches_kinetic_solution():
    law = ProductLaw(CosineProfile(L, 0.5), BetaBump(0.0, 0.8))
    g = grid(128, 64)
    T = 0.2
    fT = solve_kinetic(PhaseDensity.from_law(law, g), SimParams(0.1, 1e-3, T), TRUNC, LOCAL, T,
                       snapshot_times=[T]).snapshots[-1]
    rng = np.random.default_rng(1)
    Ms = (64, 256, 1024)
    means = []
    for M in Ms:
        vals = []
        for r in range(4):
            init = law.sample(M, rng)
            out = nonlinear_sde_proxy(init, SimParams(0.1, 0.01, T, r, L), TRUNC, LOCAL, record_times=[T])
            cloud = out[20].phase_points()
            ref = EmpiricalMeasure(fT.sample(rng.random((M, 2))))
            vals.append(w1_assignment(EmpiricalMeasure(cloud), ref, PhaseMetric(1, "sum", L)))
        means.append(np.mean(vals))
    slope, _, _ = fit_loglog(Ms, means)
    assert -0.8 <= slope <= -0.3


# -- grid W1 and stability -----------------------------------------------------------------


def test_grid_w1_identity_and_translation():
    g = grid(64, 16)
    f = bump_density(g, amp=0.9)
    assert grid_w1(f, f) == pytest.approx(0.0, abs=1e-12)
    # pure x-translation of a 1D profile by s cells: W1 bounded by s dx, equal for a compact bump
    law = ProductLaw(BetaBump(0.8, 0.3, period=L), BetaBump(0.0, 0.5))
    h = PhaseDensity.from_law(law, g)
    assert grid_w1(h, h.shifted(5)) == pytest.approx(5 * g.dx, rel=1e-6)


def test_grid_w1_flow_matches_samples():
    g = grid(32, 16)
    a = bump_density(g, v_center=-0.2)
    b = bump_density(g, v_center=0.3, amp=-0.4)
    exact = grid_w1(a, b)
    sampled = grid_w1(a, b, n_samples=2048, method="samples")
    assert sampled == pytest.approx(exact, rel=0.1)
    with pytest.raises(ValueError):
        grid_w1(a, b, method="sinkhorn")


def test_stability_identical_pair():
    g = grid(32, 16)
    f = bump_density(g)
    rep = stability_experiment(f, f.copy(), SimParams(0.1, 1e-3, 0.2), TRUNC, LOCAL, 0.2, n_checkpoints=2)
    assert np.all(rep.w1 <= 1e-10)


def test_stability_translated_pair_keeps_distance():
    g = grid(64, 16)
    law = ProductLaw(BetaBump(0.8, 0.4, period=L), BetaBump(0.0, 0.5))
    fa = PhaseDensity.from_law(law, g)
    rep = stability_experiment(fa, fa.shifted(4), SimParams(0.1, 1e-3, 0.3), TRUNC, FULL, 0.3, n_checkpoints=3)
    assert np.all(np.abs(rep.w1 / (4 * g.dx) - 1) <= 0.05)
    assert rep.ok
    assert np.all(rep.constant_rate_envelope() >= rep.envelope - 1e-12)


def test_density_sampler_marginals():
    g = grid(64, 32)
    f = bump_density(g)
    pts = f.sample(np.random.default_rng(2).random((200_000, 2)))
    assert np.all((pts[:, 0] >= 0) & (pts[:, 0] < L))
    hist, _ = np.histogram(pts[:, 0], bins=g.x_faces)
    assert np.allclose(hist / len(pts), f.x_marginal() * g.dx, atol=3e-3)
    empirical = EmpiricalMeasure(pts)
    assert moment(empirical, 2, position_dims=1) == pytest.approx(moment(f, 2), rel=0.02)
    sub = pts[:5000]
    direct = field_forces(np.array([[0.5]]), np.array([[0.0]]), sub[:, :1], sub[:, 1:], LOCAL, L)
    via_field = density_force(DensityForceField(EmpiricalMeasure(sub), LOCAL, L), [[0.5]], [[0.0]])
    assert np.allclose(direct, via_field)
