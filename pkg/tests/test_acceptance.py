"""End-to-end acceptance criteria, each at its stated size and tolerance.

Every test prints one ``PASS``/``FAIL`` line (shown even under output capture)
before asserting.
"""

import math
import time

import numpy as np
import pytest

from chaosflock.experiments import (chaos_setup, conservation_experiment, discrepancy_experiment, mollifier_l1_rows,
                                    particle_pde_consistency, run_chaos, speed_bound_experiment, stability_suite)
from chaosflock.geometry import ThetaFamily, VisionCone, verify_h2
from chaosflock.transport import EmpiricalMeasure, w1_assignment, w1_brute_force, w1_sorted_1d


@pytest.fixture
def report(capsys):
    start = time.perf_counter()

    def emit(number, name, ok, detail, limit_s):
        elapsed = time.perf_counter() - start
        ok = bool(ok) and elapsed < limit_s
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number} ({name}): {detail}; "
                  f"runtime {elapsed:.1f}s (limit {limit_s:.0f}s)")
        return ok

    return emit


def test_1_speed_bound(report):
    res = speed_bound_experiment(n_seeds=64, n=32, d=2, sigma=0.1, v_m=1.0, dt=1e-3, steps=10_000)
    assert res.limit == pytest.approx(1.0 + 2 * 1.0 * 1e-3)
    top = float(res.max_speeds.max())
    assert report(1, "speed bound", res.ok, f"max speed {top:.6f} <= {res.limit:.6f} over 64 runs", 120)


def test_2_w1_oracle(report):
    rng = np.random.default_rng(2024)
    dev_perm = 0.0
    for _ in range(50):
        a = EmpiricalMeasure(rng.random((6, 2)))
        b = EmpiricalMeasure(rng.random((6, 2)))
        dev_perm = max(dev_perm, abs(w1_assignment(a, b) - w1_brute_force(a, b)))
    dev_sorted = 0.0
    for _ in range(200):
        m = int(rng.integers(1, 64))
        a = EmpiricalMeasure(rng.standard_normal((m, 1)))
        b = EmpiricalMeasure(rng.standard_normal((m, 1)) * 2 + 0.3)
        dev_sorted = max(dev_sorted, abs(w1_assignment(a, b) - w1_sorted_1d(a, b)))
    ok = dev_perm <= 1e-10 and dev_sorted <= 1e-10
    assert report(2, "W1 oracles", ok, f"brute-force dev {dev_perm:.2e}, sorted-1D dev {dev_sorted:.2e}", 10)


def test_3_mollifier_l1(report):
    rows = mollifier_l1_rows((0.02, 0.05, 0.1), r=1.0, d=2)
    ok = all(row["gap"] <= row["bound"] + 1e-3 for row in rows)
    detail = ", ".join(f"eps={r['eps']}: {r['gap']:.4f} <= {r['bound']:.4f}" for r in rows)
    assert report(3, "mollifier L1", ok, detail, 30)


def test_4_chaos_rate(report):
    exp = chaos_setup((64, 128, 256, 512, 1024), replicas=32, horizon=1.0, proxy_size=8192, q=4.0)
    res = run_chaos(exp)
    slope = res.fit_total.slope
    ok = -0.65 <= slope <= -0.35
    detail = (f"slope {slope:.3f} +- {res.fit_total.stderr:.3f} in [-0.65, -0.35]; "
              f"coupling-only {res.fit_coupling.slope:.3f}")
    assert report(4, "chaos rate", ok, detail, 1200)


def test_5_discrepancy_decay(report):
    fit = discrepancy_experiment(ladder=(32, 64, 128, 256, 512, 1024))
    ok = abs(fit.slope + 0.5) <= 0.15
    assert report(5, "boundary LLN", ok, f"exponent {fit.slope:.3f} +- {fit.stderr:.3f} in -0.5 +- 0.15", 300)


def test_6_kinetic_conservation(report):
    res = conservation_experiment(nx=256, nv=128, t_end=1.0)
    ok = (res["mass_drift_rate"] <= 1e-8 and res["momentum_drift"] <= 1e-8
          and res["vsupport"] <= res["vsupport_limit"])
    detail = (f"mass drift {res['mass_drift_rate']:.2e}/unit time, momentum drift {res['momentum_drift']:.2e}, "
              f"v-support {res['vsupport']:.4f} <= {res['vsupport_limit']:.4f}")
    assert report(6, "kinetic conservation", ok, detail, 300)


def test_7_particle_pde(report):
    res = particle_pde_consistency(n=4096, nx=256, nv=128, t_end=0.5)
    detail = (f"W1 {res.w1:.4f} <= 3 x ({res.rate_at_n:.4f} + {res.cell_diameter:.4f}) = {res.threshold:.4f}; "
              f"fitted rate slope {res.rate_slope:.3f}")
    assert report(7, "particle/PDE consistency", res.ok, detail, 600)


def test_8_stability_envelope(report):
    reports, translated, delta = stability_suite(n_pairs=5)
    generic_ok = all(r.ok for r in reports)
    under_rate = [bool(np.all(r.w1 <= r.constant_rate_envelope() * (1 + 1e-12))) for r in reports]
    ratio = translated.w1 / translated.w1[0]
    const_ok = bool(np.all(np.abs(ratio - 1) <= 0.05))
    detail = (f"{sum(r.ok for r in reports)}/5 pairs under W1(0)exp(int|f|), "
              f"{sum(under_rate)}/5 under "
              f"W1(0)exp(C_fit t); translated W1/W1(0) in [{ratio.min():.5f}, {ratio.max():.5f}], "
              f"W1(0)/delta = {translated.w1[0] / delta:.5f}")
    assert report(8, "stability envelope", generic_ok and all(under_rate) and const_ok, detail, 600)


def test_9_h2(report):
    cone = VisionCone(1.0, math.pi / 4, 2)
    full = verify_h2(ThetaFamily(cone), 100_000, seed=0)
    ablated = verify_h2(ThetaFamily(cone, include_segment=False), 100_000, seed=0)
    ok = full.ok and len(ablated.violations) >= 1
    witness = ablated.violations[0] if ablated.violations else None
    detail = (f"full family {len(full.violations)} violations (constants iii {full.required_constant_iii:.3f}, "
              f"iv {full.required_constant_iv:.3f} vs {full.constant:.3f}); ablated family "
              f"{len(ablated.violations)} violations, first witness {witness}")
    assert report(9, "H2 verification", ok, detail, 120)
