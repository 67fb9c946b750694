import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linprog

from chaosflock.errors import CaseExcluded, DimensionMismatch, SizeLimitExceeded
from chaosflock.transport import (EmpiricalMeasure, PhaseMetric, RateModel, fg_bound, fg_rate, fit_loglog, moment,
                                  split_atoms, w1_assignment, w1_brute_force, w1_gamma, w1_gamma_gap, w1_sorted_1d)

coords = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def cloud(m, k):
    return arrays(np.float64, (m, k), elements=coords)


def _lp_w1(a, b):
    # transport LP over the full coupling polytope
    C = np.abs(a.points[:, None, 0] - b.points[None, :, 0])
    m, n = C.shape
    A = []
    for i in range(m):
        row = np.zeros((m, n))
        row[i] = 1
        A.append(row.ravel())
    for j in range(n):
        col = np.zeros((m, n))
        col[:, j] = 1
        A.append(col.ravel())
    res = linprog(C.ravel(), A_eq=np.array(A), b_eq=np.concatenate([a.weights, b.weights]), bounds=(0, None))
    return res.fun


# -- 1D ---------------------------------------------------------------------------


def test_sorted_examples():
    a = EmpiricalMeasure([0.0, 2.0])
    assert w1_sorted_1d(a, a) == 0.0
    assert w1_sorted_1d(EmpiricalMeasure([0.0]), EmpiricalMeasure([1.0])) == 1.0
    b = EmpiricalMeasure([1.0, 3.0])
    assert w1_sorted_1d(a, b) == pytest.approx(_lp_w1(a, b), abs=1e-12)
    assert w1_sorted_1d(a, b) == pytest.approx(1.0)


def test_sorted_weighted_matches_lp():
    rng = np.random.default_rng(0)
    for _ in range(20):
        wa = rng.random(5)
        wb = rng.random(7)
        a = EmpiricalMeasure(rng.standard_normal(5), wa / wa.sum())
        b = EmpiricalMeasure(rng.standard_normal(7), wb / wb.sum())
        assert w1_sorted_1d(a, b) == pytest.approx(_lp_w1(a, b), abs=1e-9)


def test_sorted_rejects_multidimensional():
    with pytest.raises(DimensionMismatch):
        w1_sorted_1d(EmpiricalMeasure(np.zeros((2, 2))), EmpiricalMeasure(np.zeros((2, 2))))


# -- assignment -----------------------------------------------------------------------


def test_assignment_permutation_invariant():
    rng = np.random.default_rng(1)
    p = rng.random((30, 3))
    assert w1_assignment(EmpiricalMeasure(p), EmpiricalMeasure(p[rng.permutation(30)])) == 0.0


def test_assignment_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(50):
        a = EmpiricalMeasure(rng.random((6, 2)))
        b = EmpiricalMeasure(rng.random((6, 2)))
        assert abs(w1_assignment(a, b) - w1_brute_force(a, b)) <= 1e-10


def test_unequal_weights_split_exactly():
    a = EmpiricalMeasure([[0.0], [1.0]], [0.25, 0.75])
    b = EmpiricalMeasure([[0.0], [2.0], [3.0]], [0.5, 0.25, 0.25])
    pa, pb = split_atoms(a, b)
    assert len(pa) == len(pb) == 4
    assert w1_assignment(a, b) == pytest.approx(w1_sorted_1d(a, b), abs=1e-12)


def test_size_and_dimension_errors():
    with pytest.raises(DimensionMismatch):
        w1_assignment(EmpiricalMeasure(np.zeros((3, 2))), EmpiricalMeasure(np.zeros((3, 1))))
    big = EmpiricalMeasure(np.zeros((4097, 1)))
    with pytest.raises(SizeLimitExceeded):
        w1_assignment(big, big)
    with pytest.raises(SizeLimitExceeded):
        w1_brute_force(EmpiricalMeasure(np.zeros((9, 1))), EmpiricalMeasure(np.zeros((9, 1))))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.data())
def test_dual_paths_agree_in_1d(m, data):
    a = EmpiricalMeasure(data.draw(cloud(m, 1)))
    b = EmpiricalMeasure(data.draw(cloud(m, 1)))
    assert abs(w1_assignment(a, b) - w1_sorted_1d(a, b)) <= 1e-10 * max(1.0, w1_sorted_1d(a, b))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.data())
def test_metric_axioms(m, k, data):
    a, b, c = (EmpiricalMeasure(data.draw(cloud(m, k))) for _ in range(3))
    ab, ba = w1_assignment(a, b), w1_assignment(b, a)
    assert abs(ab - ba) <= 1e-12 * max(1.0, ab)
    assert w1_assignment(a, c) <= ab + w1_assignment(b, c) + 1e-9
    assert w1_assignment(a, a) == 0.0
    same = sorted(map(tuple, a.points.tolist())) == sorted(map(tuple, b.points.tolist()))
    assert (ab == 0.0) == same or ab < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.floats(0.01, 100), st.data())
def test_scaling(m, s, data):
    a = EmpiricalMeasure(data.draw(cloud(m, 2)))
    b = EmpiricalMeasure(data.draw(cloud(m, 2)))
    assert w1_assignment(a.scaled(s), b.scaled(s)) == pytest.approx(s * w1_assignment(a, b), rel=1e-9, abs=1e-9)


def test_phase_metric_sum_and_periodic():
    m = PhaseMetric(1, "sum", box_length=2.0)
    C = m.pairwise([[0.1, 0.0]], [[1.9, 0.5]])
    assert C[0, 0] == pytest.approx(0.2 + 0.5)
    e = PhaseMetric(1, "euclidean")
    assert e.pairwise([[0.0, 0.0]], [[3.0, 4.0]])[0, 0] == pytest.approx(5.0)
    with pytest.raises(ValueError):
        PhaseMetric(1, "max")


# -- W1^gamma ------------------------------------------------------------------------------


def test_gamma_examples():
    a = EmpiricalMeasure(np.random.default_rng(3).random((10, 2)))
    assert w1_gamma(a, a, 0.3, coupling=np.arange(10)) == pytest.approx(0.3)
    assert w1_gamma(EmpiricalMeasure([0.0]), EmpiricalMeasure([1.0]), 1.0) == pytest.approx(math.sqrt(2))
    rng = np.random.default_rng(4)
    for _ in range(100):
        x = EmpiricalMeasure(rng.random((8, 2)))
        y = EmpiricalMeasure(rng.random((8, 2)))
        assert w1_gamma(x, y, 0.0) == pytest.approx(w1_assignment(x, y), abs=1e-12)
    with pytest.raises(ValueError):
        w1_gamma(a, a, -1.0)
    with pytest.raises(SizeLimitExceeded):
        big = EmpiricalMeasure(np.zeros((65, 1)))
        w1_gamma(big, big, 0.1, exact=True)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10), st.floats(0, 5), st.data())
def test_gamma_sandwich_and_gap(m, g, data):
    a = EmpiricalMeasure(data.draw(cloud(m, 2)))
    b = EmpiricalMeasure(data.draw(cloud(m, 2)))
    w = w1_assignment(a, b)
    val = w1_gamma(a, b, g)
    assert max(g, w) - 1e-9 <= val <= g + w + 1e-9
    assert w1_gamma_gap(a, b, g) >= -1e-12


def test_gamma_monotone_and_limit():
    rng = np.random.default_rng(5)
    a = EmpiricalMeasure(rng.random((20, 2)))
    b = EmpiricalMeasure(rng.random((20, 2)))
    gammas = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1]
    vals = [w1_gamma(a, b, g) for g in gammas]
    assert np.all(np.diff(vals) >= 0)
    assert vals[0] == pytest.approx(w1_assignment(a, b), abs=1e-6)


# -- moments and rates -------------------------------------------------------------------------


def test_moment_examples():
    assert moment(EmpiricalMeasure([0.0]), 2) == 0.0
    assert moment(EmpiricalMeasure([-1.0, 1.0]), 2) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        moment(EmpiricalMeasure([1.0]), 0.5)


def test_fg_rate_cases():
    N = 100
    assert fg_rate(RateModel(1, 1, 4), N) == pytest.approx(N**-0.5 + N**-0.75)
    assert fg_rate(RateModel(1, 2, 4), N) == pytest.approx(N**-0.5 * math.log(1 + N) + N**-0.75)
    assert fg_rate(RateModel(1, 3, 4), 1000) == pytest.approx(1000 ** (-1 / 3) + 1000**-0.75)
    assert RateModel(1, 1, 4).case == "2p>n"
    assert RateModel(1, 2, 4).case == "2p=n"
    assert RateModel(1, 3, 4).case == "2p<n"
    assert RateModel(1, 2, 4).dominant_exponent == -0.5
    assert fg_bound(RateModel(1, 1, 4, m_q=16.0), N) == pytest.approx(2.0 * fg_rate(RateModel(1, 1, 4), N))


def test_fg_rate_excluded_cases():
    with pytest.raises(CaseExcluded):
        fg_rate(RateModel(1, 1, 2), 10)
    with pytest.raises(CaseExcluded):
        fg_rate(RateModel(1, 3, 1.5), 10)
    with pytest.raises(ValueError):
        RateModel(1, 1, 1)


def test_fit_loglog_recovers_power():
    N = np.array([10, 20, 40, 80, 160])
    slope, icpt, se = fit_loglog(N, 3.0 * N**-0.5)
    assert slope == pytest.approx(-0.5)
    assert math.exp(icpt) == pytest.approx(3.0)
    assert se < 1e-10


def test_empirical_rate_in_one_dimension():
    # uniform samples on [0,1]: E W1 decays like N^{-1/2}
    rng = np.random.default_rng(6)
    ref = EmpiricalMeasure(np.linspace(0, 1, 20001)[:, None])
    Ns = [64, 256, 1024, 4096]
    means = [np.mean([w1_sorted_1d(EmpiricalMeasure(rng.random(n)), ref) for _ in range(40)]) for n in Ns]
    slope, _, _ = fit_loglog(Ns, means)
    assert slope == pytest.approx(-0.5, abs=0.08)
