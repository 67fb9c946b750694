"""Wasserstein-1 distances between empirical measures, W1^gamma and rate models."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import CaseExcluded, DimensionMismatch, SizeLimitExceeded

MAX_ATOMS = 4096
MAX_EXACT_GAMMA = 64


@dataclass
class EmpiricalMeasure:
    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a nonempty (M, k) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        self.points = pts
        if self.weights is None:
            self.weights = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.size != pts.shape[0] or np.any(w < 0):
                raise ValueError("weights must be nonnegative, one per point")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must sum to 1")
            self.weights = w

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def k(self) -> int:
        return self.points.shape[1]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def marginal(self, cols) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.points[:, cols], self.weights)

    def scaled(self, s: float) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.points * s, self.weights)


@dataclass(frozen=True)
class PhaseMetric:
    """Ground metric on (x, v) in R^d x R^d.

    ``kind="sum"`` gives |dx| + |dv| (dx periodic when box_length is set);
    ``kind="euclidean"`` uses the joint vector.
    """

    d: int
    kind: str = "sum"
    box_length: float | None = None

    def __post_init__(self):
        if self.kind not in ("sum", "euclidean"):
            raise ValueError("kind must be 'sum' or 'euclidean'")

    def pairwise(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        d = self.d
        dx = b[None, :, :d] - a[:, None, :d]
        if self.box_length is not None:
            dx = dx - self.box_length * np.round(dx / self.box_length)
        dv = b[None, :, d:] - a[:, None, d:]
        if self.kind == "sum":
            return np.sqrt(np.sum(dx * dx, -1)) + np.sqrt(np.sum(dv * dv, -1))
        return np.sqrt(np.sum(dx * dx, -1) + np.sum(dv * dv, -1))


def _cost(pa, pb, metric):
    if metric is None:
        return cdist(pa, pb)
    return metric.pairwise(pa, pb)


def _check_dims(a, b):
    if a.k != b.k:
        raise DimensionMismatch(f"point dimensions differ: {a.k} vs {b.k}")


def w1_sorted_1d(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Exact W1 on the line: integral of |F_a - F_b|."""
    if a.k != 1 or b.k != 1:
        raise DimensionMismatch("w1_sorted_1d requires one-dimensional points")
    xs = np.concatenate([a.points[:, 0], b.points[:, 0]])
    ws = np.concatenate([a.weights, -b.weights])
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    cdf = np.cumsum(ws[order])[:-1]
    return float(np.sum(np.abs(cdf) * np.diff(xs)))


def _integer_counts(w, max_atoms):
    """Common denominator D and integer counts w * D, if D <= max_atoms."""
    D = 1
    for x in w:
        fr = Fraction(float(x)).limit_denominator(max_atoms)
        if abs(float(fr) - x) > 1e-12:
            raise SizeLimitExceeded("weights are not rational with a small denominator")
        D = D * fr.denominator // math.gcd(D, fr.denominator)
        if D > max_atoms:
            raise SizeLimitExceeded(f"common refinement needs more than {max_atoms} atoms")
    counts = np.rint(np.asarray(w) * D).astype(int)
    return D, counts


def split_atoms(a: EmpiricalMeasure, b: EmpiricalMeasure, max_atoms: int = MAX_ATOMS):
    """Expand two measures to equal-size uniform point sets (exact common refinement)."""
    if a.is_uniform and b.is_uniform and a.size == b.size:
        if a.size > max_atoms:
            raise SizeLimitExceeded(f"{a.size} atoms exceeds limit {max_atoms}")
        return a.points, b.points
    Da, ca = _integer_counts(a.weights, max_atoms)
    Db, cb = _integer_counts(b.weights, max_atoms)
    D = Da * Db // math.gcd(Da, Db)
    if D > max_atoms:
        raise SizeLimitExceeded(f"common refinement needs {D} atoms > {max_atoms}")
    pa = np.repeat(a.points, ca * (D // Da), axis=0)
    pb = np.repeat(b.points, cb * (D // Db), axis=0)
    return pa, pb


def optimal_assignment(a: EmpiricalMeasure, b: EmpiricalMeasure, metric=None):
    """Return (pa, pb, cols, cost) with pa[i] matched to pb[cols[i]]."""
    _check_dims(a, b)
    pa, pb = split_atoms(a, b)
    C = _cost(pa, pb, metric)
    rows, cols = linear_sum_assignment(C)
    return pa, pb, cols[np.argsort(rows)], C


def w1_assignment(a: EmpiricalMeasure, b: EmpiricalMeasure, metric=None) -> float:
    """Exact W1 through an optimal assignment (Euclidean ground metric by default)."""
    pa, pb, cols, C = optimal_assignment(a, b, metric)
    return float(C[np.arange(len(cols)), cols].mean())


def w1_brute_force(a: EmpiricalMeasure, b: EmpiricalMeasure, metric=None, max_atoms: int = 8) -> float:
    """Minimum over all permutations; the factorial oracle for small uniform measures."""
    _check_dims(a, b)
    pa, pb = split_atoms(a, b)
    n = len(pa)
    if n > max_atoms:
        raise SizeLimitExceeded(f"brute force limited to {max_atoms} atoms")
    C = _cost(pa, pb, metric)
    rows = np.arange(n)
    return float(min(C[rows, list(p)].sum() for p in itertools.permutations(range(n)))) / n


def w1_gamma(a: EmpiricalMeasure, b: EmpiricalMeasure, gamma: float, coupling=None, exact: bool = False,
             metric=None) -> float:
    """E sqrt(gamma^2 + |X - Y|^2) over an assignment.

    Default: evaluated on the W1-optimal assignment.  ``coupling`` supplies an
    explicit permutation; ``exact=True`` minimizes the functional itself
    (allowed up to 64 atoms).
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    _check_dims(a, b)
    pa, pb = split_atoms(a, b)
    C = _cost(pa, pb, metric)
    G = np.sqrt(gamma * gamma + C * C)
    n = len(pa)
    if coupling is not None:
        cols = np.asarray(coupling, dtype=int)
        if sorted(cols.tolist()) != list(range(n)):
            raise ValueError("coupling must be a permutation of the atoms")
    elif exact:
        if n > MAX_EXACT_GAMMA:
            raise SizeLimitExceeded(f"exact W1^gamma limited to {MAX_EXACT_GAMMA} atoms")
        rows, cols = linear_sum_assignment(G)
        cols = cols[np.argsort(rows)]
    else:
        rows, cols = linear_sum_assignment(C)
        cols = cols[np.argsort(rows)]
    return float(G[np.arange(n), cols].mean())


def w1_gamma_gap(a, b, gamma, metric=None) -> float:
    """Value on the W1-optimal assignment minus the exact minimum (>= 0)."""
    return w1_gamma(a, b, gamma, metric=metric) - w1_gamma(a, b, gamma, exact=True, metric=metric)


def moment(measure, q: float, center=None, position_dims: int | None = None) -> float:
    """q-th absolute moment of the position marginal.

    Accepts an EmpiricalMeasure (first ``position_dims`` columns, default all)
    or any density exposing ``position_moment(q, center)``.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    if hasattr(measure, "position_moment"):
        return float(measure.position_moment(q, center))
    pts = measure.points if position_dims is None else measure.points[:, :position_dims]
    if center is not None:
        pts = pts - np.asarray(center, dtype=float)
    return float(np.sum(measure.weights * np.linalg.norm(pts, axis=1) ** q))


@dataclass(frozen=True)
class RateModel:
    p: float = 1.0
    n: int = 1
    q: float = 4.0
    m_q: float = 1.0

    def __post_init__(self):
        if not self.q > self.p:
            raise ValueError("q must exceed p")
        if self.m_q < 0:
            raise ValueError("moment must be nonnegative")

    @property
    def case(self) -> str:
        if 2 * self.p > self.n:
            return "2p>n"
        if 2 * self.p == self.n:
            return "2p=n"
        return "2p<n"

    @property
    def dominant_exponent(self) -> float:
        lead = -0.5 if 2 * self.p >= self.n else -self.p / self.n
        return max(lead, -(self.q - self.p) / self.q)


def fg_rate(model: RateModel, N) -> np.ndarray | float:
    """Case-selected rate expression for E W_p^p(mu^N, mu), without the constant."""
    p, n, q = model.p, model.n, model.q
    N = np.asarray(N, dtype=float)
    tail = N ** (-(q - p) / q)
    case = model.case
    if case in ("2p>n", "2p=n") and math.isclose(q, 2 * p):
        raise CaseExcluded("q = 2p is excluded")
    if case == "2p<n" and math.isclose(q, n / (n - p)):
        raise CaseExcluded("q = n/(n-p) is excluded")
    if case == "2p>n":
        out = N**-0.5 + tail
    elif case == "2p=n":
        out = N**-0.5 * np.log1p(N) + tail
    else:
        out = N ** (-p / n) + tail
    return float(out) if out.ndim == 0 else out


def fg_bound(model: RateModel, N):
    """fg_rate scaled by M_q^{p/q}."""
    return model.m_q ** (model.p / model.q) * fg_rate(model, N)


def fit_loglog(N, values):
    """Least-squares slope and intercept of log(values) against log(N) with slope stderr."""
    x = np.log(np.asarray(N, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    return float(coef[0]), float(coef[1]), float(math.sqrt(max(cov[0, 0], 0.0)))
