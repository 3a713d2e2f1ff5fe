"""Joint law of (moving time M(t), state S(t)) given the starting state.

Conditional on the starting state i, the pair (M(t), S(t)) has an atom --
at M(t) = t when i = 0 (the chain never leaves moving) and at M(t) = 0
when i is motionless (the chain never reaches moving) -- plus defective
densities p_ij(s, t) on 0 < s < t for each end state j.  Each density is
an infinite series over the number of completed moving/motionless cycles:
a Poisson-type weight in s (the moving part, all holding times Exp(lambda0))
times the density or cdf-difference of a sum of motionless holding times
at t - s.

The motionless sums are mixtures over how many holdings were resting
versus handling.  Evaluation here rewrites each mixture exactly as a
count mixture of single-rate gammas: an Exp(lam) holding equals a
Geometric(lam / Lam)-fold sum of Exp(Lam) holdings for any Lam >= lam
(probabilistic uniformization).  The rewritten series has nonnegative
terms only, so it is immune to the catastrophic cancellation that the
signed partial-fraction expansion suffers when the two motionless rates
are close, and it evaluates as a pair of matrix products.  Tests cross
check this engine against a literal term-by-term evaluation of the
series built on :mod:`mrhmove.gammaconv`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.signal import lfilter

from .errors import ConvergenceError
from .params import ModelParams, State
from .quadrature import QuadraturePolicy, integrate_adaptive

__all__ = [
    "TruncationPolicy",
    "OccupationEngine",
    "OccupationLaw",
    "occ_atom",
    "occ_density",
    "occupation_law",
    "occ_total_mass",
    "reduction_check",
    "two_state_density",
    "ReductionReport",
]


@dataclass(frozen=True)
class TruncationPolicy:
    """Truncation of the cycle-count series.

    The number of completed cycles by time t is stochastically dominated by
    a Poisson count with mean t * (lambda0 + max(lambda1, lambda2)); the
    default cap is that mean plus ten standard deviations plus 20.  The
    retained tail must stay below ``tail_rtol`` of the evaluated density,
    otherwise a :class:`ConvergenceError` reports the achieved bound.
    """

    n_max: int | None = None
    tail_rtol: float = 1e-10
    hard_cap: int = 20000

    def resolve(self, params: ModelParams, t: float) -> int:
        if self.n_max is not None:
            n = self.n_max
        else:
            mean = t * (params.lambda0 + max(params.lambda1, params.lambda2))
            n = math.ceil(mean + 10.0 * math.sqrt(mean) + 20.0)
        if n > self.hard_cap:
            raise ConvergenceError(
                f"series cap {n} exceeds hard cap {self.hard_cap}; "
                "parameters or horizon out of supported range")
        return int(n)


def occ_atom(start, t, params: ModelParams):
    """Atom of M(t) given S(0) = start: (location, weight).

    Starting in moving the atom sits at M(t) = t with weight
    exp(-lambda0 t); starting motionless it sits at M(t) = 0 with weight
    exp(-lambda_start t).
    """
    if t <= 0.0:
        raise ValueError("t must be positive")
    start = State(start)
    if start == State.MOVING:
        return t, math.exp(-params.lambda0 * t)
    if start == State.RESTING:
        return 0.0, math.exp(-params.lambda1 * t)
    return 0.0, math.exp(-params.lambda2 * t)


def _geom_filter(x, q, axis=-1):
    """Count pmf of X + Geometric(q)-fold Exp(Lam), given the pmf of X.

    y[m] = (1 - q) y[m-1] + q x[m-1]; q = 1 degenerates to a pure shift.
    """
    return lfilter([0.0, q], [1.0, -(1.0 - q)], x, axis=axis)


class OccupationEngine:
    """Vectorized evaluator of p_ij(s, t) for one parameter vector.

    The count-mixture matrices depend only on (lambda1, lambda2, p1) and
    the truncation sizes, so one engine serves every t up to ``t_max`` and
    any batch of s values; evaluation is read-only and thread-safe.
    """

    def __init__(self, params: ModelParams, t_max: float,
                 trunc: TruncationPolicy | None = None):
        if t_max <= 0.0:
            raise ValueError("t_max must be positive")
        self.params = params
        self.t_max = float(t_max)
        self.trunc = trunc or TruncationPolicy()
        self.n_max = self.trunc.resolve(params, self.t_max)

        lam = max(params.lambda1, params.lambda2)
        self.unif_rate = lam
        mu_m = lam * self.t_max
        self.m_max = int(math.ceil(mu_m + 12.0 * math.sqrt(mu_m + 1.0) + 60.0))
        self._build_count_matrices()

    # -- count-mixture tables -------------------------------------------

    def _build_count_matrices(self):
        p = self.params
        lam = self.unif_rate
        q1, q2 = p.lambda1 / lam, p.lambda2 / lam
        n_rows, m_cols = self.n_max + 1, self.m_max + 1

        ku = np.zeros((n_rows, m_cols))
        ku[0, 0] = 1.0
        for n in range(1, n_rows):
            prev = ku[n - 1]
            ku[n] = p.p1 * _geom_filter(prev, q1) + p.p2 * _geom_filter(prev, q2)

        self._ku = ku                                   # counts of U_n
        self._ku_r = _geom_filter(ku, q1, axis=1)       # U_n + Exp(lambda1)
        self._ku_h = _geom_filter(ku, q2, axis=1)       # U_n + Exp(lambda2)
        self._ku_rr = _geom_filter(self._ku_r, q1, axis=1)
        self._ku_hh = _geom_filter(self._ku_h, q2, axis=1)
        # mixed extra Exp(lambda1) + Exp(lambda2): apply the smaller rate
        # last so the swapped parameterization builds the identical array
        if p.lambda1 <= p.lambda2:
            self._ku_rh = _geom_filter(self._ku_h, q1, axis=1)
        else:
            self._ku_rh = _geom_filter(self._ku_r, q2, axis=1)
        for name in ("_ku", "_ku_r", "_ku_h", "_ku_rr", "_ku_hh", "_ku_rh"):
            getattr(self, name).setflags(write=False)

    # -- basis vectors ---------------------------------------------------

    def _count_basis(self, y):
        """Density and cdf of Gamma(m, unif_rate) at each y, m = 0..m_max."""
        lam = self.unif_rate
        m = np.arange(1, self.m_max + 1, dtype=float)
        ly = lam * y
        with np.errstate(divide="ignore"):
            log_pmf = (m[:, None] - 1.0) * np.log(ly)[None, :] \
                - ly[None, :] - special.gammaln(m)[:, None]
        pdf = np.vstack([np.zeros((1, y.size)), lam * np.exp(log_pmf)])
        cdf = np.vstack([np.ones((1, y.size)),
                         special.gammainc(m[:, None], ly[None, :])])
        return pdf, cdf

    def _moving_weights(self, s, n_used):
        """pois(n; lambda0 s) for n = 0..n_used."""
        mu = self.params.lambda0 * s
        n = np.arange(n_used + 1, dtype=float)
        log_pmf = n[:, None] * np.log(mu)[None, :] - mu[None, :] \
            - special.gammaln(n + 1.0)[:, None]
        return np.exp(log_pmf)

    def _n_used(self, s_max):
        mu = self.params.lambda0 * s_max
        n = int(math.ceil(mu + 10.0 * math.sqrt(mu) + 25.0))
        while n < self.n_max and special.gammainc(n + 1.0, mu) > 1e-18:
            n = min(2 * n + 10, self.n_max)
        return min(n, self.n_max)

    def _check_tail(self, s_max, n_used, scale):
        lam_cap = max(self.params.lambda0, self.unif_rate)
        tail = lam_cap * float(special.gammainc(n_used + 1.0,
                                                self.params.lambda0 * s_max))
        if tail <= 1e-250:
            return
        achieved = tail / max(scale, 1e-300)
        if achieved > self.trunc.tail_rtol:
            raise ConvergenceError(
                f"series tail bound {achieved:.3g} exceeds "
                f"{self.trunc.tail_rtol:.3g} at n_max={n_used}",
                achieved=achieved)

    # -- densities -------------------------------------------------------

    def densities(self, start, s, t):
        """p_{start, j}(s, t) for j = 0, 1, 2; shape (3, len(s))."""
        start = State(start)
        s = np.atleast_1d(np.asarray(s, dtype=float))
        t = float(t)
        if t <= 0.0 or t > self.t_max * (1.0 + 1e-12):
            raise ValueError(f"t must lie in (0, {self.t_max}]")
        if np.any(s <= 0.0) or np.any(s >= t):
            raise ValueError("s must lie strictly inside (0, t)")

        p = self.params
        pdf_b, cdf_b = self._count_basis(t - s)
        n_used = self._n_used(float(s.max()))
        pois = self._moving_weights(s, n_used)
        rows = slice(0, n_used + 1)

        def dot(mat, basis):
            return mat[rows] @ basis

        l0 = p.lambda0
        if start == State.MOVING:
            du = dot(self._ku, pdf_b)
            cu = dot(self._ku, cdf_b)
            cur = dot(self._ku_r, cdf_b)
            cuh = dot(self._ku_h, cdf_b)
            p00 = np.einsum("ns,ns->s", pois[1:], du[1:])
            p01 = p.p1 * l0 * np.einsum("ns,ns->s", pois, cu - cur)
            p02 = p.p2 * l0 * np.einsum("ns,ns->s", pois, cu - cuh)
            out = np.vstack([p00, p01, p02])
        else:
            if start == State.RESTING:
                wu = dot(self._ku_r, pdf_b)
                c_one = dot(self._ku_r, cdf_b)
                c_same = dot(self._ku_rr, cdf_b)
                c_other = dot(self._ku_rh, cdf_b)
                p_same, p_other = p.p1, p.p2
            else:
                wu = dot(self._ku_h, pdf_b)
                c_one = dot(self._ku_h, cdf_b)
                c_same = dot(self._ku_hh, cdf_b)
                c_other = dot(self._ku_rh, cdf_b)
                p_same, p_other = p.p2, p.p1
            pi0 = np.einsum("ns,ns->s", pois, wu)
            pii = p_same * l0 * np.einsum("ns,ns->s", pois, c_one - c_same)
            pij = p_other * l0 * np.einsum("ns,ns->s", pois, c_one - c_other)
            if start == State.RESTING:
                out = np.vstack([pi0, pii, pij])
            else:
                out = np.vstack([pi0, pij, pii])

        self._check_tail(float(s.max()), n_used, float(np.abs(out).max()))
        return np.clip(out, 0.0, None, out=out)

    def density(self, start, end, s, t):
        return self.densities(start, s, t)[int(State(end))]


def _engine_for(params, t, trunc, _cache={}):
    key = (params, float(t), trunc)
    if key not in _cache:
        if len(_cache) >= 8:
            _cache.clear()
        _cache[key] = OccupationEngine(params, t, trunc)
    return _cache[key]


def occ_density(start, end, s, t, params: ModelParams,
                trunc: TruncationPolicy | None = None):
    """Defective density p_ij(s, t) of (M(t) in ds, S(t) = j) given S(0) = i.

    ``s`` may be a scalar or an array strictly inside (0, t).
    """
    engine = _engine_for(params, t, trunc or TruncationPolicy())
    out = engine.density(start, end, np.atleast_1d(s), t)
    return float(out[0]) if np.isscalar(s) or np.ndim(s) == 0 else out


@dataclass(frozen=True)
class OccupationLaw:
    """Mixed law of (M(t), S(t)) given the starting state: one atom plus a
    table of defective densities, kept separate so likelihood code can
    treat them under the correct dominating measure."""

    start: State
    t: float
    params: ModelParams
    atom_location: float
    atom_weight: float
    _engine: OccupationEngine

    def density(self, end, s):
        return self._engine.density(self.start, end, np.atleast_1d(s), self.t)

    def densities(self, s):
        return self._engine.densities(self.start, np.atleast_1d(s), self.t)

    def total_mass(self, quad: QuadraturePolicy | None = None) -> float:
        policy = quad or QuadraturePolicy(rel_tol=1e-9)
        val, _ = integrate_adaptive(
            lambda s: self._engine.densities(self.start, s, self.t).sum(axis=0),
            0.0, self.t, policy)
        return self.atom_weight + val


def occupation_law(start, t, params: ModelParams,
                   trunc: TruncationPolicy | None = None) -> OccupationLaw:
    loc, w = occ_atom(start, t, params)
    engine = _engine_for(params, t, trunc or TruncationPolicy())
    return OccupationLaw(State(start), float(t), params, loc, w, engine)


def occ_total_mass(start, t, params: ModelParams,
                   trunc: TruncationPolicy | None = None,
                   quad: QuadraturePolicy | None = None) -> float:
    """Atom weight plus the integrated densities; equals 1 up to numerics."""
    return occupation_law(start, t, params, trunc).total_mass(quad)


# -- two-state reduction ------------------------------------------------


def two_state_density(s, t, rate_move, rate_off):
    """Occupation density of the two-state on/off process, start and end
    in the moving state.

    Written directly from scipy primitives (Poisson weights in s, single
    gamma densities in t - s) so it shares no code with the three-state
    engine and can serve as an independent oracle for the degenerate cases.
    """
    from scipy.stats import gamma as gamma_dist, poisson

    s = np.atleast_1d(np.asarray(s, dtype=float))
    total = np.zeros_like(s)
    tiny_run = 0
    for n in range(1, 100000):
        term = poisson.pmf(n, rate_move * s) * gamma_dist.pdf(
            t - s, n, scale=1.0 / rate_off)
        total += term
        if np.all(term <= 1e-16 * np.maximum(total, 1e-300)):
            tiny_run += 1
            if tiny_run >= 5:
                break
        else:
            tiny_run = 0
    return total


@dataclass(frozen=True)
class ReductionReport:
    mode: str
    off_rate: float
    grid: np.ndarray
    three_state: np.ndarray
    two_state: np.ndarray
    max_abs_dev: float


def reduction_check(params: ModelParams, t, grid_size: int = 100,
                    trunc: TruncationPolicy | None = None) -> ReductionReport:
    """Compare the three-state p00 with the two-state formula.

    Valid only for the degenerate parameter sets where the model collapses:
    p1 at 0 or 1 (one motionless state unreachable) or lambda1 = lambda2
    (motionless states indistinguishable).
    """
    if params.p1 == 1.0:
        mode, off_rate = "p1=1", params.lambda1
    elif params.p1 == 0.0:
        mode, off_rate = "p1=0", params.lambda2
    elif params.lambda1 == params.lambda2:
        mode, off_rate = "equal-rates", params.lambda1
    else:
        raise ValueError(
            "reduction_check requires p1 in {0, 1} or lambda1 == lambda2")
    grid = np.linspace(0.0, t, grid_size + 2)[1:-1]
    three = occ_density(State.MOVING, State.MOVING, grid, t, params, trunc)
    two = two_state_density(grid, t, params.lambda0, off_rate)
    return ReductionReport(mode, off_rate, grid, three, two,
                           float(np.abs(three - two).max()))
