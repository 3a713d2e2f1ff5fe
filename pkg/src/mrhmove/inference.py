"""Likelihood of a discretely observed track and maximum-likelihood fitting.

The location-state pair is Markov even though the location alone is not,
so the exact likelihood of the increments is a sum over hidden state
trajectories.  :func:`loglik_forward` evaluates it with the normalized
forward algorithm in time linear in the number of observations;
:func:`loglik_brute` enumerates trajectories directly and exists purely
as an oracle for small tracks.

State information (from accelerometers, kill-site visits, ...) enters by
zeroing the forward variables of disallowed states.  The reported value
is then the JOINT log-likelihood of the increments and the observed state
information, not the conditional likelihood of the increments given it:
the discarded mass stays discarded, so values remain comparable across
constraint patterns.  A track constrained to one known state at every
point therefore reproduces the closed-form complete-data likelihood.
"""
from __future__ import annotations

import itertools
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import LikelihoodZeroError
from .kernel import TransitionKernelGrid
from .occupation import OccupationEngine, TruncationPolicy
from .params import ModelParams, State, stationary_dist

__all__ = [
    "Track",
    "FitOptions",
    "FitResult",
    "loglik_forward",
    "loglik_brute",
    "fit_bm_baseline",
    "fit_mle",
    "auto_init",
]

_BRUTE_LIMIT = 10


@dataclass(frozen=True)
class Track:
    """Time-stamped positions with optional per-point state information.

    ``state_info`` entries are ``None`` (state unknown), an integer (state
    known) or a set of integers (those states excluded).  Internally this
    becomes the boolean ``allowed`` table.
    """

    times: np.ndarray
    positions: np.ndarray
    allowed: np.ndarray

    def __init__(self, times, positions, state_info=None):
        times = np.asarray(times, dtype=float)
        positions = np.asarray(positions, dtype=float)
        if positions.ndim == 1:
            positions = positions[:, None]
        if times.ndim != 1 or times.size < 1:
            raise ValueError("need at least one observation time")
        if positions.shape[0] != times.size:
            raise ValueError("times and positions length mismatch")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("times must be strictly increasing")
        allowed = np.ones((times.size, 3), dtype=bool)
        if state_info is not None:
            if len(state_info) != times.size:
                raise ValueError("state_info length mismatch")
            for k, info in enumerate(state_info):
                if info is None:
                    continue
                if isinstance(info, (set, frozenset, list, tuple)):
                    for s in info:
                        allowed[k, int(State(s))] = False
                else:
                    allowed[k, :] = False
                    allowed[k, int(State(info))] = True
                if not allowed[k].any():
                    raise ValueError(f"state_info at index {k} excludes all states")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "allowed", allowed)

    @property
    def n_increments(self) -> int:
        return self.times.size - 1

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.positions, axis=0)

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.times)

    def constrained(self) -> bool:
        return not bool(self.allowed.all())


def _kernel_matrices(track: Track, params: ModelParams,
                     trunc: TruncationPolicy | None = None) -> np.ndarray:
    """f(X_k, u | v, gap_k) for every increment, shape (n, 3, 3).

    One occupation engine sized for the largest gap backs a kernel grid
    per distinct gap; all increments sharing a gap evaluate in one batch.
    """
    gaps = track.gaps
    incs = track.increments
    out = np.empty((gaps.size, 3, 3))
    engine = OccupationEngine(params, float(gaps.max()), trunc)
    for gap in np.unique(gaps):
        grid = TransitionKernelGrid(params, float(gap), engine=engine)
        idx = np.nonzero(gaps == gap)[0]
        out[idx] = grid.f_matrices(incs[idx])
    return out


def loglik_forward(track: Track, params: ModelParams,
                   trunc: TruncationPolicy | None = None) -> float:
    """Exact log-likelihood via the normalized forward algorithm."""
    fmats = _kernel_matrices(track, params, trunc)
    return _forward_from_matrices(track, params, fmats)


def _forward_from_matrices(track, params, fmats):
    alpha = stationary_dist(params) * track.allowed[0]
    d0 = alpha.sum()
    if d0 <= 0.0:
        raise LikelihoodZeroError(0)
    alpha = alpha / d0
    loglik = math.log(d0)
    for k in range(track.n_increments):
        alpha = (fmats[k].T @ alpha) * track.allowed[k + 1]
        dk = alpha.sum()
        if dk <= 0.0:
            raise LikelihoodZeroError(k + 1)
        alpha /= dk
        loglik += math.log(dk)
    return loglik


def loglik_brute(track: Track, params: ModelParams,
                 trunc: TruncationPolicy | None = None) -> float:
    """Direct sum over all hidden state trajectories; n <= 10 only."""
    n = track.n_increments
    if n > _BRUTE_LIMIT:
        raise ValueError(
            f"brute-force enumeration is limited to {_BRUTE_LIMIT} increments")
    if n == 0:
        return 0.0
    fmats = _kernel_matrices(track, params, trunc)
    nu = stationary_dist(params)
    states_per_index = [np.nonzero(track.allowed[k])[0]
                        for k in range(n + 1)]
    terms = []
    for path in itertools.product(*states_per_index):
        like = nu[path[0]]
        for k in range(n):
            like *= fmats[k][path[k], path[k + 1]]
            if like == 0.0:
                break
        terms.append(like)
    total = math.fsum(terms)
    if total <= 0.0:
        raise LikelihoodZeroError(-1)
    return math.log(total)


def fit_bm_baseline(track: Track) -> float:
    """Closed-form mobility MLE under the always-moving Brownian baseline:
    sigma_hat^2 = sum |X_k|^2 / (d * sum gaps)."""
    total_gap = float(track.gaps.sum())
    if total_gap <= 0.0:
        raise ValueError("track has no elapsed time")
    ss = float(np.sum(track.increments ** 2))
    return math.sqrt(ss / (track.dim * total_gap))


# -- maximum likelihood ---------------------------------------------------

_PARAM_NAMES = ("lambda0", "lambda1", "lambda2", "p1", "sigma")

# soft box in natural units; the objective grows linearly past these so the
# simplex retreats instead of requesting absurd series sizes
_RATE_LO, _RATE_HI = 1e-5, 1e4
_SIGMA_LO, _SIGMA_HI = 1e-8, 1e8


@dataclass(frozen=True)
class FitOptions:
    restarts: int = 3
    max_evals: int = 2000
    xatol: float = 1e-6
    fatol: float = 1e-8
    seed: int = 0
    jitter: float = 0.5
    compute_stderr: bool = False
    series_budget: float = 8000.0   # cap on gap * (lambda0 + max off rate)


@dataclass
class FitResult:
    estimates: ModelParams
    log_lik: float
    converged: bool
    iterations: int
    n_evals: int
    fixed: dict
    stderr: dict | None = None
    flat_direction: bool = False
    elapsed_seconds: float = 0.0
    restarts_used: int = 0
    settings: dict = field(default_factory=dict)


def _to_z(params: ModelParams, free):
    def z_of(i):
        name = _PARAM_NAMES[i]
        v = getattr(params, name)
        if name == "p1":
            return math.log(v / (1.0 - v))
        return math.log(v)
    return np.array([z_of(i) for i in free])


def _from_z(z, free, fixed_values):
    vals = dict(fixed_values)
    for zi, i in zip(z, free):
        name = _PARAM_NAMES[i]
        if name == "p1":
            vals[name] = 1.0 / (1.0 + math.exp(-min(max(zi, -500.0), 500.0)))
        else:
            vals[name] = math.exp(min(zi, 700.0))
    return ModelParams(**vals)


def auto_init(track: Track) -> ModelParams:
    """Deterministic in-domain starting point.

    Mobility comes from the Brownian baseline inflated by 2 (attributing a
    quarter of the elapsed time to moving); the motionless exit rates from
    short and long quantiles of the zero-increment run durations; the
    moving exit rate from matching the implied stationary moving fraction
    1/4; the resting probability starts at 0.7.
    """
    mean_gap = float(track.gaps.mean())
    sigma0 = max(2.0 * fit_bm_baseline(track), 1e-6)

    zero = np.all(track.increments == 0.0, axis=1)
    durations = []
    run = 0.0
    for z, gap in zip(zero, track.gaps):
        if z:
            run += gap
        elif run > 0.0:
            durations.append(run)
            run = 0.0
    if run > 0.0:
        durations.append(run)
    if durations:
        lam1 = 1.0 / max(float(np.quantile(durations, 0.25)), 1e-6)
        lam2 = 1.0 / max(float(np.quantile(durations, 0.90)), 1e-6)
    else:
        lam1, lam2 = 2.0 / mean_gap, 0.2 / mean_gap
    # keep the start off the lambda1 = lambda2 ridge, where p1 is not
    # identifiable; handling is the slower exit by convention
    lam2 = min(lam2, 0.25 * lam1)

    p1 = 0.7
    # pick lambda0 so the stationary moving fraction matches the 1/4
    # already implied by the sigma inflation: 1/lambda0 = (pi_off sum) / 3
    off = p1 / lam1 + (1.0 - p1) / lam2
    lam0 = 3.0 / off

    clamp = lambda v: min(max(v, 1e-3 / mean_gap), 1e3 / mean_gap)
    return ModelParams(clamp(lam0), clamp(lam1), clamp(lam2), p1, sigma0)


def _penalty(params: ModelParams, max_gap: float, budget: float) -> float:
    over = 0.0
    for r in (params.lambda0, params.lambda1, params.lambda2):
        over += max(0.0, math.log(r) - math.log(_RATE_HI))
        over += max(0.0, math.log(_RATE_LO) - math.log(r))
    over += max(0.0, math.log(params.sigma) - math.log(_SIGMA_HI))
    over += max(0.0, math.log(_SIGMA_LO) - math.log(params.sigma))
    load = max_gap * (params.lambda0 + max(params.lambda1, params.lambda2))
    over += max(0.0, (load - budget) / budget)
    return over


def fit_mle(track: Track, init: ModelParams | None = None,
            fixed: dict | None = None,
            opts: FitOptions | None = None,
            trunc: TruncationPolicy | None = None) -> FitResult:
    """Maximize the forward log-likelihood over the unconstrained transform
    (log rates, logit p1, log sigma) with seeded Nelder-Mead restarts.

    ``fixed`` maps parameter names to pinned values; for the moving-resting
    comparison fit pass ``{"p1": 1.0, "lambda2": <anything positive>}``.
    """
    opts = opts or FitOptions()
    fixed = dict(fixed or {})
    for name in fixed:
        if name not in _PARAM_NAMES:
            raise ValueError(f"unknown parameter {name!r}")
    if init is None:
        init = auto_init(track)
    init = ModelParams(**{**init.as_dict(), **fixed})  # fixed values win

    free = [i for i, name in enumerate(_PARAM_NAMES) if name not in fixed]
    fixed_values = {name: getattr(init, name)
                    for name in _PARAM_NAMES if name in fixed}
    if "p1" not in fixed and not 0.0 < init.p1 < 1.0:
        raise ValueError("free p1 must start strictly inside (0, 1)")

    max_gap = float(track.gaps.max())
    started = time.perf_counter()
    n_evals = 0

    def objective(z):
        nonlocal n_evals
        n_evals += 1
        try:
            params = _from_z(z, free, fixed_values)
        except (ValueError, OverflowError):
            return 1e12
        pen = _penalty(params, max_gap, opts.series_budget)
        if pen > 0.0:
            return 1e10 * (1.0 + pen)
        try:
            return -loglik_forward(track, params, trunc)
        except (LikelihoodZeroError, RuntimeError, ValueError):
            return 1e10

    if not free:
        ll = loglik_forward(track, init, trunc)
        return FitResult(init, ll, True, 0, 1, fixed,
                         elapsed_seconds=time.perf_counter() - started,
                         settings=_fit_settings(opts))

    rng = np.random.default_rng(opts.seed)
    z0 = _to_z(init, free)
    best = None
    iterations = 0
    restarts_used = 0
    for r in range(max(1, opts.restarts)):
        start = z0 if r == 0 else z0 + opts.jitter * rng.standard_normal(len(free))
        res = minimize(objective, start, method="Nelder-Mead",
                       options={"xatol": opts.xatol, "fatol": opts.fatol,
                                "maxfev": opts.max_evals,
                                "adaptive": len(free) >= 4})
        iterations += int(res.nit)
        restarts_used += 1
        if best is None or res.fun < best.fun:
            best = res

    estimates = _from_z(best.x, free, fixed_values)
    log_lik = -float(best.fun)
    converged = bool(best.success) and best.fun < 1e9
    stderr = None
    flat = False
    if opts.compute_stderr and converged:
        stderr, flat = _stderr_from_hessian(objective, best.x, free, estimates)
    return FitResult(estimates, log_lik, converged, iterations, n_evals,
                     fixed, stderr=stderr, flat_direction=flat,
                     elapsed_seconds=time.perf_counter() - started,
                     restarts_used=restarts_used,
                     settings=_fit_settings(opts))


def _fit_settings(opts: FitOptions) -> dict:
    return {"restarts": opts.restarts, "max_evals": opts.max_evals,
            "xatol": opts.xatol, "fatol": opts.fatol, "seed": opts.seed}


def _stderr_from_hessian(objective, z_opt, free, estimates):
    """Delta-method standard errors from a central-difference Hessian of the
    transformed negative log-likelihood; approximate and flagged as such."""
    h = 1e-3
    k = len(z_opt)
    hess = np.empty((k, k))
    for a in range(k):
        for b in range(a, k):
            za = np.zeros(k)
            zb = np.zeros(k)
            za[a] = h
            zb[b] = h
            fpp = objective(z_opt + za + zb)
            fpm = objective(z_opt + za - zb)
            fmp = objective(z_opt - za + zb)
            fmm = objective(z_opt - za - zb)
            hess[a, b] = hess[b, a] = (fpp - fpm - fmp + fmm) / (4.0 * h * h)
    eigs = np.linalg.eigvalsh(hess)
    flat = bool(eigs.min() < 1e-6)
    if flat:
        warnings.warn(
            "flat likelihood direction detected (smallest Hessian eigenvalue "
            f"{eigs.min():.3g}); standard errors are unreliable, the two "
            "motionless states may be indistinguishable", RuntimeWarning)
    stderr = {}
    try:
        cov = np.linalg.inv(hess)
        for pos, i in enumerate(free):
            name = _PARAM_NAMES[i]
            var = cov[pos, pos]
            if var <= 0.0:
                stderr[name] = float("nan")
                continue
            theta = getattr(estimates, name)
            jac = theta * (1.0 - theta) if name == "p1" else theta
            stderr[name] = math.sqrt(var) * abs(jac)
    except np.linalg.LinAlgError:
        stderr = {_PARAM_NAMES[i]: float("nan") for i in free}
    return stderr, flat
