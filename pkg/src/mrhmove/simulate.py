"""Exact, seeded simulation of the hidden chain and the location process.

Randomness comes from the counter-based Philox generator so replications
are portable: path ``i`` of a batch uses ``Philox(key=seed).jumped(i)``,
giving every path its own disjoint stream.  Within a path the draw order
is fixed: one uniform for a stationary start when requested, then for
each cycle the holding time of the current state followed (on leaving
the moving state) by one uniform choosing the motionless type; for a
location track, all chain draws precede the observation normals.

Location increments are sampled exactly: conditional on the chain, the
displacement over an observation gap is centered normal with variance
sigma^2 times the moving time gained in the gap, so there is no
time-discretization error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ModelParams, State, stationary_dist

__all__ = [
    "STATIONARY",
    "ChainPath",
    "SimulatedTrack",
    "EmpiricalOccupation",
    "simulate_chain",
    "occupation_of",
    "simulate_mrh",
    "empirical_occupation_law",
]

STATIONARY = "stationary"


def _rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed).jumped(stream))


@dataclass(frozen=True)
class ChainPath:
    """Piecewise-constant, right-continuous realization of the chain.

    ``states[0]`` holds from time 0 to ``jump_times[0]``; ``states[k]``
    holds from ``jump_times[k-1]`` on.  All jump times are <= t_end.
    """

    jump_times: np.ndarray
    states: np.ndarray
    t_end: float

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float)
        st = np.asarray(self.states, dtype=int)
        if st.size != jt.size + 1:
            raise ValueError("need exactly one more state than jump times")
        if jt.size and (np.any(np.diff(jt) <= 0.0) or jt[0] <= 0.0
                        or jt[-1] > self.t_end):
            raise ValueError("jump times must be strictly increasing in (0, t_end]")
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "states", st)

    def state_at(self, t: float) -> int:
        if not 0.0 <= t <= self.t_end:
            raise ValueError("t outside the simulated horizon")
        return int(self.states[np.searchsorted(self.jump_times, t, side="right")])


@dataclass(frozen=True)
class SimulatedTrack:
    times: np.ndarray
    positions: np.ndarray
    states: np.ndarray
    occupations: np.ndarray


def _draw_start(rng, params, start):
    if start == STATIONARY:
        pi = stationary_dist(params)
        return int(np.searchsorted(np.cumsum(pi), rng.random()))
    return int(State(start))


def _off_state_and_rate(rng, params):
    if rng.random() < params.p1:
        return 1, params.lambda1
    return 2, params.lambda2


_RATES = ("lambda0", "lambda1", "lambda2")


def _chain_draws(rng, params, t_end, start):
    """Jump times and visited states of one chain realization."""
    state = _draw_start(rng, params, start)
    jumps, states = [], [state]
    now = 0.0
    while True:
        now += rng.exponential(1.0 / getattr(params, _RATES[state]))
        if now > t_end:
            return jumps, states
        jumps.append(now)
        if state == 0:
            state, _ = _off_state_and_rate(rng, params)
        else:
            state = 0
        states.append(state)


def simulate_chain(params: ModelParams, t_end: float, start=STATIONARY,
                   seed: int = 0, stream: int = 0) -> ChainPath:
    """One realization of the hidden chain on [0, t_end]."""
    if t_end <= 0.0:
        raise ValueError("t_end must be positive")
    rng = _rng_for(seed, stream)
    jumps, states = _chain_draws(rng, params, t_end, start)
    return ChainPath(np.asarray(jumps), np.asarray(states), float(t_end))


def _moving_time(jumps, states, t):
    """Lebesgue time spent in state 0 on [0, t], exact from jump times."""
    total = 0.0
    seg_start = 0.0
    for k, state in enumerate(states):
        seg_end = jumps[k] if k < len(jumps) else t
        if seg_start >= t:
            break
        if state == 0:
            total += min(seg_end, t) - seg_start
        seg_start = seg_end
    return total


def occupation_of(path: ChainPath, t: float) -> float:
    """Moving time M(t) accumulated by the path up to t <= t_end."""
    if t < 0.0 or t > path.t_end:
        raise ValueError("t outside the simulated horizon")
    return _moving_time(list(path.jump_times), list(path.states), t)


def simulate_mrh(params: ModelParams, times, dim: int = 2, start=STATIONARY,
                 seed: int = 0, stream: int = 0) -> SimulatedTrack:
    """Locations, states and moving times at the given observation times."""
    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(times < 0.0) or np.any(np.diff(times) <= 0.0):
        raise ValueError("times must be nonempty, nonnegative, strictly increasing")
    if dim < 1:
        raise ValueError("dim must be at least 1")
    rng = _rng_for(seed, stream)
    jumps, states = _chain_draws(rng, params, float(times[-1]), start)

    occ = np.array([_moving_time(jumps, states, t) for t in times])
    gained = np.diff(np.concatenate([[0.0], occ]))
    scale = params.sigma * np.sqrt(gained)
    increments = rng.standard_normal((times.size, dim)) * scale[:, None]
    positions = np.cumsum(increments, axis=0)

    jump_arr = np.asarray(jumps)
    state_arr = np.asarray(states)
    obs_states = state_arr[np.searchsorted(jump_arr, times, side="right")]
    return SimulatedTrack(times, positions, obs_states, occ)


@dataclass(frozen=True)
class EmpiricalOccupation:
    """Binned Monte Carlo estimate of the (M(t), S(t)) law."""

    start: int
    t: float
    n_paths: int
    bin_edges: np.ndarray          # 201 edges over [0, t]
    counts: np.ndarray             # (3, n_bins), interior occupation values
    atom_zero: np.ndarray          # (3,) paths with M(t) exactly 0
    atom_full: np.ndarray          # (3,) paths with M(t) exactly t

    def density_estimate(self, end):
        width = np.diff(self.bin_edges)
        return self.counts[int(end)] / (self.n_paths * width)

    def state_frequencies(self):
        tot = self.counts.sum(axis=1) + self.atom_zero + self.atom_full
        return tot / self.n_paths


def empirical_occupation_law(params: ModelParams, start, t: float,
                             n_paths: int, seed: int,
                             n_bins: int = 200) -> EmpiricalOccupation:
    """Simulate n_paths chains and bin (M(t), S(t)); the Monte Carlo oracle
    for the occupation-time densities.  Atoms at M = 0 and M = t are exact
    events of the simulation and are tallied separately."""
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    edges = np.linspace(0.0, t, n_bins + 1)
    counts = np.zeros((3, n_bins), dtype=np.int64)
    atom_zero = np.zeros(3, dtype=np.int64)
    atom_full = np.zeros(3, dtype=np.int64)
    for i in range(n_paths):
        rng = _rng_for(seed, i)
        jumps, states = _chain_draws(rng, params, t, start)
        m = _moving_time(jumps, states, t)
        end = states[-1]
        if m == 0.0:
            atom_zero[end] += 1
        elif m == t:
            atom_full[end] += 1
        else:
            counts[end, min(int(m / t * n_bins), n_bins - 1)] += 1
    return EmpiricalOccupation(int(State(start)), float(t), n_paths,
                               edges, counts, atom_zero, atom_full)
