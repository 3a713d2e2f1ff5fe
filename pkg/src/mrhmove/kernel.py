"""Joint law of (X(t), S(t)) and the location-state transition kernel.

Conditional on the moving time M(t) = s, the displacement X(t) is a
centered d-dimensional normal with covariance sigma^2 s I, independent of
everything else.  Mixing that normal over the occupation-time law gives
the joint densities

    h_ij(x, t) = [i = j = 0] exp(-lambda0 t) phi_d(x, sigma^2 t)
                 + integral_0^t phi_d(x, sigma^2 s) p_ij(s, t) ds,

and the one-step transition kernel f(x, u | v, t) of the discretely
observed process is h_vu off the atom, with explicit point masses at
x = 0 for v = u in {1, 2} (the chain never reached the moving state).
The kernel is a Radon-Nikodym derivative against Lebesgue measure plus a
unit atom at x = 0, so atom weights are probabilities, never densities;
exact zero displacement is detected by bitwise comparison and the
rounding that produces it is left to the data-ingestion layer.
"""
from __future__ import annotations

import math

import numpy as np

from .occupation import OccupationEngine, TruncationPolicy, occ_atom
from .params import ModelParams, State
from .quadrature import QuadraturePolicy, integrate_adaptive, panel_nodes

__all__ = [
    "normal_pdf_d",
    "joint_density",
    "transition_kernel",
    "TransitionKernelGrid",
]

# s-grid for the fixed-rule kernel: extra geometric panels toward s = 0
# resolve the phi_d(x, sigma^2 s) spike that develops for small |x|.
_GRID_FRACTIONS = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.1,
                   0.5, 1.0 - 1e-2)


def normal_pdf_d(x, variance: float) -> float:
    """Centered d-dimensional normal density with covariance variance * I."""
    if variance <= 0.0:
        raise ValueError("variance must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size
    return float(np.exp(-0.5 * (x @ x) / variance
                        - 0.5 * d * math.log(2.0 * math.pi * variance)))


def _phi_profile(sq_norm: float, d: int, sigma2: float):
    """phi_d(x, sigma^2 s) as a vectorized function of s."""
    c = -0.5 * d * math.log(2.0 * math.pi * sigma2)

    def profile(s):
        return np.exp(-0.5 * sq_norm / (sigma2 * s)
                      - 0.5 * d * np.log(s) + c)
    return profile


def joint_density(from_state, to_state, x, t, params: ModelParams,
                  quad: QuadraturePolicy | None = None,
                  engine: OccupationEngine | None = None) -> float:
    """Joint density h_ij(x, t) of (X(t) in dx, S(t) = j) given S(0) = i.

    ``x`` is a scalar or length-d vector.  The point x = 0 with
    from_state = to_state in {resting, handling} carries an atom, not a
    density; query it through :func:`transition_kernel`.
    """
    i, j = State(from_state), State(to_state)
    if t <= 0.0:
        raise ValueError("t must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    at_zero = bool(np.all(x == 0.0))
    if at_zero and i == j and i != State.MOVING:
        raise ValueError(
            "x = 0 with equal motionless start and end states is the atom; "
            "use transition_kernel")
    engine = engine or OccupationEngine(params, t)
    profile = _phi_profile(float(x @ x), x.size, params.sigma ** 2)

    def integrand(s):
        return profile(s) * engine.density(i, j, s, t)

    val, _ = integrate_adaptive(integrand, 0.0, t, quad or QuadraturePolicy())
    if i == State.MOVING and j == State.MOVING:
        val += math.exp(-params.lambda0 * t) * normal_pdf_d(x, params.sigma ** 2 * t)
    return max(val, 0.0)


def transition_kernel(x, from_state, to_state, dt, params: ModelParams,
                      quad: QuadraturePolicy | None = None,
                      engine: OccupationEngine | None = None) -> float:
    """Transition kernel f(x, u | v, dt): density off x = 0, probability at it."""
    v, u = State(from_state), State(to_state)
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.all(xa == 0.0):
        if v != u or v == State.MOVING:
            return 0.0
        _, w = occ_atom(v, dt, params)
        return w
    return joint_density(v, u, xa, dt, params, quad=quad, engine=engine)


class TransitionKernelGrid:
    """Kernel evaluations for one gap via a fixed quadrature rule.

    The occupation densities are evaluated once on a fixed s-grid; each
    h_ij(x) then costs one weighted dot product, and whole batches of
    displacements evaluate as a single matrix product.  The fixed rule
    keeps likelihoods smooth in the parameters, which adaptive panel
    placement would break; accuracy against the adaptive integrator is
    exercised in the tests.
    """

    def __init__(self, params: ModelParams, dt: float,
                 engine: OccupationEngine | None = None,
                 nodes_per_panel: int = 16,
                 trunc: TruncationPolicy | None = None):
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        self.params = params
        self.dt = float(dt)
        policy = QuadraturePolicy(nodes=nodes_per_panel,
                                  seed_fractions=_GRID_FRACTIONS,
                                  sqrt_first_panel=True)
        self.s_nodes, self.s_weights = panel_nodes(0.0, self.dt, policy)
        engine = engine or OccupationEngine(params, self.dt, trunc)
        dens = np.empty((3, 3, self.s_nodes.size))
        for i in range(3):
            dens[i] = engine.densities(i, self.s_nodes, self.dt)
        # fold quadrature weights into the density table
        self._weighted = dens * self.s_weights
        l = params
        self._atom_matrix = np.diag([0.0,
                                     math.exp(-l.lambda1 * self.dt),
                                     math.exp(-l.lambda2 * self.dt)])
        self._moving_atom = math.exp(-l.lambda0 * self.dt)

    def f_matrix(self, x) -> np.ndarray:
        """3x3 matrix of f(x, u | v, dt) over (v, u)."""
        return self.f_matrices(np.atleast_2d(np.asarray(x, dtype=float)))[0]

    def f_matrices(self, xs: np.ndarray) -> np.ndarray:
        """Kernel matrices for a batch of displacements, shape (n, 3, 3)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        n, d = xs.shape
        out = np.empty((n, 3, 3))
        zero = np.all(xs == 0.0, axis=1)
        if np.any(zero):
            out[zero] = self._atom_matrix
        live = ~zero
        if np.any(live):
            sq = np.einsum("nd,nd->n", xs[live], xs[live])
            sigma2 = self.params.sigma ** 2
            log_phi = (-0.5 * sq[:, None] / (sigma2 * self.s_nodes[None, :])
                       - 0.5 * d * np.log(2.0 * math.pi * sigma2
                                          * self.s_nodes)[None, :])
            phi = np.exp(log_phi)
            h = np.einsum("nq,ijq->nij", phi, self._weighted)
            h[:, 0, 0] += self._moving_atom * np.exp(
                -0.5 * sq / (sigma2 * self.dt)
                - 0.5 * d * math.log(2.0 * math.pi * sigma2 * self.dt))
            out[live] = np.clip(h, 0.0, None)
        return out
