"""Panel-based adaptive quadrature for vectorized integrands.

The integrands in this package (occupation densities against normal
kernels) are smooth away from the endpoints but can develop an integrable
spike at the lower endpoint, where the normal factor behaves like
``s**(-d/2)``.  The integrator therefore

* seeds the interval with panels split at fixed interior fractions,
* optionally maps the first panel through ``s = lo + width * u**2`` to
  absorb inverse-square-root endpoint behaviour, and
* bisects the panels with the largest error estimates until the combined
  estimate meets the requested relative tolerance.

Integrands must accept an ndarray of abscissae and return an ndarray of
values; panels are evaluated in batched calls.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

__all__ = ["QuadraturePolicy", "integrate_adaptive", "panel_nodes"]


@dataclass(frozen=True)
class QuadraturePolicy:
    rel_tol: float = 1e-8
    abs_tol: float = 0.0
    nodes: int = 16
    max_panels: int = 400
    seed_fractions: tuple = (1e-4, 1e-2, 0.5, 1.0 - 1e-2)
    sqrt_first_panel: bool = True


def _leggauss(n, _cache={}):
    if n not in _cache:
        _cache[n] = np.polynomial.legendre.leggauss(n)
    return _cache[n]


class _Panel:
    __slots__ = ("lo", "hi", "mapper", "value", "error")

    def __init__(self, lo, hi, mapper):
        self.lo = lo
        self.hi = hi
        self.mapper = mapper
        self.value = 0.0
        self.error = np.inf

    def nodes(self, n):
        x, w = _leggauss(n)
        half = 0.5 * (self.hi - self.lo)
        u = self.lo + half * (x + 1.0)
        s, jac = self.mapper(u)
        return s, w * half * jac


def _identity(u):
    return u, 1.0


def _sqrt_mapper(lo, width):
    # u in [0, 1] maps to s = lo + width * u**2
    def mapper(u):
        return lo + width * u * u, 2.0 * width * u
    return mapper


def panel_nodes(a, b, policy: QuadraturePolicy, refine: int = 0):
    """Fixed node/weight set from the policy's seed panels.

    ``refine`` bisects every seed panel that many times.  Useful when a
    deterministic rule is preferred over adaptive refinement (for example
    inside an optimizer, where adaptivity would make the objective jagged).
    """
    panels = _seed_panels(a, b, policy)
    for _ in range(refine):
        panels = [q for p in panels for q in _bisect(p)]
    nodes, weights = [], []
    for p in panels:
        s, w = p.nodes(policy.nodes)
        nodes.append(s)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def _seed_panels(a, b, policy):
    cuts = [a] + [a + f * (b - a) for f in policy.seed_fractions] + [b]
    cuts = sorted(set(c for c in cuts if a <= c <= b))
    panels = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi <= lo:
            continue
        if policy.sqrt_first_panel and lo == a and not panels:
            panels.append(_Panel(0.0, 1.0, _sqrt_mapper(a, hi - a)))
        else:
            panels.append(_Panel(lo, hi, _identity))
    return panels


def _bisect(p):
    mid = 0.5 * (p.lo + p.hi)
    return [_Panel(p.lo, mid, p.mapper), _Panel(mid, p.hi, p.mapper)]


def _evaluate(panels, f, n):
    """Fill value/error of each panel using n and 2n+1 point rules."""
    all_nodes, counts = [], []
    for p in panels:
        lo_s, lo_w = p.nodes(n)
        hi_s, hi_w = p.nodes(2 * n + 1)
        all_nodes.append(lo_s)
        all_nodes.append(hi_s)
        counts.append((lo_w, hi_w))
    values = f(np.concatenate(all_nodes))
    pos = 0
    for p, (lo_w, hi_w) in zip(panels, counts):
        lo_v = values[pos:pos + lo_w.size]
        pos += lo_w.size
        hi_v = values[pos:pos + hi_w.size]
        pos += hi_w.size
        coarse = float(lo_w @ lo_v)
        fine = float(hi_w @ hi_v)
        p.value = fine
        p.error = abs(fine - coarse)


def integrate_adaptive(f, a, b, policy: QuadraturePolicy | None = None):
    """Integrate a vectorized integrand over [a, b].

    Returns (value, error_estimate); raises NumericalError (carrying the
    best estimate) when the panel budget is exhausted first.
    """
    policy = policy or QuadraturePolicy()
    if b <= a:
        return 0.0, 0.0
    panels = _seed_panels(a, b, policy)
    _evaluate(panels, f, policy.nodes)
    while True:
        total = sum(p.value for p in panels)
        err = sum(p.error for p in panels)
        tol = max(policy.rel_tol * abs(total), policy.abs_tol)
        if err <= tol or err == 0.0:
            return total, err
        if len(panels) >= policy.max_panels:
            raise NumericalError(
                f"quadrature did not converge within {policy.max_panels} "
                f"panels (estimate {total:.6g}, error {err:.3g})",
                estimate=total, error=err)
        panels.sort(key=lambda p: p.error, reverse=True)
        n_split = max(1, len(panels) // 4)
        worst, rest = panels[:n_split], panels[n_split:]
        fresh = [q for p in worst for q in _bisect(p)]
        _evaluate(fresh, f, policy.nodes)
        panels = rest + fresh
