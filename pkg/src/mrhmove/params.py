"""Model parameters and the three-state space.

The hidden chain lives on {0: moving, 1: resting, 2: handling}.  State 0 is
left at rate ``lambda0``, choosing resting with probability ``p1`` and
handling with probability ``p2 = 1 - p1``; either motionless state returns
to moving (rate ``lambda1`` resp. ``lambda2``).  While moving, the location
diffuses with infinitesimal standard deviation ``sigma``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "State",
    "MOVING",
    "RESTING",
    "HANDLING",
    "ModelParams",
    "stationary_dist",
    "rate_matrix",
    "embedded_matrix",
]


class State(IntEnum):
    MOVING = 0
    RESTING = 1
    HANDLING = 2


MOVING = State.MOVING
RESTING = State.RESTING
HANDLING = State.HANDLING


@dataclass(frozen=True)
class ModelParams:
    """Parameter vector (lambda0, lambda1, lambda2, p1, sigma).

    Rates are per unit time, sigma is distance per square-root time unit.
    ``p1`` may sit at 0 or 1, in which case one motionless state is
    unreachable and the model degenerates to a two-state on/off process.
    """

    lambda0: float
    lambda1: float
    lambda2: float
    p1: float
    sigma: float

    def __post_init__(self):
        for name in ("lambda0", "lambda1", "lambda2", "sigma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0.0:
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
        if not 0.0 <= self.p1 <= 1.0:
            raise ValueError(f"p1 must lie in [0, 1], got {self.p1!r}")

    @property
    def p2(self) -> float:
        return 1.0 - self.p1

    def swap_off_states(self) -> "ModelParams":
        """Relabel the two motionless states (1 <-> 2)."""
        return ModelParams(self.lambda0, self.lambda2, self.lambda1,
                           self.p2, self.sigma)

    def as_dict(self) -> dict:
        return {
            "lambda0": self.lambda0,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "p1": self.p1,
            "sigma": self.sigma,
        }


def rate_matrix(params: ModelParams) -> np.ndarray:
    """Generator matrix Q of the hidden chain."""
    l0, l1, l2 = params.lambda0, params.lambda1, params.lambda2
    return np.array([
        [-l0, l0 * params.p1, l0 * params.p2],
        [l1, -l1, 0.0],
        [l2, 0.0, -l2],
    ])


def embedded_matrix(params: ModelParams) -> np.ndarray:
    """Transition matrix of the embedded jump chain."""
    return np.array([
        [0.0, params.p1, params.p2],
        [1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
    ])


def stationary_dist(params: ModelParams) -> np.ndarray:
    """Stationary law of the hidden chain, proportional to
    (1/lambda0, p1/lambda1, p2/lambda2)."""
    w = np.array([
        1.0 / params.lambda0,
        params.p1 / params.lambda1,
        params.p2 / params.lambda2,
    ])
    return w / w.sum()
