"""Closed-form lateral linear-inverted-pendulum dynamics.

All states are expressed in the canonical support frame: the pivot is the
support foot, and the axis points toward the swing side, so a nominal gait
keeps ``y > 0``. Motion obeys ``y'' = c**2 * y``; trajectories grow like
``exp(c t)``, so propagating over very long horizons overflows by design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from capstep._backend import kernels

#: Default pendulum constant sqrt(g / h) for a CoM height of about 0.8 m.
DEFAULT_C = 3.5

#: |E| below this is treated as lying on a zero-energy line.
ENERGY_EPS = 1e-12


def check_pendulum_constant(c: float) -> float:
    c = float(c)
    if not (math.isfinite(c) and c > 0.0):
        raise ValueError(f"pendulum constant must be finite and positive, got {c!r}")
    return c


@dataclass(frozen=True)
class ComState:
    """Lateral CoM position (m) and velocity (m/s) in the support frame."""

    y: float
    vy: float

    def __post_init__(self):
        if not (math.isfinite(self.y) and math.isfinite(self.vy)):
            raise ValueError(f"non-finite CoM state ({self.y!r}, {self.vy!r})")

    def flipped(self) -> "ComState":
        return ComState(-self.y, -self.vy)


@dataclass(frozen=True)
class GaitParams:
    """Nominal apex distance ``alpha``, exchange location ``delta`` and model ``c``."""

    alpha: float
    delta: float
    c: float = DEFAULT_C

    def __post_init__(self):
        check_pendulum_constant(self.c)
        if not (math.isfinite(self.alpha) and math.isfinite(self.delta)):
            raise ValueError("alpha and delta must be finite")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.delta <= self.alpha:
            raise ValueError(f"delta ({self.delta}) must exceed alpha ({self.alpha})")

    @property
    def nominal_energy(self) -> float:
        """Orbital energy of the nominal limit cycle, ``-c**2 alpha**2 / 2``."""
        return orbital_energy(ComState(self.alpha, 0.0), self.c)


def propagate(s: ComState, c: float, t: float) -> ComState:
    """Exact state after ``t`` seconds of free pendulum motion."""
    if t < 0.0:
        raise ValueError(f"cannot propagate backwards (t={t})")
    y, vy = kernels.propagate(s.y, s.vy, c, t)
    return ComState(y, vy)


def orbital_energy(s: ComState, c: float) -> float:
    """Energy per unit mass ``(vy**2 - c**2 y**2) / 2``; conserved by `propagate`."""
    return kernels.orbital_energy(s.y, s.vy, c)


def region(s: ComState, c: float) -> str:
    """'A' for returning (E < 0), 'B' for pivot-crossing (E > 0), '0' on the boundary."""
    e = orbital_energy(s, c)
    if abs(e) < ENERGY_EPS:
        return "0"
    return "A" if e < 0.0 else "B"


def apex_distance(s: ComState, c: float) -> Optional[float]:
    """Minimal |y| along the trajectory, or None if it crosses the pivot."""
    a = kernels.apex_distance(s.y, s.vy, c)
    return None if math.isnan(a) else a


def time_to_position(s: ComState, c: float, target: float, direction: int = 0) -> Optional[float]:
    """Earliest time at which the trajectory passes through ``target``.

    ``direction=+1`` only accepts crossings with increasing y (outbound in the
    canonical frame), ``-1`` decreasing, ``0`` either. Returns None when the
    forward trajectory never gets there.
    """
    t = kernels.time_to_position(s.y, s.vy, c, target, direction)
    return None if math.isnan(t) else t


def foot_placement_for_apex(s_exchange: ComState, c: float, alpha: float) -> float:
    """Foot offset that makes the next step's apex distance exactly ``alpha``.

    Stepping to ``F`` puts the CoM at ``F - y`` with velocity ``-vy`` in the
    new support frame; its apex is ``sqrt((F - y)**2 - (vy / c)**2)``.
    """
    return kernels.foot_placement(s_exchange.y, s_exchange.vy, c, alpha)


def exchange_frame(s: ComState, foot: float) -> ComState:
    """Express an exchange state in the frame of a new foot placed at ``foot``."""
    return ComState(foot - s.y, -s.vy)
