"""Lateral balance controllers: (T, F) = B(y, vy).

Four controllers of increasing complexity. All of them read the canonical
support-frame observation and return a `StepCommand`; commands are
recomputed every control tick and only consumed by the plant at support
exchange.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from capstep.lipm import (
    ComState,
    GaitParams,
    foot_placement_for_apex,
    propagate,
    time_to_position,
)


class ControllerKind(str, enum.Enum):
    NO_FEEDBACK = "none"
    TIMING = "timing"
    TIMING_STEP = "timing+step"
    TIMING_STEP_LEARNING = "timing+step+learning"

    @classmethod
    def parse(cls, text: str) -> "ControllerKind":
        try:
            return cls(text)
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown controller {text!r} (expected one of: {names})") from None

    @property
    def label(self) -> str:
        return {
            "none": "No Feedback",
            "timing": "Timing",
            "timing+step": "Timing + Step Size",
            "timing+step+learning": "Timing + Step Size + Learning",
        }[self.value]


@dataclass(frozen=True)
class StepCommand:
    """Remaining time to the support exchange and lateral foot placement."""

    t_remaining: float
    f: float
    fallback: bool = False

    def __post_init__(self):
        if not (self.t_remaining >= 0.0 and math.isfinite(self.t_remaining)):
            raise ValueError(f"t_remaining must be finite and >= 0, got {self.t_remaining}")
        if not math.isfinite(self.f):
            raise ValueError(f"foot placement must be finite, got {self.f}")


@dataclass(frozen=True)
class Nominal:
    """Open-loop gait: fixed step period (s) and step width (m)."""

    period: float
    width: float


def open_loop(phase_time: float, nominal: Nominal) -> StepCommand:
    return StepCommand(max(nominal.period - phase_time, 0.0), nominal.width)


def step_timing(s: ComState, params: GaitParams, t_min: float, phase_time: float = 0.0):
    """Time until the CoM reaches ``delta`` on its way out.

    Returns ``(T, fallback)``. Past ``delta`` and still moving out, step now.
    If ``delta`` is never reached (pivot crossing, or the whole remaining
    trajectory lies outside ``delta``), step as soon as the minimum step
    duration allows.
    """
    t = time_to_position(s, params.c, params.delta, direction=+1)
    if t is not None:
        return t, False
    if s.y >= params.delta and s.vy >= 0.0:
        return 0.0, False
    return max(t_min - phase_time, 0.0), True


def timing_controller(s: ComState, params: GaitParams, width: float, t_min: float,
                      phase_time: float = 0.0) -> StepCommand:
    t, fallback = step_timing(s, params, t_min, phase_time)
    return StepCommand(t, width, fallback)


def full_controller(s: ComState, params: GaitParams, t_min: float,
                    phase_time: float = 0.0) -> StepCommand:
    t, fallback = step_timing(s, params, t_min, phase_time)
    s_x = propagate(s, params.c, t)
    return StepCommand(t, foot_placement_for_apex(s_x, params.c, params.alpha), fallback)


def learning_controller(s: ComState, params: GaitParams, f_hat, t_min: float,
                        phase_time: float = 0.0) -> StepCommand:
    """`full_controller` with the learned step-size error subtracted from F."""
    cmd = full_controller(s, params, t_min, phase_time)
    return StepCommand(cmd.t_remaining, cmd.f - f_hat.query(s), cmd.fallback)


def kalman_gain(c: float, dt: float, noise_std, process_std) -> np.ndarray:
    """Steady-state gain of a Kalman filter on the pendulum with full-state measurement."""
    r = np.diag(np.square(np.asarray(noise_std, dtype=float)))
    if not np.any(r):
        return np.eye(2)
    ch, sh = math.cosh(c * dt), math.sinh(c * dt)
    phi = np.array([[ch, sh / c], [c * sh, ch]])
    q = np.diag(np.square(np.asarray(process_std, dtype=float)))
    p = r.copy()
    for _ in range(2000):
        pp = phi @ p @ phi.T + q
        k = pp @ np.linalg.pinv(pp + r)
        p_new = (np.eye(2) - k) @ pp
        if np.allclose(p_new, p, rtol=1e-12, atol=1e-18):
            break
        p = p_new
    return k


class StateEstimator:
    """Filters delayed, noisy observations and predicts the present state.

    Runs a constant-gain Kalman filter on the measurement timeline. It
    restarts from the raw measurement at every new step and whenever the
    innovation exceeds ``gate`` standard deviations (a push). The filtered
    state is then propagated over the latency; when the support exchange
    falls inside the latency window, the prediction crosses it using the
    commanded placement. With no noise and no delay it is the identity.
    """

    def __init__(self, c: float, dt: float, latency: float, noise_std,
                 process_std=(2e-4, 4e-3), gate: float = 4.0):
        self.c = c
        self.dt = dt
        self.latency = latency
        self.gain = kalman_gain(c, dt, noise_std, process_std)
        self.passthrough = bool(np.allclose(self.gain, np.eye(2)))
        sd = np.asarray(noise_std, dtype=float)
        # innovation spread: measurement noise plus the filter's own error
        self._limit = gate * np.sqrt(sd ** 2 + (np.diag(self.gain) * sd) ** 2)
        self.x: Optional[tuple] = None
        self.step = -1
        self.apex: Optional[float] = None
        self._apex_armed = False

    def reset(self) -> None:
        self.x = None
        self.step = -1

    def filter(self, obs) -> ComState:
        """Fold one observation in; returns the filtered (still delayed) state."""
        apex = None
        new_step = self.x is None or obs.step != self.step
        if new_step:
            self._apex_armed = True
            self.step = obs.step
        if new_step or self.passthrough:
            x = (obs.y, obs.vy)
        else:
            pred = propagate(ComState(*self.x), self.c, self.dt)
            yp, vp = pred.y, pred.vy
            ny, nv = obs.y - yp, obs.vy - vp
            if abs(ny) > self._limit[0] or abs(nv) > self._limit[1]:
                x = (obs.y, obs.vy)
            else:
                k = self.gain
                x = (yp + k[0, 0] * ny + k[0, 1] * nv, vp + k[1, 0] * ny + k[1, 1] * nv)
        if not new_step and self._apex_armed:
            if self.x[1] <= 0.0 < x[1]:
                apex = orbit_apex(x[0], x[1], self.c)
                self._apex_armed = False
        self.x = x
        self.apex = apex
        return ComState(*x)

    def predict(self, step_index: int, phase_time: float, last_f: float) -> ComState:
        """Present-time estimate in the current support frame."""
        s = ComState(*self.x)
        lag = self.latency
        if step_index != self.step and phase_time < lag:
            # the exchange happened inside the latency window
            s = propagate(s, self.c, lag - phase_time)
            s = ComState(last_f - s.y, -s.vy)
            lag = phase_time
        return propagate(s, self.c, lag) if lag > 0.0 else s


def orbit_apex(y: float, vy: float, c: float) -> float:
    """Apex distance of the orbit through (y, vy); y itself if it crosses the pivot."""
    d = y * y - (vy / c) ** 2
    return math.copysign(math.sqrt(d), y) if d > 0.0 else y


def pattern_apex(nominal: Nominal, c: float) -> float:
    """Apex distance of the symmetric pendulum cycle with the given period and width."""
    return 0.5 * nominal.width / math.cosh(0.5 * c * nominal.period)


class OpenLoopGait:
    """Fixed-frequency stepping pattern, including the start from standing.

    From the standing pose (CoM midway between the feet, at rest) the first
    step is taken immediately to the width that leaves the CoM at the
    pattern's apex; the periodic pattern then starts at mid-step. Phase is
    keyed to the plant's step index so the pattern stays consistent within
    a tick that contains an exchange.
    """

    def __init__(self, nominal: Nominal, c: float):
        self.nominal = nominal
        self.c = c
        self.apex = pattern_apex(nominal, c)
        self.start_width = 0.5 * nominal.width + self.apex
        self.starting = True
        self._first_step = -1

    def restart(self) -> None:
        self.starting = True
        self._first_step = -1

    def on_exchange(self, new_step_index: int) -> None:
        if self.starting:
            self.starting = False
            self._first_step = new_step_index

    def _offset(self, step_index: int) -> float:
        return 0.5 * self.nominal.period if step_index == self._first_step else 0.0

    def command(self, phase_time: float, step_index: int) -> StepCommand:
        if self.starting:
            return StepCommand(0.0, self.start_width)
        return open_loop(phase_time + self._offset(step_index), self.nominal)

    def reference(self, phase_time: float, step_index: int):
        """Pattern CoM state (y, vy) at ``phase_time`` into step ``step_index``."""
        tau = self.c * (phase_time + self._offset(step_index) - 0.5 * self.nominal.period)
        return self.apex * math.cosh(tau), self.apex * self.c * math.sinh(tau)


def make_controller(kind: ControllerKind, params: GaitParams, nominal: Nominal, t_min: float,
                    f_hat=None):
    """Return ``fn(observation, phase_time) -> StepCommand`` for a feedback controller."""
    if kind is ControllerKind.TIMING:
        return lambda s, ph: timing_controller(s, params, nominal.width, t_min, ph)
    if kind is ControllerKind.TIMING_STEP:
        return lambda s, ph: full_controller(s, params, t_min, ph)
    if kind is ControllerKind.TIMING_STEP_LEARNING:
        if f_hat is None:
            raise ValueError("learning controller needs an approximator")
        return lambda s, ph: learning_controller(s, params, f_hat, t_min, ph)
    raise ValueError(f"{kind.value!r} is not a feedback controller")

