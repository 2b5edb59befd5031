"""Simulated lateral biped.

The plant is a point-mass pendulum over the support foot, integrated in
closed form tick by tick. Support exchange happens at the commanded time
inside the tick (sub-tick exact), so an ideal plant reproduces the model to
rounding error. Everything that makes the real robot differ from the model
is an explicit knob in `PlantConfig`.

The foot has a small passive CoP range. When a motion pattern is supplied
(`tick(..., reference=...)`), stiff joints tracking that pattern shift the
CoP toward the CoM deviation, saturating at ``cop_limit``. Feedback
controllers have no pattern; they may pass an orbital energy target instead,
which the ankle holds within a dead band. With neither the foot acts as a
point pivot.

``c_plant`` is the plant's own pendulum constant and by default differs from
the controllers' model value.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from capstep._backend import kernels
from capstep.lipm import DEFAULT_C, ComState, check_pendulum_constant

RIGHT = "right"
LEFT = "left"


def other_side(side: str) -> str:
    return LEFT if side == RIGHT else RIGHT


def side_sign(side: str) -> float:
    """+1 for right support: the swing (left) side is world +y."""
    if side == RIGHT:
        return 1.0
    if side == LEFT:
        return -1.0
    raise ValueError(f"unknown support side {side!r}")


@dataclass(frozen=True)
class PlantConfig:
    mass: float = 13.5
    c_plant: float = 3.0
    actuation_bias: float = 0.01
    actuation_scale: float = 0.95
    actuation_noise_std: float = 0.0
    sensor_noise_std: tuple = (0.002, 0.01)
    latency: float = 0.02
    f_min: float = 0.08
    f_max: float = 0.40
    t_min: float = 0.1
    y_fall: float = 0.35
    recovery_time: float = 5.0
    control_rate: float = 100.0
    cop_limit: float = 0.02
    ankle_kp: float = 2.0
    ankle_kd: float = 0.4
    ankle_ke: float = 4.0
    ankle_band: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, "sensor_noise_std", tuple(float(x) for x in self.sensor_noise_std))

    @classmethod
    def ideal(cls, **overrides) -> "PlantConfig":
        """No mismatch: model pendulum constant, exact actuation, perfect sensing, no delay."""
        base = dict(c_plant=DEFAULT_C, actuation_bias=0.0, actuation_scale=1.0, actuation_noise_std=0.0,
                    sensor_noise_std=(0.0, 0.0), latency=0.0)
        base.update(overrides)
        return cls(**base)

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate

    @property
    def latency_ticks(self) -> int:
        return int(round(self.latency * self.control_rate))

    def validate(self, alpha: Optional[float] = None) -> None:
        """Raise ValueError naming the first offending field."""
        def bad(name, why):
            raise ValueError(f"plant.{name}: {why}")

        for name in ("mass", "c_plant", "actuation_bias", "actuation_scale", "actuation_noise_std",
                     "latency", "f_min", "f_max", "t_min", "y_fall", "recovery_time",
                     "control_rate", "cop_limit", "ankle_kp", "ankle_kd", "ankle_ke", "ankle_band"):
            if not math.isfinite(getattr(self, name)):
                bad(name, "must be finite")
        if self.mass <= 0:
            bad("mass", "must be positive")
        try:
            check_pendulum_constant(self.c_plant)
        except ValueError as exc:
            bad("c_plant", str(exc))
        if self.t_min <= 0:
            bad("t_min", "must be positive")
        if self.f_min >= self.f_max:
            bad("f_min", "must be smaller than f_max")
        if self.control_rate <= 0:
            bad("control_rate", "must be positive")
        if self.latency < 0:
            bad("latency", "must be non-negative")
        if self.actuation_noise_std < 0:
            bad("actuation_noise_std", "must be non-negative")
        if len(self.sensor_noise_std) != 2 or min(self.sensor_noise_std) < 0:
            bad("sensor_noise_std", "must be two non-negative numbers")
        if self.cop_limit < 0:
            bad("cop_limit", "must be non-negative")
        if self.ankle_band < 0:
            bad("ankle_band", "must be non-negative")
        if self.recovery_time <= 0:
            bad("recovery_time", "must be positive")
        if alpha is not None and self.y_fall <= 3.0 * alpha:
            bad("y_fall", f"must exceed 3*alpha = {3.0 * alpha:.4f}")


@dataclass(frozen=True)
class Observation(ComState):
    """Sensed CoM state plus the index of the step it was measured in."""

    step: int = 0


@dataclass
class PlantState:
    """Support side, CoM state in the support frame, and bookkeeping.

    ``y``/``vy`` are canonical (support-frame, sign-flipped for left support);
    world coordinates are derived.
    """

    side: str
    y: float
    vy: float
    foot_y_world: float
    sim_time: float = 0.0
    step_index: int = 0
    phase_time: float = 0.0
    standing: bool = False
    apex_seen: bool = False

    @property
    def y_world(self) -> float:
        return self.foot_y_world + side_sign(self.side) * self.y

    @property
    def vy_world(self) -> float:
        return side_sign(self.side) * self.vy

    def com(self) -> ComState:
        return ComState(self.y, self.vy)


@dataclass(frozen=True)
class PushEvent:
    impulse: float  # N s, world frame, +y is left
    apply_time: float


@dataclass(frozen=True)
class ApexReached:
    time: float
    apex_y: float


@dataclass(frozen=True)
class SupportExchange:
    time: float
    side: str  # support side that just ended
    y: float  # pre-exchange CoM in the old support frame
    vy: float
    commanded_f: float
    executed_f: float
    clamped: bool
    timing_clamped: bool
    duration: float


@dataclass(frozen=True)
class Fell:
    time: float
    side: str
    y: float
    vy: float


def apply_push(state: PlantState, event: PushEvent, mass: float) -> PlantState:
    """Instantaneous velocity change ``impulse / mass`` along world y."""
    if event.impulse == 0.0:
        return replace(state)
    return replace(state, vy=state.vy + side_sign(state.side) * (event.impulse / mass))


def is_fallen(state: PlantState, y_fall: float, c: float) -> bool:
    """Past ``y_fall`` on a pivot-crossing orbit.

    A slow runaway toward the swing side (negative orbital energy) is not a
    fall yet: the next touchdown still intercepts it.
    """
    return abs(state.y) > y_fall and state.vy * state.vy > c * c * state.y * state.y


Reference = Callable[[float, int], tuple]


class Plant:
    """One simulated walker. Not thread-safe; use one instance per run."""

    def __init__(self, config: PlantConfig, rng: Optional[np.random.Generator] = None,
                 initial_side: str = RIGHT):
        side_sign(initial_side)
        self.config = config
        self.dt = config.dt
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.initial_side = initial_side
        self._ticks = 0
        self._delay = config.latency_ticks
        self._buffer: deque = deque(maxlen=self._delay + 1)
        self._energy_target: Optional[float] = None
        self.state = PlantState(initial_side, 0.0, 0.0, 0.0)

    # -- lifecycle -----------------------------------------------------

    def reset(self, width: float) -> PlantState:
        """Standing pose: CoM midway between feet ``width`` apart, at rest."""
        sign = side_sign(self.initial_side)
        self.state = PlantState(
            side=self.initial_side,
            y=0.5 * width,
            vy=0.0,
            foot_y_world=-sign * 0.5 * width,
            sim_time=self._ticks * self.dt,
            standing=True,
        )
        self._buffer.clear()
        for _ in range(self._delay):
            self._buffer.append((self.state.y, self.state.vy, self.state.step_index))
        return self.state

    def detect_fall_and_reset(self, width: float) -> Optional[Fell]:
        """Declare a fall (see `is_fallen`) and reset to standing."""
        s = self.state
        if not is_fallen(s, self.config.y_fall, self.config.c_plant):
            return None
        fell = Fell(s.sim_time, s.side, s.y, s.vy)
        self.reset(width)
        return fell

    # -- inputs --------------------------------------------------------

    def apply_push(self, event: PushEvent) -> None:
        self.state = apply_push(self.state, event, self.config.mass)

    def observe(self) -> Observation:
        """Canonical CoM state from ``latency`` ago, plus sensor noise."""
        s = self.state
        self._buffer.append((s.y, s.vy, s.step_index))
        y, vy, step = self._buffer[0]
        sy, sv = self.config.sensor_noise_std
        if sy > 0.0:
            y += self.rng.normal(0.0, sy)
        if sv > 0.0:
            vy += self.rng.normal(0.0, sv)
        return Observation(y, vy, step)

    # -- dynamics ------------------------------------------------------

    def tick(self, command, reference: Optional[Reference] = None,
             energy_target: Optional[float] = None) -> list:
        """Advance one control period under ``command`` (a StepCommand).

        Returns the events raised during the tick: ApexReached,
        SupportExchange, Fell (the latter without resetting).
        """
        s = self.state
        cfg = self.config
        dt = self.dt
        events: list = []
        self._energy_target = energy_target
        t_x = command.t_remaining if command.t_remaining > 0.0 else 0.0
        timing_clamped = False
        if not s.standing and s.phase_time + t_x < cfg.t_min:
            t_x = cfg.t_min - s.phase_time
            timing_clamped = True
        t0 = self._ticks * dt
        if t_x < dt:
            self._advance(t_x, reference, t0, events)
            self._exchange(command.f, timing_clamped, t0 + t_x, events)
            self._advance(dt - t_x, reference, t0 + t_x, events)
        else:
            self._advance(dt, reference, t0, events)
        self._ticks += 1
        s = self.state
        s.sim_time = self._ticks * dt
        if is_fallen(s, cfg.y_fall, cfg.c_plant):
            events.append(Fell(s.sim_time, s.side, s.y, s.vy))
        return events

    def cop(self, reference: Optional[Reference] = None, energy_target: Optional[float] = None) -> float:
        """CoP offset from the foot pivot produced by the stance ankle.

        With a motion pattern the ankle tracks it. With only an energy target
        it pushes the orbital energy back once the deviation leaves a dead
        band of ``ankle_band * |target|``. Otherwise the foot is a point.
        """
        cfg = self.config
        if cfg.cop_limit == 0.0:
            return 0.0
        s = self.state
        if reference is not None:
            y_ref, v_ref = reference(s.phase_time, s.step_index)
            p = cfg.ankle_kp * (s.y - y_ref) + cfg.ankle_kd * (s.vy - v_ref)
        elif energy_target is not None:
            dev = 0.5 * (s.vy * s.vy - cfg.c_plant * cfg.c_plant * s.y * s.y) - energy_target
            band = cfg.ankle_band * abs(energy_target)
            if -band <= dev <= band:
                return 0.0
            dev = dev - band if dev > 0.0 else dev + band
            # dE/dt = -c^2 p vy, so p ~ dev * vy always bleeds the deviation
            p = cfg.ankle_ke * dev * s.vy
        else:
            return 0.0
        lim = cfg.cop_limit
        return lim if p > lim else (-lim if p < -lim else p)

    def _advance(self, t: float, reference, t0: float, events: list) -> None:
        if t <= 0.0:
            return
        s = self.state
        c = self.config.c_plant
        p = self.cop(reference, self._energy_target)
        if not s.apex_seen:
            apex = kernels.segment_apex(s.y, s.vy, c, p, t)
            if apex == apex:
                u = s.y - p
                t_star = math.atanh(-s.vy / (c * u)) / c
                events.append(ApexReached(t0 + t_star, apex))
                s.apex_seen = True
        if p == 0.0:
            s.y, s.vy = kernels.propagate(s.y, s.vy, c, t)
        else:
            u, s.vy = kernels.propagate(s.y - p, s.vy, c, t)
            s.y = u + p
        s.phase_time += t

    def _exchange(self, f_cmd: float, timing_clamped: bool, time: float, events: list) -> None:
        s = self.state
        cfg = self.config
        f = cfg.actuation_scale * f_cmd + cfg.actuation_bias
        if cfg.actuation_noise_std > 0.0:
            f += self.rng.normal(0.0, cfg.actuation_noise_std)
        f_exec = min(max(f, cfg.f_min), cfg.f_max)
        events.append(SupportExchange(
            time=time, side=s.side, y=s.y, vy=s.vy, commanded_f=f_cmd, executed_f=f_exec,
            clamped=f_exec != f, timing_clamped=timing_clamped, duration=s.phase_time,
        ))
        s.foot_y_world += side_sign(s.side) * f_exec
        s.y = f_exec - s.y
        s.vy = -s.vy
        s.side = other_side(s.side)
        s.phase_time = 0.0
        s.step_index += 1
        s.standing = False
        s.apex_seen = False
