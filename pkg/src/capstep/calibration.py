"""Identify the gait parameters from undisturbed open-loop walking."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from capstep.balance import Nominal, OpenLoopGait
from capstep.lipm import DEFAULT_C, GaitParams
from capstep.plant import ApexReached, Plant, PlantConfig, SupportExchange

DEFAULT_NOMINAL = Nominal(period=0.45, width=0.22)
TRANSIENT_FRACTION = 0.25
MAX_APEX_SPREAD = 0.2


class NoLimitCycle(RuntimeError):
    pass


@dataclass(frozen=True)
class CalibrationResult:
    gait: GaitParams
    nominal: Nominal  # commanded open-loop pattern
    measured: Nominal  # mean executed period and width
    apex_std: float
    steps_used: int

    def to_dict(self) -> dict:
        return {
            "alpha": self.gait.alpha,
            "delta": self.gait.delta,
            "c": self.gait.c,
            "period": self.nominal.period,
            "width": self.nominal.width,
            "measured_period": self.measured.period,
            "measured_width": self.measured.width,
            "apex_std": self.apex_std,
            "steps_used": self.steps_used,
        }

    @classmethod
    def from_dict(cls, d: dict, source: str = "gait params") -> "CalibrationResult":
        for key in ("alpha", "delta", "c", "period", "width"):
            if key not in d:
                raise ValueError(f"{source}: missing field {key!r}")
            if not isinstance(d[key], (int, float)) or not math.isfinite(d[key]):
                raise ValueError(f"{source}: field {key!r} must be a finite number")
        gait = GaitParams(float(d["alpha"]), float(d["delta"]), float(d["c"]))
        nominal = Nominal(float(d["period"]), float(d["width"]))
        measured = Nominal(float(d.get("measured_period", nominal.period)),
                           float(d.get("measured_width", nominal.width)))
        return cls(gait, nominal, measured, float(d.get("apex_std", 0.0)), int(d.get("steps_used", 0)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "CalibrationResult":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: cannot read gait params ({exc})") from exc
        if not isinstance(data, dict):
            raise ValueError(f"{path}: expected a JSON object")
        return cls.from_dict(data, str(path))


def calibrate(plant_config: PlantConfig, nominal: Nominal = DEFAULT_NOMINAL, n_steps: int = 100,
              seed: int = 0, model_c: float = DEFAULT_C, initial_side: str = "right") -> CalibrationResult:
    """Walk open loop for ``n_steps`` and average apex and exchange positions.

    The first quarter of the steps is discarded as transient. Raises
    NoLimitCycle if the walker falls, a step has no apex, or the apex
    distance still varies by more than 20% of its mean over the last half.
    """
    if n_steps < 20:
        raise ValueError(f"n_steps must be at least 20, got {n_steps}")
    plant = Plant(plant_config, rng=np.random.default_rng(seed), initial_side=initial_side)
    gait = OpenLoopGait(nominal, model_c)
    plant.reset(nominal.width)

    apexes: list = []
    exchanges: list = []
    durations: list = []
    widths: list = []
    step_apex = math.nan
    max_ticks = int((n_steps + 2) * 4 * nominal.period * plant_config.control_rate) + 100
    for _ in range(max_ticks):
        cmd = gait.command(plant.state.phase_time, plant.state.step_index)
        events = plant.tick(cmd, reference=None if gait.starting else gait.reference)
        for ev in events:
            if isinstance(ev, ApexReached):
                step_apex = ev.apex_y
            elif isinstance(ev, SupportExchange):
                if not gait.starting:
                    if math.isnan(step_apex):
                        raise NoLimitCycle(f"step {len(apexes)} had no apex")
                    apexes.append(step_apex)
                    exchanges.append(abs(ev.y))
                    durations.append(ev.duration)
                    widths.append(ev.executed_f)
                gait.on_exchange(plant.state.step_index)
                step_apex = math.nan
        if plant.detect_fall_and_reset(nominal.width) is not None:
            raise NoLimitCycle(f"fell after {len(apexes)} open-loop steps")
        if len(apexes) >= n_steps:
            break
    else:
        raise NoLimitCycle(f"only {len(apexes)} of {n_steps} steps completed")

    k0 = int(math.ceil(TRANSIENT_FRACTION * n_steps))
    tail = np.asarray(apexes[n_steps // 2:])
    spread = float(tail.std())
    if spread > MAX_APEX_SPREAD * float(tail.mean()):
        raise NoLimitCycle(f"apex std {spread:.4g} exceeds {MAX_APEX_SPREAD:.0%} of its mean")
    alpha = float(np.mean(apexes[k0:]))
    delta = float(np.mean(exchanges[k0:]))
    try:
        params = GaitParams(alpha, delta, model_c)
    except ValueError as exc:
        raise NoLimitCycle(str(exc)) from exc
    measured = Nominal(float(np.mean(durations[k0:])), float(np.mean(widths[k0:])))
    return CalibrationResult(params, nominal, measured, spread, n_steps - k0)
