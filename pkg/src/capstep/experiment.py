"""Push-experiment harness.

A run walks on the spot, receives ``n_pushes`` lateral impulses drawn from a
seeded stream, and logs every control tick plus step, push, fall and reset
records. Impulses and push phases depend only on the seed, so runs of
different controllers with the same seed see the same push sequence.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from capstep import __version__
from capstep.balance import ControllerKind, Nominal, OpenLoopGait, StateEstimator, make_controller
from capstep.learning import GridApproximator, GridSpec, OnlineLearner
from capstep.lipm import ComState, GaitParams, orbital_energy
from capstep.plant import ApexReached, Plant, PlantConfig, PushEvent, SupportExchange, side_sign

SCHEMA = "capstep-log"
SCHEMA_VERSION = 1

#: Consecutive falls without an intervening push before the run is abandoned.
MAX_UNPROVOKED_FALLS = 50

#: A step counts as recovered once its excess energy is below this fraction of |E_nom|.
RECOVERY_TOLERANCE = 0.1

COLUMNS = [
    "kind", "push", "time", "side", "y", "vy", "obs_y", "obs_vy", "cmd_t", "cmd_f",
    "exec_f", "impulse", "phase", "start", "apex_y", "apex_time", "excess", "flags",
    "fell", "time_to_fall", "recovery_steps",
]
TICK_FIELDS = ["time", "push", "side", "y", "vy", "obs_y", "obs_vy", "cmd_t", "cmd_f"]


class LogFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    controller: ControllerKind
    gait: GaitParams
    nominal: Nominal
    n_pushes: int = 400
    impulse_range: tuple = (-9.0, 9.0)
    seed: int = 0
    plant: PlantConfig = field(default_factory=PlantConfig)
    grid: GridSpec = field(default_factory=GridSpec)
    freeze_learning: bool = False
    initial_side: str = "right"

    def validate(self) -> None:
        if self.n_pushes <= 0:
            raise ValueError("experiment.n_pushes: must be positive")
        lo, hi = self.impulse_range
        if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
            raise ValueError("experiment.impulse_range: must be finite and ordered")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("experiment.seed: must be a 64-bit unsigned integer")
        side_sign(self.initial_side)
        self.plant.validate(self.gait.alpha)

    def to_dict(self) -> dict:
        plant = asdict(self.plant)
        plant["sensor_noise_std"] = list(plant["sensor_noise_std"])
        return {
            "controller": self.controller.value,
            "gait": {"alpha": self.gait.alpha, "delta": self.gait.delta, "c": self.gait.c},
            "nominal": {"period": self.nominal.period, "width": self.nominal.width},
            "n_pushes": self.n_pushes,
            "impulse_range": list(self.impulse_range),
            "seed": self.seed,
            "plant": plant,
            "grid": self.grid.to_dict(),
            "freeze_learning": self.freeze_learning,
            "initial_side": self.initial_side,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class PushRecord:
    index: int
    impulse: float
    time: float
    phase: float
    side: str
    y: float
    vy: float
    fell: bool = False
    time_to_fall: float = math.nan
    recovery_steps: int = -1


@dataclass
class StepRecord:
    push: int
    start: float
    end: float
    side: str
    y: float  # pre-exchange state, support frame
    vy: float
    cmd_f: float
    exec_f: float
    apex_y: float
    apex_time: float
    excess: float
    flags: str


@dataclass
class FallRecord:
    push: int
    time: float
    side: str
    y: float
    vy: float


@dataclass
class ExperimentLog:
    meta: dict
    ticks: dict
    pushes: list
    steps: list
    falls: list
    resets: list
    grid: Optional[GridApproximator] = None

    @property
    def controller(self) -> ControllerKind:
        return ControllerKind(self.meta["controller"])

    @property
    def gait(self) -> GaitParams:
        g = self.meta["gait"]
        return GaitParams(g["alpha"], g["delta"], g["c"])

    @property
    def fall_count(self) -> int:
        return sum(1 for p in self.pushes if p.fell)


def _push_schedule(cfg: ExperimentConfig):
    push_seq, noise_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    push_rng = np.random.default_rng(push_seq)
    lo, hi = cfg.impulse_range
    impulses = push_rng.uniform(lo, hi, cfg.n_pushes)
    phases = push_rng.uniform(0.0, 1.0, cfg.n_pushes)
    if cfg.initial_side != "right":
        # mirrored scenario: same magnitudes, mirrored directions
        impulses = -impulses
    return impulses, phases, np.random.default_rng(noise_seq)


def run_experiment(cfg: ExperimentConfig, grid: Optional[GridApproximator] = None) -> ExperimentLog:
    """Execute the push protocol; deterministic for a given config."""
    cfg.validate()
    kind = cfg.controller
    gait = cfg.gait
    nominal = cfg.nominal
    pc = cfg.plant
    impulses, phases, noise_rng = _push_schedule(cfg)

    plant = Plant(pc, rng=noise_rng, initial_side=cfg.initial_side)
    dt = plant.dt
    starter = OpenLoopGait(nominal, gait.c)
    open_loop = kind is ControllerKind.NO_FEEDBACK
    learner = None
    if kind is ControllerKind.TIMING_STEP_LEARNING:
        if grid is None:
            grid = cfg.grid.build()
        learner = OnlineLearner(grid, gait.alpha, frozen=cfg.freeze_learning)
    controller = None if open_loop else make_controller(kind, gait, nominal, pc.t_min, grid)
    e_nom = gait.nominal_energy
    estimator = StateEstimator(gait.c, dt, pc.latency, pc.sensor_noise_std)
    # the motion generator's own orbit; the ankle defends it once timing is closed-loop
    ankle_energy = -0.5 * (pc.c_plant * starter.apex) ** 2

    cols = {name: [] for name in TICK_FIELDS}
    pushes: list = []
    steps: list = []
    falls: list = []
    resets: list = [0.0]
    spontaneous = 0
    unprovoked = 0

    plant.reset(nominal.width)
    next_push = 0
    current = -1
    window_start = 0.0
    mode = "recover"  # recover -> await_exchange -> countdown
    push_at = math.inf
    last_exchange = 0.0
    step_start = 0.0
    step_apex = (math.nan, math.nan)
    step_push_time = -math.inf
    last_f = nominal.width

    while True:
        s = plant.state
        now = s.sim_time
        if mode == "recover" and now >= window_start + pc.recovery_time - 1e-9:
            if next_push >= cfg.n_pushes:
                break
            mode = "await_exchange"
        if mode == "countdown" and now >= push_at - 1e-9:
            k = next_push
            plant.apply_push(PushEvent(float(impulses[k]), now))
            s = plant.state
            pushes.append(PushRecord(k, float(impulses[k]), now, (now - last_exchange) / nominal.period,
                                     s.side, s.y, s.vy))
            current = k
            next_push += 1
            window_start = now
            mode = "recover"
            step_push_time = now
            unprovoked = 0
            if learner is not None:
                learner.on_push()

        obs = plant.observe()
        estimator.filter(obs)
        if learner is not None and estimator.apex is not None and estimator.step == s.step_index:
            learner.on_apex(estimator.apex)
        if starter.starting or open_loop:
            cmd = starter.command(s.phase_time, s.step_index)
        else:
            est = estimator.predict(s.step_index, s.phase_time, last_f)
            cmd = controller(est, s.phase_time)
            if learner is not None:
                learner.record(est)
        last_f = cmd.f
        reference = None
        energy_target = None
        if not starter.starting:
            if open_loop:
                reference = starter.reference
            else:
                energy_target = ankle_energy

        cols["time"].append(now)
        cols["push"].append(current)
        cols["side"].append(1 if s.side == "right" else -1)
        cols["y"].append(s.y)
        cols["vy"].append(s.vy)
        cols["obs_y"].append(obs.y)
        cols["obs_vy"].append(obs.vy)
        cols["cmd_t"].append(cmd.t_remaining)
        cols["cmd_f"].append(cmd.f)

        was_starting = starter.starting
        for ev in plant.tick(cmd, reference, energy_target):
            if isinstance(ev, ApexReached):
                step_apex = (ev.apex_y, ev.time)
            elif isinstance(ev, SupportExchange):
                apex_y, apex_time = step_apex
                if apex_y == apex_y and apex_time >= step_push_time:
                    sample = ComState(apex_y, 0.0)
                else:
                    sample = ComState(ev.y, ev.vy)
                flags = []
                if was_starting:
                    flags.append("start")
                if ev.clamped:
                    flags.append("clamped")
                if ev.timing_clamped:
                    flags.append("timing_clamped")
                if cmd.fallback:
                    flags.append("fallback")
                steps.append(StepRecord(
                    current, step_start, ev.time, ev.side, ev.y, ev.vy, ev.commanded_f,
                    ev.executed_f, apex_y, apex_time, abs(orbital_energy(sample, gait.c) - e_nom),
                    "|".join(flags)))
                if learner is not None:
                    learner.on_exchange(not (was_starting or ev.clamped or ev.timing_clamped))
                starter.on_exchange(plant.state.step_index)
                last_exchange = step_start = ev.time
                step_apex = (math.nan, math.nan)
                step_push_time = -math.inf
                if mode == "await_exchange":
                    mode = "countdown"
                    push_at = ev.time + float(phases[next_push]) * nominal.period

        fell = plant.detect_fall_and_reset(nominal.width)
        if fell is not None:
            falls.append(FallRecord(current, fell.time, fell.side, fell.y, fell.vy))
            if current >= 0 and not pushes[current].fell:
                pushes[current].fell = True
                pushes[current].time_to_fall = fell.time - pushes[current].time
            else:
                spontaneous += 1
                unprovoked += 1
                if unprovoked > MAX_UNPROVOKED_FALLS:
                    raise RuntimeError(f"{kind.value}: walker keeps falling without being pushed "
                                       f"(t = {fell.time:.2f} s); check the gait parameters")
            resets.append(fell.time)
            starter.restart()
            estimator.reset()
            if learner is not None:
                learner.on_reset()
            window_start = fell.time
            mode = "recover"
            step_start = fell.time
            step_apex = (math.nan, math.nan)
            step_push_time = -math.inf

    ticks = {
        "time": np.asarray(cols["time"]),
        "push": np.asarray(cols["push"], dtype=np.int64),
        "side": np.asarray(cols["side"], dtype=np.int8),
    }
    for name in TICK_FIELDS[3:]:
        ticks[name] = np.asarray(cols[name])
    _fill_recovery(pushes, steps, e_nom)
    meta = {
        "schema": SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "code_version": __version__,
        "controller": kind.value,
        "seed": cfg.seed,
        "n_pushes": cfg.n_pushes,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "gait": {"alpha": gait.alpha, "delta": gait.delta, "c": gait.c},
        "nominal": {"period": nominal.period, "width": nominal.width},
        "dt": dt,
        "falls": sum(1 for p in pushes if p.fell),
        "spontaneous_falls": spontaneous,
        "learner": learner.diagnostics() if learner is not None else None,
    }
    return ExperimentLog(meta, ticks, pushes, steps, falls, resets, grid)


def _fill_recovery(pushes, steps, e_nom) -> None:
    tol = RECOVERY_TOLERANCE * abs(e_nom)
    ends = np.asarray([st.end for st in steps]) if steps else np.zeros(0)
    for p in pushes:
        if p.fell:
            continue
        i = int(np.searchsorted(ends, p.time, side="right"))
        for n, st in enumerate(steps[i + 1:], start=1):
            if st.push != p.index:
                break
            if st.excess <= tol:
                p.recovery_steps = n
                break


# -- serialization ---------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def _rows(log: ExperimentLog):
    for p in log.pushes:
        yield {"kind": "push", "push": p.index, "time": p.time, "side": p.side, "y": p.y, "vy": p.vy,
               "impulse": p.impulse, "phase": p.phase, "fell": p.fell,
               "time_to_fall": p.time_to_fall, "recovery_steps": p.recovery_steps}
    for st in log.steps:
        yield {"kind": "step", "push": st.push, "time": st.end, "start": st.start, "side": st.side,
               "y": st.y, "vy": st.vy, "cmd_f": st.cmd_f, "exec_f": st.exec_f, "apex_y": st.apex_y,
               "apex_time": st.apex_time, "excess": st.excess, "flags": st.flags}
    for f in log.falls:
        yield {"kind": "fall", "push": f.push, "time": f.time, "side": f.side, "y": f.y, "vy": f.vy}
    for t in log.resets:
        yield {"kind": "reset", "time": t}
    tk = log.ticks
    sides = {1: "right", -1: "left"}
    for i in range(len(tk["time"])):
        yield {"kind": "tick", "push": tk["push"][i], "time": tk["time"][i], "side": sides[int(tk["side"][i])],
               "y": tk["y"][i], "vy": tk["vy"][i], "obs_y": tk["obs_y"][i], "obs_vy": tk["obs_vy"][i],
               "cmd_t": tk["cmd_t"][i], "cmd_f": tk["cmd_f"][i]}


def log_paths(stem) -> dict:
    stem = Path(stem)
    return {"csv": stem.with_name(stem.name + ".csv"), "meta": stem.with_name(stem.name + ".json"),
            "grid": stem.with_name(stem.name + ".grid")}


def write_log(log: ExperimentLog, stem, compress: bool = False) -> Path:
    """Write ``<stem>.csv`` (or ``.csv.gz``) and the ``<stem>.json`` sidecar."""
    from capstep.learning import save as save_grid

    paths = log_paths(stem)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in _rows(log):
        w.writerow([_fmt(row[c]) if c in row else "" for c in COLUMNS])
    data = buf.getvalue().encode()
    csv_path = paths["csv"]
    if compress:
        csv_path = csv_path.with_name(csv_path.name + ".gz")
        with open(csv_path, "wb") as raw:
            with gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz:
                gz.write(data)
    else:
        csv_path.write_bytes(data)
    paths["meta"].write_text(json.dumps(log.meta, indent=2, sort_keys=True) + "\n")
    if log.grid is not None:
        save_grid(log.grid, paths["grid"])
    return csv_path


def _stem_of(csv_path: Path) -> Path:
    name = csv_path.name
    for suffix in (".csv.gz", ".csv"):
        if name.endswith(suffix):
            return csv_path.with_name(name[: -len(suffix)])
    raise LogFormatError(f"{csv_path}: expected a .csv or .csv.gz log")


def read_log(csv_path) -> ExperimentLog:
    """Load a log written by `write_log`; the JSON sidecar must sit next to it."""
    csv_path = Path(csv_path)
    stem = _stem_of(csv_path)
    meta_path = log_paths(stem)["meta"]
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError:
        raise LogFormatError(f"{csv_path}: metadata sidecar {meta_path.name} not found") from None
    except json.JSONDecodeError as exc:
        raise LogFormatError(f"{meta_path}: invalid JSON ({exc})") from None
    if meta.get("schema") != SCHEMA:
        raise LogFormatError(f"{meta_path}: not a {SCHEMA} file")
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise LogFormatError(f"{meta_path}: schema version {meta.get('schema_version')} "
                             f"not supported (expected {SCHEMA_VERSION})")
    opener = gzip.open if csv_path.name.endswith(".gz") else open
    try:
        with opener(csv_path, "rt", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != COLUMNS:
                raise LogFormatError(f"{csv_path}: unexpected header")
            rows = list(reader)
    except OSError as exc:
        raise LogFormatError(f"{csv_path}: cannot read ({exc})") from None

    def num(v):
        return float(v) if v != "" else math.nan

    ix = {c: i for i, c in enumerate(COLUMNS)}
    pushes, steps, falls, resets = [], [], [], []
    cols = {name: [] for name in TICK_FIELDS}
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(COLUMNS):
            raise LogFormatError(f"{csv_path}:{lineno}: expected {len(COLUMNS)} fields, got {len(r)}")
        try:
            kind = r[0]
            if kind == "tick":
                cols["time"].append(float(r[ix["time"]]))
                cols["push"].append(int(r[ix["push"]]))
                cols["side"].append(1 if r[ix["side"]] == "right" else -1)
                for name in ("y", "vy", "obs_y", "obs_vy", "cmd_t", "cmd_f"):
                    cols[name].append(float(r[ix[name]]))
            elif kind == "push":
                pushes.append(PushRecord(int(r[ix["push"]]), float(r[ix["impulse"]]), float(r[ix["time"]]),
                                         float(r[ix["phase"]]), r[ix["side"]], float(r[ix["y"]]),
                                         float(r[ix["vy"]]), r[ix["fell"]] == "1",
                                         num(r[ix["time_to_fall"]]), int(r[ix["recovery_steps"]])))
            elif kind == "step":
                steps.append(StepRecord(int(r[ix["push"]]), float(r[ix["start"]]), float(r[ix["time"]]),
                                        r[ix["side"]], float(r[ix["y"]]), float(r[ix["vy"]]),
                                        float(r[ix["cmd_f"]]), float(r[ix["exec_f"]]), num(r[ix["apex_y"]]),
                                        num(r[ix["apex_time"]]), float(r[ix["excess"]]), r[ix["flags"]]))
            elif kind == "fall":
                falls.append(FallRecord(int(r[ix["push"]]), float(r[ix["time"]]), r[ix["side"]],
                                        float(r[ix["y"]]), float(r[ix["vy"]])))
            elif kind == "reset":
                resets.append(float(r[ix["time"]]))
            else:
                raise LogFormatError(f"{csv_path}:{lineno}: unknown record kind {kind!r}")
        except ValueError as exc:
            if isinstance(exc, LogFormatError):
                raise
            raise LogFormatError(f"{csv_path}:{lineno}: {exc}") from None
    ticks = {"time": np.asarray(cols["time"]), "push": np.asarray(cols["push"], dtype=np.int64),
             "side": np.asarray(cols["side"], dtype=np.int8)}
    for name in TICK_FIELDS[3:]:
        ticks[name] = np.asarray(cols[name])
    grid = None
    grid_path = log_paths(stem)["grid"]
    if grid_path.exists():
        from capstep.learning import load as load_grid
        grid = load_grid(grid_path)
    return ExperimentLog(meta, ticks, pushes, steps, falls, resets, grid)
