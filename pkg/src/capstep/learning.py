"""Online step-size error learning on a bilinear grid.

After each step the apex error ``apex_y - alpha`` is spread, scaled by the
learning rate, over the states visited while that step's placement was
being decided. The controller subtracts the learned value from its foot
placement.

Grid file format (CSV)::

    # capstep-grid v1
    y_min,y_max,vy_min,vy_max,ny,nvy,eta
    -0.05,0.25,-0.8,0.8,31,31,0.2
    iy,ivy,value,visits
    0,0,0.0,0
    ...
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from capstep._backend import kernels
from capstep.lipm import ComState

GRID_MAGIC = "# capstep-grid v1"
GRID_HEADER = ["y_min", "y_max", "vy_min", "vy_max", "ny", "nvy", "eta"]
GRID_COLUMNS = ["iy", "ivy", "value", "visits"]


class GridFormatError(ValueError):
    """Malformed grid file; the message names the line and field."""


@dataclass
class GridApproximator:
    """Node values on a uniform ``ny`` x ``nvy`` lattice spanning the bounds.

    Queries and updates outside the bounds are clamped to the boundary.
    """

    y_bounds: tuple = (-0.05, 0.25)
    vy_bounds: tuple = (-0.8, 0.8)
    ny: int = 31
    nvy: int = 31
    eta: float = 0.2
    values: Optional[np.ndarray] = field(default=None, repr=False)
    visits: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.y_bounds = (float(self.y_bounds[0]), float(self.y_bounds[1]))
        self.vy_bounds = (float(self.vy_bounds[0]), float(self.vy_bounds[1]))
        for name, (lo, hi) in (("y_bounds", self.y_bounds), ("vy_bounds", self.vy_bounds)):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"{name} must be finite and ordered, got {(lo, hi)}")
        if self.ny < 2 or self.nvy < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ValueError(f"eta must be positive, got {self.eta}")
        shape = (self.ny, self.nvy)
        if self.values is None:
            self.values = np.zeros(shape)
        if self.visits is None:
            self.visits = np.zeros(shape, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.visits = np.ascontiguousarray(self.visits, dtype=np.int64)
        if self.values.shape != shape or self.visits.shape != shape:
            raise ValueError(f"tables must have shape {shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    def __eq__(self, other):
        if not isinstance(other, GridApproximator):
            return NotImplemented
        return (self.y_bounds == other.y_bounds and self.vy_bounds == other.vy_bounds
                and self.ny == other.ny and self.nvy == other.nvy and self.eta == other.eta
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.visits, other.visits))

    def node(self, iy: int, ivy: int) -> ComState:
        ys = np.linspace(*self.y_bounds, self.ny)
        vs = np.linspace(*self.vy_bounds, self.nvy)
        return ComState(float(ys[iy]), float(vs[ivy]))

    def query(self, s: ComState) -> float:
        return kernels.grid_query(self.values, self.y_bounds[0], self.y_bounds[1],
                                  self.vy_bounds[0], self.vy_bounds[1], s.y, s.vy)

    def scatter(self, s: ComState, amount: float) -> None:
        kernels.grid_scatter(self.values, self.visits, self.y_bounds[0], self.y_bounds[1],
                             self.vy_bounds[0], self.vy_bounds[1], s.y, s.vy, amount)


@dataclass
class StepTrace:
    states: list
    apex_y: Optional[float] = None


def query(g: GridApproximator, s: ComState) -> float:
    return g.query(s)


def end_of_step_update(g: GridApproximator, trace: StepTrace, alpha: float) -> bool:
    """Apply ``f(s_i) += eta * (apex_y - alpha)`` for every state of the trace.

    Returns False (and leaves ``g`` untouched) when the step had no apex.
    """
    if trace.apex_y is None:
        return False
    amount = g.eta * (trace.apex_y - alpha)
    for s in trace.states:
        g.scatter(s, amount)
    return True


class OnlineLearner:
    """Pairs each step's decision states with the apex that follows it.

    The placement chosen during step k is judged at the apex of step k+1.
    A pair is discarded when that apex never comes, when the exchange was
    saturated (clamped placement or timing), or when a push lands between
    the exchange and the apex measurement.
    """

    def __init__(self, grid: GridApproximator, alpha: float, frozen: bool = False):
        self.grid = grid
        self.alpha = alpha
        self.frozen = frozen
        self._current: list = []
        self._pending: Optional[list] = None
        self.updates = 0
        self.skipped_no_apex = 0
        self.skipped_saturated = 0
        self.skipped_disturbed = 0

    def record(self, obs: ComState) -> None:
        self._current.append(obs)

    def on_exchange(self, valid: bool) -> None:
        if self._pending is not None:
            self.skipped_no_apex += 1
        if valid and self._current:
            self._pending = self._current
        else:
            self._pending = None
            if self._current:
                self.skipped_saturated += 1
        self._current = []

    def on_apex(self, apex_y: float) -> None:
        if self._pending is None:
            return
        trace = StepTrace(self._pending, apex_y)
        self._pending = None
        if not self.frozen:
            end_of_step_update(self.grid, trace, self.alpha)
        self.updates += 1

    def on_push(self) -> None:
        # states seen before the push did not decide the coming placement
        self._current = []
        if self._pending is not None:
            self._pending = None
            self.skipped_disturbed += 1

    def on_reset(self) -> None:
        self._current = []
        self._pending = None

    def diagnostics(self) -> dict:
        return {
            "updates": self.updates,
            "skipped_no_apex": self.skipped_no_apex,
            "skipped_saturated": self.skipped_saturated,
            "skipped_disturbed": self.skipped_disturbed,
        }


def save(g: GridApproximator, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(GRID_MAGIC + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADER)
        w.writerow([repr(g.y_bounds[0]), repr(g.y_bounds[1]), repr(g.vy_bounds[0]),
                    repr(g.vy_bounds[1]), g.ny, g.nvy, repr(g.eta)])
        w.writerow(GRID_COLUMNS)
        for iy in range(g.ny):
            for ivy in range(g.nvy):
                w.writerow([iy, ivy, repr(float(g.values[iy, ivy])), int(g.visits[iy, ivy])])
    os.replace(tmp, path)


def load(path) -> GridApproximator:
    """Read a grid file; any defect raises GridFormatError, nothing partial is returned."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise GridFormatError(f"{path}: cannot read ({exc.strerror})") from exc
    lines = text.splitlines()

    def fail(lineno, msg):
        raise GridFormatError(f"{path}:{lineno}: {msg}")

    if not lines or lines[0].strip() != GRID_MAGIC:
        fail(1, f"expected header line {GRID_MAGIC!r}")
    rows = list(csv.reader(lines[1:]))
    if len(rows) < 3:
        fail(len(lines) + 1, "truncated header block")
    if rows[0] != GRID_HEADER:
        fail(2, f"expected columns {','.join(GRID_HEADER)}")
    meta = rows[1]
    if len(meta) != len(GRID_HEADER):
        fail(3, f"expected {len(GRID_HEADER)} fields, got {len(meta)}")
    parsed = {}
    for name, raw in zip(GRID_HEADER, meta):
        try:
            parsed[name] = int(raw) if name in ("ny", "nvy") else float(raw)
        except ValueError:
            fail(3, f"field {name}: cannot parse {raw!r}")
    if rows[2] != GRID_COLUMNS:
        fail(4, f"expected columns {','.join(GRID_COLUMNS)}")
    ny, nvy = parsed["ny"], parsed["nvy"]
    if ny < 2 or nvy < 2:
        fail(3, "field ny/nvy: need at least 2 nodes per axis")
    body = rows[3:]
    if len(body) != ny * nvy:
        fail(len(lines), f"expected {ny * nvy} node rows, found {len(body)} (truncated?)")
    values = np.zeros((ny, nvy))
    visits = np.zeros((ny, nvy), dtype=np.int64)
    seen = np.zeros((ny, nvy), dtype=bool)
    for k, row in enumerate(body):
        lineno = k + 5
        if len(row) != 4:
            fail(lineno, f"expected 4 fields, got {len(row)}")
        try:
            iy, ivy = int(row[0]), int(row[1])
        except ValueError:
            fail(lineno, "field iy/ivy: not an integer")
        if not (0 <= iy < ny and 0 <= ivy < nvy):
            fail(lineno, f"field iy/ivy: index ({iy}, {ivy}) out of range")
        if seen[iy, ivy]:
            fail(lineno, f"duplicate node ({iy}, {ivy})")
        try:
            v = float(row[2])
        except ValueError:
            fail(lineno, f"field value: cannot parse {row[2]!r}")
        if not math.isfinite(v):
            fail(lineno, "field value: not finite")
        try:
            n = int(row[3])
        except ValueError:
            fail(lineno, f"field visits: cannot parse {row[3]!r}")
        values[iy, ivy] = v
        visits[iy, ivy] = n
        seen[iy, ivy] = True
    try:
        return GridApproximator((parsed["y_min"], parsed["y_max"]), (parsed["vy_min"], parsed["vy_max"]),
                                ny, nvy, parsed["eta"], values, visits)
    except ValueError as exc:
        fail(3, str(exc))


@dataclass(frozen=True)
class GridSpec:
    """Shape of a learner grid, as it appears in experiment configs."""

    y_bounds: tuple = (-0.05, 0.25)
    vy_bounds: tuple = (-0.8, 0.8)
    ny: int = 31
    nvy: int = 31
    eta: float = 0.2

    def build(self) -> GridApproximator:
        return GridApproximator(tuple(self.y_bounds), tuple(self.vy_bounds), self.ny, self.nvy, self.eta)

    def to_dict(self) -> dict:
        return {"y_bounds": list(self.y_bounds), "vy_bounds": list(self.vy_bounds),
                "ny": self.ny, "nvy": self.nvy, "eta": self.eta}
