"""Evaluation of push-experiment logs.

Three artifacts: fall probability over push strength, a phase-space heat map
of the states between a push and the fall it caused, and orbital-energy
excess statistics including the capture-step efficiency. Everything here is
a pure function of the logs; writers emit CSV and SVG.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from capstep.balance import ControllerKind
from capstep.experiment import ExperimentLog
from capstep.learning import GridSpec
from capstep.lipm import ENERGY_EPS

#: Cells visited fewer times than this are masked out of the heat map.
VISIT_THRESHOLD = 10

#: Pushed steps whose excess is below this fraction of |E_nom| are left out of
#: the efficiency: the ratio e1/e0 is then dominated by sensor noise.
EFFICIENCY_FLOOR = 0.5

SERIES_WINDOW = (-0.5, 3.0)
SERIES_RATE = 100.0
STEP_BOXES = 6


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def _write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


# -- fall probability -------------------------------------------------------


@dataclass(frozen=True)
class FallProbabilityTable:
    controller: str
    edges: np.ndarray  # |impulse| bin edges (Ns)
    trials: np.ndarray
    falls: np.ndarray

    @property
    def empty(self) -> np.ndarray:
        return self.trials == 0

    @property
    def probability(self) -> np.ndarray:
        """Falls over trials per bin; NaN where a bin saw no pushes."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.empty, np.nan, self.falls / np.maximum(self.trials, 1))


def fall_probability(log: ExperimentLog, bin_width: float = 1.0) -> FallProbabilityTable:
    if not (bin_width > 0 and math.isfinite(bin_width)):
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    if not log.pushes:
        raise ValueError("no pushes")
    mags = np.abs([p.impulse for p in log.pushes])
    fell = np.array([p.fell for p in log.pushes])
    lo, hi = log.meta.get("config", {}).get("impulse_range", (0.0, float(mags.max())))
    top = max(abs(lo), abs(hi), float(mags.max()))
    n = max(int(math.ceil(top / bin_width - 1e-9)), 1)
    edges = np.arange(n + 1) * bin_width
    idx = np.minimum((mags // bin_width).astype(int), n - 1)
    trials = np.bincount(idx, minlength=n)
    falls = np.bincount(idx, weights=fell, minlength=n).astype(int)
    return FallProbabilityTable(log.controller.value, edges, trials, falls)


def min_falling_impulse(log: ExperimentLog) -> float:
    """Smallest |impulse| that led to a fall; inf when nothing fell."""
    return min((abs(p.impulse) for p in log.pushes if p.fell), default=math.inf)


# -- phase-space heat map ---------------------------------------------------


@dataclass(frozen=True)
class PhaseSpaceHeatmap:
    """Fall-path counts on the (y, vy) lattice of ``grid``.

    ``counts[i, j]`` is the number of falls whose path touched the cell
    around node (i, j); ``visits`` counts every logged state.
    """

    controller: str
    grid: GridSpec
    counts: np.ndarray
    visits: np.ndarray
    c: float
    falls_counted: int

    @property
    def mask(self) -> np.ndarray:
        return self.visits >= VISIT_THRESHOLD

    @property
    def nodes(self):
        return np.linspace(*self.grid.y_bounds, self.grid.ny), np.linspace(*self.grid.vy_bounds, self.grid.nvy)

    @property
    def node_energy(self) -> np.ndarray:
        ys, vs = self.nodes
        return 0.5 * (vs[None, :] ** 2 - self.c ** 2 * ys[:, None] ** 2)

    @property
    def zero_energy_slopes(self) -> tuple:
        """The lines vy = +c*y and vy = -c*y."""
        return (self.c, -self.c)

    @property
    def region_b_fraction(self) -> float:
        total = int(self.counts.sum())
        if total == 0:
            return math.nan
        return float(self.counts[self.node_energy > ENERGY_EPS].sum()) / total


def _cells(grid: GridSpec, y: np.ndarray, vy: np.ndarray):
    """Nearest-node indices of in-bounds states."""
    fy = (y - grid.y_bounds[0]) / (grid.y_bounds[1] - grid.y_bounds[0]) * (grid.ny - 1)
    fv = (vy - grid.vy_bounds[0]) / (grid.vy_bounds[1] - grid.vy_bounds[0]) * (grid.nvy - 1)
    ok = (fy > -0.5) & (fy < grid.ny - 0.5) & (fv > -0.5) & (fv < grid.nvy - 0.5)
    return np.rint(fy[ok]).astype(int), np.rint(fv[ok]).astype(int)


def fall_paths(log: ExperimentLog):
    """Yield ``(push, y, vy)`` from the first frame of each push to the fall it caused.

    Falls without a push in the same window are skipped.
    """
    tk = log.ticks
    seen = set()
    for f in log.falls:
        if f.push < 0 or f.push in seen:
            continue
        seen.add(f.push)
        p = log.pushes[f.push]
        # the tick stamped with the fall time already holds the reset pose
        m = (tk["push"] == f.push) & (tk["time"] >= p.time - 1e-9) & (tk["time"] < f.time - 1e-9)
        yield p, np.append(tk["y"][m], f.y), np.append(tk["vy"][m], f.vy)


def build_heatmap(logs, grid_spec: Optional[GridSpec] = None) -> PhaseSpaceHeatmap:
    """Backtrack every fall to its push; each touched cell counts once per fall."""
    if isinstance(logs, ExperimentLog):
        logs = [logs]
    if not logs:
        raise ValueError("no logs")
    grid = grid_spec or GridSpec()
    c = logs[0].gait.c
    if any(lg.gait.c != c for lg in logs):
        raise ValueError("logs use different pendulum constants")
    counts = np.zeros((grid.ny, grid.nvy), dtype=np.int64)
    visits = np.zeros_like(counts)
    n = 0
    for lg in logs:
        iy, iv = _cells(grid, lg.ticks["y"], lg.ticks["vy"])
        np.add.at(visits, (iy, iv), 1)
        for _, y, vy in fall_paths(lg):
            iy, iv = _cells(grid, y, vy)
            flat = np.unique(iy * grid.nvy + iv)
            counts.flat[flat] += 1
            n += 1
    names = sorted({lg.controller.value for lg in logs})
    return PhaseSpaceHeatmap("+".join(names) if len(names) > 1 else names[0], grid, counts, visits, c, n)


# -- orbital energy ---------------------------------------------------------


@dataclass(frozen=True)
class EnergyStats:
    controller: str
    time: np.ndarray  # seconds relative to the push
    mean: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    n_series: int
    step_boxes: Optional[np.ndarray]  # rows: step after push; cols: n, min, q1, median, q3, max
    efficiency: Optional[float]  # percent
    efficiency_late: Optional[float]  # second half of the pushes
    pairs: int
    pairs_late: int


def tick_excess(log: ExperimentLog) -> np.ndarray:
    """|E - E_nom| of every logged state, with the model c and calibrated alpha."""
    g = log.gait
    y, vy = log.ticks["y"], log.ticks["vy"]
    return np.abs(0.5 * (vy * vy - g.c * g.c * y * y) - g.nominal_energy)


def _push_steps(log: ExperimentLog):
    """Map push index -> list of step records from the pushed step on."""
    ends = np.asarray([st.end for st in log.steps])
    out = {}
    for p in log.pushes:
        if p.fell:
            continue
        i = int(np.searchsorted(ends, p.time, side="right"))
        seq = []
        for st in log.steps[i:]:
            if st.push != p.index:
                break
            seq.append(st)
        out[p.index] = seq
    return out


def efficiency_pairs(log: ExperimentLog, floor: float = EFFICIENCY_FLOOR, first_push: int = 0):
    """``(e0, e1)`` per surviving push: the pushed step's excess and the next step's."""
    e_min = floor * abs(log.gait.nominal_energy)
    pairs = []
    for k, seq in _push_steps(log).items():
        if k < first_push or len(seq) < 2:
            continue
        e0, e1 = seq[0].excess, seq[1].excess
        if e0 >= e_min and e0 > 0.0:
            pairs.append((e0, e1))
    return np.asarray(pairs, dtype=float).reshape(-1, 2)


def capture_efficiency(pairs: np.ndarray) -> float:
    """Mean of ``1 - e1/e0`` in percent; NaN without pairs."""
    if len(pairs) == 0:
        return math.nan
    return float(100.0 * np.mean(1.0 - pairs[:, 1] / pairs[:, 0]))


def energy_stats(log: ExperimentLog, floor: float = EFFICIENCY_FLOOR) -> EnergyStats:
    """Push-aligned excess series for any controller; step view and efficiency for timed ones."""
    if not log.pushes:
        raise ValueError("no pushes")
    excess = tick_excess(log)
    t = log.ticks["time"]
    lo, hi = SERIES_WINDOW
    grid = np.round(np.arange(int(round((hi - lo) * SERIES_RATE)) + 1) / SERIES_RATE + lo, 10)
    rows = []
    for p in log.pushes:
        if p.fell:
            continue
        a = int(np.searchsorted(t, p.time + lo - 1e-9))
        b = int(np.searchsorted(t, p.time + hi + 1e-9, side="right"))
        if b - a < 2 or t[a] > p.time + lo + 1e-6 or t[b - 1] < p.time + hi - 1e-6:
            continue  # window leaves the log or crosses a reset
        rows.append(np.interp(grid, t[a:b] - p.time, excess[a:b]))
    series = np.asarray(rows).reshape(-1, len(grid))
    if len(series):
        mean = series.mean(axis=0)
        q25, q75 = np.percentile(series, [25, 75], axis=0)
    else:
        mean = q25 = q75 = np.full(len(grid), np.nan)

    if log.controller is ControllerKind.NO_FEEDBACK:
        return EnergyStats(log.controller.value, grid, mean, q25, q75, len(series), None, None, None, 0, 0)

    per_step = [[] for _ in range(STEP_BOXES)]
    for seq in _push_steps(log).values():
        for k, st in enumerate(seq[:STEP_BOXES]):
            per_step[k].append(st.excess)
    boxes = np.full((STEP_BOXES, 6), np.nan)
    for k, vals in enumerate(per_step):
        boxes[k, 0] = len(vals)
        if vals:
            boxes[k, 1:] = np.percentile(vals, [0, 25, 50, 75, 100])
    pairs = efficiency_pairs(log, floor)
    late = efficiency_pairs(log, floor, first_push=len(log.pushes) // 2)
    return EnergyStats(log.controller.value, grid, mean, q25, q75, len(series), boxes,
                       capture_efficiency(pairs), capture_efficiency(late), len(pairs), len(late))


# -- writers ----------------------------------------------------------------


def write_fall_probability(tables: Sequence[FallProbabilityTable], out_dir) -> list:
    out_dir = Path(out_dir)
    rows = []
    for tb in tables:
        for i in range(len(tb.trials)):
            rows.append([tb.controller, tb.edges[i], tb.edges[i + 1], tb.trials[i], tb.falls[i],
                         tb.probability[i], bool(tb.empty[i])])
    csv_path = _write_csv(out_dir / "fallprob.csv",
                          ["controller", "bin_lo", "bin_hi", "trials", "falls", "probability", "empty"], rows)
    fig, ax = _figure(1, 1, (6, 4))
    for tb in tables:
        mid = 0.5 * (tb.edges[:-1] + tb.edges[1:])
        ax.plot(mid, tb.probability, marker="o", ms=3, label=_label(tb.controller))
    ax.set_xlabel("push impulse |J| (Ns)")
    ax.set_ylabel("fall probability")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    return [csv_path, _save(fig, out_dir / "fallprob.svg")]


def write_heatmaps(maps: Sequence[PhaseSpaceHeatmap], out_dir) -> list:
    out_dir = Path(out_dir)
    rows, summary = [], []
    for hm in maps:
        ys, vs = hm.nodes
        energy = hm.node_energy
        for i in range(len(ys)):
            for j in range(len(vs)):
                e = energy[i, j]
                region = "0" if abs(e) < ENERGY_EPS else ("A" if e < 0 else "B")
                rows.append([hm.controller, i, j, ys[i], vs[j], hm.counts[i, j], hm.visits[i, j],
                             bool(hm.mask[i, j]), region])
        summary.append([hm.controller, hm.falls_counted, int(hm.counts.sum()), hm.region_b_fraction, hm.c])
    cells = _write_csv(out_dir / "heatmap.csv",
                       ["controller", "iy", "ivy", "y", "vy", "count", "visits", "visited", "region"], rows)
    summ = _write_csv(out_dir / "heatmap_summary.csv",
                      ["controller", "falls", "cell_counts", "region_b_fraction", "c"], summary)

    fig, axes = _figure(1, len(maps), (3.6 * len(maps), 3.6))
    for ax, hm in zip(np.atleast_1d(axes), maps):
        gy, gv = hm.grid.y_bounds, hm.grid.vy_bounds
        shown = np.where(hm.mask, hm.counts, np.nan).T
        dy = 0.5 * (gy[1] - gy[0]) / (hm.grid.ny - 1)
        dv = 0.5 * (gv[1] - gv[0]) / (hm.grid.nvy - 1)
        ax.imshow(shown, origin="lower", aspect="auto", cmap="viridis", interpolation="nearest",
                  extent=(gy[0] - dy, gy[1] + dy, gv[0] - dv, gv[1] + dv))
        yl = np.array(gy)
        for slope in hm.zero_energy_slopes:
            ax.plot(yl, slope * yl, color="w", lw=1.0, ls="--")
        ax.set_xlim(gy[0] - dy, gy[1] + dy)
        ax.set_ylim(gv[0] - dv, gv[1] + dv)
        ax.set_title(_label(hm.controller), fontsize=9)
        ax.set_xlabel("y (m)")
    np.atleast_1d(axes)[0].set_ylabel("vy (m/s)")
    return [cells, summ, _save(fig, out_dir / "heatmap.svg")]


def write_energy(stats: Sequence[EnergyStats], out_dir) -> list:
    out_dir = Path(out_dir)
    series, boxes, eff = [], [], []
    for st in stats:
        for k in range(len(st.time)):
            series.append([st.controller, st.time[k], st.mean[k], st.q25[k], st.q75[k]])
        if st.step_boxes is not None:
            for k, b in enumerate(st.step_boxes):
                boxes.append([st.controller, k, int(b[0]), *b[1:]])
            eff.append([st.controller, st.pairs, st.efficiency, st.pairs_late, st.efficiency_late])
    paths = [
        _write_csv(out_dir / "energy_series.csv", ["controller", "t", "mean", "q25", "q75"], series),
        _write_csv(out_dir / "energy_steps.csv",
                   ["controller", "step", "n", "min", "q1", "median", "q3", "max"], boxes),
        _write_csv(out_dir / "efficiency.csv",
                   ["controller", "pairs", "efficiency", "pairs_late", "efficiency_late"], eff),
    ]
    fig, (top, bottom) = _figure(2, 1, (7, 6))
    for st in stats:
        line, = top.plot(st.time, st.mean, lw=1.2, label=_label(st.controller))
        top.fill_between(st.time, st.q25, st.q75, color=line.get_color(), alpha=0.2, lw=0)
    top.set_xlabel("time since push (s)")
    top.set_ylabel("|E - E_nom| (m²/s²)")
    top.legend(fontsize=8)
    timed = [st for st in stats if st.step_boxes is not None]
    width = 0.8 / max(len(timed), 1)
    colors = {st.controller: ln.get_color() for st, ln in zip(stats, top.get_lines())}
    for n, st in enumerate(timed):
        pos = np.arange(STEP_BOXES) + (n - 0.5 * (len(timed) - 1)) * width
        bxp = [{"whislo": b[1], "q1": b[2], "med": b[3], "q3": b[4], "whishi": b[5], "fliers": []}
               for b in st.step_boxes if b[0] > 0]
        bottom.bxp(bxp, positions=pos[: len(bxp)], widths=0.9 * width, showfliers=False, manage_ticks=False,
                   patch_artist=True, boxprops={"facecolor": colors[st.controller], "alpha": 0.6},
                   medianprops={"color": "k"})
    bottom.set_xticks(np.arange(STEP_BOXES))
    bottom.set_xlabel("step after push")
    bottom.set_ylabel("excess energy (m²/s²)")
    paths.append(_save(fig, out_dir / "energy.svg"))
    return paths


def _label(controller: str) -> str:
    try:
        return ControllerKind(controller).label
    except ValueError:
        return controller


def _figure(rows, cols, size):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "capstep"
    return plt.subplots(rows, cols, figsize=size, squeeze=True, constrained_layout=True)


def _save(fig, path) -> Path:
    import matplotlib.pyplot as plt

    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)
