"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--number 20000] [--pushes 40]

Per-call timings for each kernel, then one short push experiment per
backend (each in a fresh interpreter, since the backend is fixed at import).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from capstep import _kernels_py

try:
    from capstep import _kernels
except ImportError:
    _kernels = None

CALLS = {
    "propagate": "k.propagate(0.09, -0.31, 3.5, 0.2)",
    "orbital_energy": "k.orbital_energy(0.09, -0.31, 3.5)",
    "apex_distance": "k.apex_distance(0.11, -0.2, 3.5)",
    "foot_placement": "k.foot_placement(0.11, 0.2, 3.5, 0.083)",
    "time_to_position": "k.time_to_position(0.09, -0.31, 3.5, 0.11, 1)",
    "segment_apex": "k.segment_apex(0.11, -0.05, 3.5, 0.0, 0.05)",
    "grid_query": "k.grid_query(vals, -0.05, 0.25, -0.8, 0.8, 0.1, 0.2)",
    "grid_scatter": "k.grid_scatter(vals, vis, -0.05, 0.25, -0.8, 0.8, 0.1, 0.2, 1e-4)",
}

EXPERIMENT = """
import time
from capstep import BACKEND
from capstep.balance import ControllerKind
from capstep.calibration import calibrate
from capstep.experiment import ExperimentConfig, run_experiment
from capstep.plant import PlantConfig
pc = PlantConfig()
cal = calibrate(pc)
t0 = time.perf_counter()
run_experiment(ExperimentConfig(ControllerKind.TIMING_STEP_LEARNING, cal.gait, cal.nominal, n_pushes={n}, plant=pc))
print(BACKEND, time.perf_counter() - t0)
"""


def per_call(module, number):
    env = {"k": module, "vals": np.zeros((31, 31)), "vis": np.zeros((31, 31), dtype=np.int64)}
    return {name: min(timeit.repeat(stmt, globals=env, number=number, repeat=3)) / number
            for name, stmt in CALLS.items()}


def experiment_time(backend, pushes):
    env = dict(os.environ, CAPSTEP_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", EXPERIMENT.format(n=pushes)], env=env,
                         capture_output=True, text=True, check=True).stdout.split()
    return out[0], float(out[1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--number", type=int, default=20000)
    ap.add_argument("--pushes", type=int, default=40)
    args = ap.parse_args()

    py = per_call(_kernels_py, args.number)
    cy = per_call(_kernels, args.number) if _kernels is not None else None
    print(f"{'kernel':<18}{'python (us)':>12}{'compiled (us)':>15}{'speedup':>9}")
    for name in CALLS:
        if cy is None:
            print(f"{name:<18}{py[name] * 1e6:12.3f}{'n/a':>15}{'':>9}")
        else:
            print(f"{name:<18}{py[name] * 1e6:12.3f}{cy[name] * 1e6:15.3f}{py[name] / cy[name]:9.1f}")

    print(f"\npush experiment, {args.pushes} pushes, learning controller")
    for backend in ("python", "compiled"):
        got, secs = experiment_time(backend, args.pushes)
        print(f"  requested {backend:<9} ran on {got:<9} {secs:7.2f} s")


if __name__ == "__main__":
    main()
