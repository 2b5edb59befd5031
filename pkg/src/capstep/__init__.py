"""Lateral push recovery for a pendulum walker: step timing, step size and a learned correction."""

__version__ = "0.1.0"

from capstep._backend import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
