"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the pure-Python
twin is loaded. ``CAPSTEP_BACKEND=python`` forces the fallback.
"""

import os

BACKEND = "python"

if os.environ.get("CAPSTEP_BACKEND", "").lower() != "python":
    try:
        from capstep import _kernels as kernels

        BACKEND = "compiled"
    except ImportError:
        from capstep import _kernels_py as kernels
else:
    from capstep import _kernels_py as kernels

__all__ = ["BACKEND", "kernels"]
