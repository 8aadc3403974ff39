"""Kernel dispatch: the compiled extension when importable, NumPy otherwise.

Set ``SCQR_PURE_PYTHON=1`` to force the NumPy path.
"""

import os

from . import _kernels_py

BACKEND = "python"
separation_argmax = _kernels_py.separation_argmax
violation_sumsq = _kernels_py.violation_sumsq

if os.environ.get("SCQR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _ext
    except ImportError:  # extension not built
        _ext = None
    if _ext is not None:
        BACKEND = "cython"
        separation_argmax = _ext.separation_argmax
        violation_sumsq = _ext.violation_sumsq

__all__ = ["BACKEND", "separation_argmax", "violation_sumsq"]
