"""Execution backend for the hot loops.

Hot kernels are written once, in nopython-compatible NumPy style, and either
compiled with numba or run as plain Python. Selection happens at import time
through the environment variable ``FIELDTOPO_BACKEND``:

* ``auto`` (default): numba if importable, plain Python otherwise
* ``numba``: require numba, fail loudly if missing
* ``python``: force the uncompiled path (used by the fallback benchmark)
"""
from __future__ import annotations

import os

_requested = os.environ.get("FIELDTOPO_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "python"):
    raise RuntimeError(
        f"FIELDTOPO_BACKEND must be auto, numba or python, got {_requested!r}"
    )

if _requested == "python":
    _numba = None
else:
    try:
        import numba as _numba
    except ImportError:
        if _requested == "numba":
            raise
        _numba = None

BACKEND = "numba" if _numba is not None else "python"


def maybe_njit(func=None, **kwargs):
    """numba.njit when the numba backend is active, identity otherwise."""
    if _numba is None:
        if func is not None:
            return func
        return lambda f: f
    kwargs.setdefault("cache", True)
    if func is not None:
        return _numba.njit(func, **kwargs)
    return _numba.njit(**kwargs)
