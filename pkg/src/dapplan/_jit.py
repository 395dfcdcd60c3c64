"""numba switch for the hot kernels.

Set ``DAPPLAN_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
Both paths must give identical results; ``benchmarks/bench_kernels.py``
times them side by side.
"""
from __future__ import annotations

import functools
import os

_DISABLED = os.environ.get("DAPPLAN_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by environment")
    from numba import njit as _njit

    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False
    _njit = None


def jit(fn=None, **kwargs):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if fn is None:
        return functools.partial(jit, **kwargs)
    if not NUMBA_ENABLED:
        fn.py_func = fn
        return fn
    kwargs.setdefault("cache", True)
    return _njit(**kwargs)(fn)


__all__ = ["jit", "NUMBA_ENABLED"]
