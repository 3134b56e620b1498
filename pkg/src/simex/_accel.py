"""Numba switch.

Set ``SIMEX_DISABLE_NUMBA=1`` before import to force the pure-numpy kernels.
"""
from __future__ import annotations

import functools
import os

_disabled = os.environ.get("SIMEX_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    import numba as _nb

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _nb = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and not _disabled


def njit(func=None, **kwargs):
    """``numba.njit`` with project defaults; identity decorator when numba is absent."""
    opts = {"cache": True, "nogil": True}
    opts.update(kwargs)
    if func is None:
        return functools.partial(njit, **kwargs)
    if _nb is None:
        return func
    return _nb.njit(**opts)(func)
