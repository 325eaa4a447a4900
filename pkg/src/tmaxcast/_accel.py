"""Numba switch.

Hot loops are written twice: a numba ``@njit`` kernel and a plain numpy
equivalent. Set ``TMAXCAST_DISABLE_NUMBA=1`` (or run without numba
installed) to force the numpy path everywhere.
"""
from __future__ import annotations

import os

_DISABLED = os.environ.get("TMAXCAST_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    _njit = None
    HAS_NUMBA = False


def njit(fn):
    """Compile ``fn`` with numba when enabled, otherwise return ``None``.

    Callers keep a numpy fallback and pick whichever is available.
    """
    if not HAS_NUMBA:
        return None
    return _njit(cache=True, nogil=True)(fn)


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
