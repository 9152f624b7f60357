"""Numba switch.

Set ``GAUSSCLOSURE_DISABLE_NUMBA=1`` before import to force the pure-numpy
kernels (useful for debugging and for the kernel benchmark).
"""
from __future__ import annotations

import functools
import os

_DISABLED = os.environ.get("GAUSSCLOSURE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise the identity decorator."""
    if HAVE_NUMBA:
        return _njit(*args, **kwargs)

    def deco(f):
        @functools.wraps(f)
        def wrapper(*a, **k):
            return f(*a, **k)

        return wrapper

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return deco(args[0])
    return deco


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
