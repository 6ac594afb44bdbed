"""Switch between numba-compiled kernels and the pure numpy fallback.

Set ``XTRACK_DISABLE_NUMBA=1`` to force the numpy path (also used when numba
is not importable).
"""
import os

_DISABLED = os.environ.get("XTRACK_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA


def njit(fn):
    """``numba.njit(cache=True)`` when numba is active, otherwise identity."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)
