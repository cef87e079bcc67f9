"""Optional numba acceleration.

Set ``GRAINPIPE_DISABLE_NUMBA=1`` to force the pure-numpy fallbacks.  The
flag is read once at import time.
"""

import os

_DISABLED = os.environ.get("GRAINPIPE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by GRAINPIPE_DISABLE_NUMBA")
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit(func):
    """Compile ``func`` in nopython mode when numba is active, else return ``None``.

    Callers keep a numpy implementation next to every kernel and dispatch
    on :data:`HAVE_NUMBA`.
    """
    if not HAVE_NUMBA:
        return None
    return _njit(cache=True, nogil=True)(func)


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
