"""Optional numba acceleration.

Set ``SYNTHASR_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import time.
"""
import os

_DISABLED = os.environ.get("SYNTHASR_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(func):
    """Compile ``func`` with numba in nopython mode, or return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
