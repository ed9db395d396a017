"""Optional numba acceleration.

Set ``ENLARGE_SIM_DISABLE_NUMBA=1`` to force the pure-numpy kernels.
"""
import os

_FLAG = "ENLARGE_SIM_DISABLE_NUMBA"


def _disabled() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and not _disabled()


def njit(func):
    """Compile ``func`` in nopython mode when numba is importable, else return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return _numba.njit(cache=True, nogil=True)(func)
