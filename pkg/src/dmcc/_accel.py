"""Numba dispatch.

Set ``DMCC_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is read
once at import time. ``DMCC_NUM_THREADS`` caps numba's thread pool.
"""
import os

_FALSY = {"", "0", "false", "no", "off"}


def _env_flag(name):
    return os.environ.get(name, "").strip().lower() not in _FALSY


try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _env_flag("DMCC_DISABLE_NUMBA")


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if HAS_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def configure_threads(n=None):
    """Apply ``DMCC_NUM_THREADS`` (or ``n``) to numba; ``None`` when neither is set."""
    if n is None:
        raw = os.environ.get("DMCC_NUM_THREADS")
        if not raw:
            return None
        n = int(raw)
    if not HAS_NUMBA:
        return 1
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()


def backend():
    return "numba" if USE_NUMBA else "numpy"
