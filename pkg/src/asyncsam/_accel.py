"""Numba availability and the env switch selecting the pure-numpy kernel path.

Set ``ASYNCSAM_DISABLE_NUMBA=1`` before import to force the numpy fallback.
"""
import os
import warnings

_FLAG = "ASYNCSAM_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")

if not HAVE_NUMBA and os.environ.get(_FLAG) is None:  # pragma: no cover
    warnings.warn("numba could not be imported; using the numpy kernels")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise an identity decorator.

    The kernels are always compiled when numba exists (the benchmark needs both
    paths); ``USE_NUMBA`` only decides which path the library dispatches to.
    """
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda func: func


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
