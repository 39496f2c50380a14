"""Optional numba acceleration.

Hot kernels are written once in a numba-compatible subset of Python.  When
numba is importable and ``LADDER_NUMBA`` is not set to ``0``, they are
compiled with ``njit``; otherwise the package uses vectorized numpy
implementations of the same computation.
"""
import os

_flag = os.environ.get("LADDER_NUMBA", "1").strip().lower()
_wanted = _flag not in ("0", "false", "no", "off")

try:
    if not _wanted:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
