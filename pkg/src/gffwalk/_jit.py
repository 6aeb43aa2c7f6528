"""Numba switch.

Kernels are written in the nopython subset and decorated with :func:`njit`.
Set ``GFFWALK_DISABLE_NUMBA=1`` to run the very same source under the
interpreter (slow, but bit-identical; used to cross-check the compiled path).
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

USE_NUMBA = numba is not None and os.environ.get("GFFWALK_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def njit(fn=None, **kws):
    """``numba.njit(cache=True, nogil=True)`` or the identity when disabled."""
    if fn is None:
        return lambda f: njit(f, **kws)
    if not USE_NUMBA:
        return fn
    opts = {"cache": True, "nogil": True}
    opts.update(kws)
    return numba.njit(**opts)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "python"
