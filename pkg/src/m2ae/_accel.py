"""Numba dispatch switch.

Hot loops are written once as plain Python over numpy arrays and compiled with
``numba.njit`` when available. Set ``M2AE_NUMBA=0`` to force the pure-numpy
fallbacks (useful for debugging and for benchmarking the two paths).
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("M2AE_NUMBA", "1").lower() not in ("0", "false", "no", "off")


def njit(f=None, **options):
    """``numba.njit`` with caching, or the identity when numba is unavailable."""
    options.setdefault("cache", True)
    if numba is None:
        return f if f is not None else (lambda g: g)
    if f is None:
        return lambda g: numba.njit(g, **options)
    return numba.njit(f, **options)


def thread_limit():
    """Worker cap from ``M2AE_THREADS`` (None when unset)."""
    raw = os.environ.get("M2AE_THREADS")
    if not raw:
        return None
    n = int(raw)
    if n < 1:
        raise ValueError(f"M2AE_THREADS must be >= 1, got {raw!r}")
    return n
