"""Kernel backend selection.

Two interchangeable kernel modules exist: a numba jit path and a pure
numpy path. The environment variable KMRVAE_KERNELS picks one:

    KMRVAE_KERNELS=numba   require the jit path, fail if numba is missing
    KMRVAE_KERNELS=numpy   force the fallback
    KMRVAE_KERNELS=auto    jit if importable, else fallback (default)

The choice is made once, on first use, and cached for the process.
benchmarks/bench_kernels.py times the two paths against each other.
"""

import os

try:
    import numba  # noqa: F401
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

_ACTIVE = None


def _select():
    mode = os.environ.get("KMRVAE_KERNELS", "auto").strip().lower()
    if mode not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"KMRVAE_KERNELS must be auto, numba or numpy, got {mode!r}")
    if mode == "numpy":
        from . import kernels_numpy
        return kernels_numpy
    if mode == "numba" and not HAS_NUMBA:
        raise ImportError("KMRVAE_KERNELS=numba but numba is not importable")
    if HAS_NUMBA:
        from . import kernels_numba
        return kernels_numba
    from . import kernels_numpy
    return kernels_numpy


def active():
    """Return the kernel module in use, selecting it on first call."""
    global _ACTIVE
    if _ACTIVE is None:
        _ACTIVE = _select()
    return _ACTIVE


def active_name() -> str:
    return active().NAME
