"""Backend selection for the hot kernels.

``RETINN_BACKEND=numba`` (default when numba imports) routes conv/pool kernels
through ``@njit`` loops; ``RETINN_BACKEND=numpy`` forces the vectorised numpy
path. The choice is read once at import.
"""

import os

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep in practice
    numba = None
    HAS_NUMBA = False


def _resolve_backend():
    requested = os.environ.get("RETINN_BACKEND", "").strip().lower()
    if requested in ("", "auto"):
        return "numba" if HAS_NUMBA else "numpy"
    if requested not in ("numba", "numpy"):
        raise ValueError(f"RETINN_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba" and not HAS_NUMBA:
        raise ImportError("RETINN_BACKEND=numba but numba is not installed")
    return requested


BACKEND = _resolve_backend()


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
