"""Kernel backend selection.

The recurrent sequence kernels exist twice: a numba ``@njit`` build and a
pure-numpy build. ``TASKMIX_BACKEND=numpy`` forces the numpy path (useful
where numba is unavailable or for A/B timing, see benchmarks/); any other
value, or leaving it unset, picks numba when it imports.
"""

import os

_ENV_VAR = "TASKMIX_BACKEND"
_VALID = ("numba", "numpy")


def _detect() -> str:
    requested = os.environ.get(_ENV_VAR, "").strip().lower()
    if requested and requested not in _VALID:
        raise ValueError(
            f"{_ENV_VAR}={requested!r} is not one of {_VALID}"
        )
    if requested == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if requested == "numba":
            raise
        return "numpy"
    return "numba"


ACTIVE_BACKEND: str = _detect()


def active_backend() -> str:
    """Backend chosen at import time ("numba" or "numpy")."""
    return ACTIVE_BACKEND
