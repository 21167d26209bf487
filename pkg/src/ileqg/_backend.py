"""Backend selection for the jitted hot kernels.

The package ships two implementations of every hot inner loop: a pure-numpy
reference path and a numba ``@njit`` twin.  Which one runs is decided once at
import from the ``ILEQG_BACKEND`` environment variable:

* ``auto`` (default) -- use numba when it imports, numpy otherwise,
* ``numba``          -- require numba, fail loudly if it is missing,
* ``numpy``          -- force the reference path (useful for debugging and
  for the backend benchmark under ``benchmarks/``).

Tests can switch at runtime with :func:`use_backend`.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

try:
    import numba  # noqa: F401
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on numba-less installs
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        """Placeholder decorator so kernel modules still import."""
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


_VALID = ("auto", "numba", "numpy")
_requested = os.environ.get("ILEQG_BACKEND", "auto").lower()
if _requested not in _VALID:
    raise RuntimeError(
        f"ILEQG_BACKEND must be one of {_VALID}, got {_requested!r}"
    )
if _requested == "numba" and not HAVE_NUMBA:
    raise RuntimeError("ILEQG_BACKEND=numba but numba is not importable")

_active = "numpy" if _requested == "numpy" or not HAVE_NUMBA else "numba"


def backend_name() -> str:
    """Name of the backend currently in effect (``numba`` or ``numpy``)."""
    return _active


def numba_enabled() -> bool:
    return _active == "numba"


@contextmanager
def use_backend(name: str):
    """Temporarily force a backend; intended for tests and benchmarks."""
    global _active
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable")
    previous = _active
    _active = name
    try:
        yield
    finally:
        _active = previous
