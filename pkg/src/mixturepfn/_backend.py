"""Kernel backend selection.

The hot numeric kernels (ball-tree search, k-means sweeps) ship in two
flavours: a numba @njit build and a pure-numpy build. The active flavour
is chosen once at import time from the MPFN_BACKEND environment variable:

    MPFN_BACKEND=numba   force the jitted kernels (error if numba missing)
    MPFN_BACKEND=numpy   force the vectorized numpy fallback

Unset, numba is used when importable, numpy otherwise. Both flavours
return exactly the same neighbor sets (ties broken by row index); trees
and float round-off may differ, so per-run determinism is guaranteed per
backend, not across backends. `benchmarks/bench_backends.py` compares the
two.
"""

from __future__ import annotations

import os

_VALID = ("numba", "numpy")


def _detect() -> str:
    choice = os.environ.get("MPFN_BACKEND", "").strip().lower()
    if choice:
        if choice not in _VALID:
            raise ValueError(
                f"MPFN_BACKEND must be one of {_VALID}, got {choice!r}"
            )
        if choice == "numba":
            import numba  # noqa: F401  (fail loudly if forced but absent)
        return choice
    try:
        import numba  # noqa: F401
    except ImportError:
        return "numpy"
    return "numba"


_ACTIVE = _detect()


def active_backend() -> str:
    """Name of the kernel backend in use ('numba' or 'numpy')."""
    return _ACTIVE


def set_backend(name: str) -> None:
    """Switch kernel backends at runtime (used by tests and benchmarks).

    Indexes and clusterings built before the switch keep functioning; only
    newly dispatched kernel calls see the new backend.
    """
    global _ACTIVE
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba":
        import numba  # noqa: F401
    _ACTIVE = name
