"""Hot numeric kernels with two interchangeable backends.

``jitted`` holds numba ``@njit`` implementations, ``fallback`` pure-numpy
ones with identical semantics.  Selection is controlled by the
``SHIMMER_BACKEND`` environment variable: ``auto`` (default, numba when
importable), ``numba``, or ``numpy``.  ``benchmarks/kernel_bench.py``
times the two side by side.
"""

from __future__ import annotations

import os

from . import fallback

_choice = os.environ.get("SHIMMER_BACKEND", "auto").lower()

if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(f"SHIMMER_BACKEND must be auto|numba|numpy, got {_choice!r}")

if _choice == "numpy":
    _impl = fallback
    BACKEND = "numpy"
else:
    try:
        from . import jitted as _impl  # noqa: F401

        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        _impl = fallback
        BACKEND = "numpy"

warp_bilinear = _impl.warp_bilinear
blur_variable = _impl.blur_variable
accumulate_polarity = _impl.accumulate_polarity
blur_map_exact = _impl.blur_map_exact
simulate_events_core = _impl.simulate_events_core


def backend() -> str:
    """Name of the active kernel backend ("numba" or "numpy")."""
    return BACKEND
