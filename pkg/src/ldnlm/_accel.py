"""Optional numba acceleration.

Hot kernels are written twice: a loop form compiled with numba and a
vectorized numpy form. ``LDNLM_DISABLE_NUMBA=1`` (or a missing numba) selects
the numpy form at import time.
"""

from __future__ import annotations

import os

_DISABLED = os.environ.get("LDNLM_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLED


def njit(func):
    """Compile ``func`` in nopython mode, or return it untouched without numba."""
    if not HAVE_NUMBA:
        return func
    return _numba.njit(cache=True, nogil=True)(func)


def pick(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
