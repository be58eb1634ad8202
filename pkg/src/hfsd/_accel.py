"""Optional JIT acceleration; falls back to the pure numpy paths.

Set HFSD_NO_NUMBA=1 to force the numpy implementations (used to exercise the
fallback in tests and to sidestep a broken numba install).
"""

from __future__ import annotations

import os

_cached = None


def kernels():
    """The compiled-kernel module, or None when unavailable/disabled."""
    global _cached
    if _cached is None:
        if os.environ.get("HFSD_NO_NUMBA"):
            _cached = False
        else:
            try:
                from . import _kernels

                _cached = _kernels
            except ImportError:
                _cached = False
    return _cached or None
