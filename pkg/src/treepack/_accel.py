"""Backend selection for the hot numeric kernels.

Kernels in kernels.py are compiled with numba's @njit by default.  Setting
the environment variable TREEPACK_NO_NUMBA=1 (before import) selects the
pure-Python/numpy fallback path instead; both paths implement the same
algorithms and are exercised against each other in the benchmark and tests.
"""

import os

NUMBA_DISABLED = os.environ.get("TREEPACK_NO_NUMBA", "").strip() in ("1", "true", "yes")

if not NUMBA_DISABLED:
    try:
        from numba import njit

        NUMBA_AVAILABLE = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_AVAILABLE = False
else:
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and not NUMBA_DISABLED


def maybe_njit(*args, **kwargs):
    """@njit when the numba backend is active, identity decorator otherwise."""
    if USE_NUMBA:
        from numba import njit

        return njit(*args, **kwargs)

    def deco(fn):
        return fn

    if args and callable(args[0]):
        return args[0]
    return deco
