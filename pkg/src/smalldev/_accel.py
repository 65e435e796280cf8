"""Backend selection for the hot kernels.

Kernels are compiled with numba when it is importable and the environment
variable ``SMALLDEV_DISABLE_NUMBA`` is unset (or ``0``).  Otherwise every
caller takes its vectorised numpy path.  ``SMALLDEV_THREADS`` caps the
number of numba worker threads.
"""

from __future__ import annotations

import os
import warnings

_FALSE = {"", "0", "false", "no", "off"}

# numba warns about an old TBB on import of its threading layers; harmless here
warnings.filterwarnings("ignore", message="The TBB threading layer")

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    _HAVE_NUMBA = False


def numba_enabled() -> bool:
    if not _HAVE_NUMBA:
        return False
    return os.environ.get("SMALLDEV_DISABLE_NUMBA", "0").strip().lower() in _FALSE


def njit(*args, **kwargs):
    """``numba.njit`` when available; identity decorator otherwise."""
    if _HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def identity(fn):
        return fn

    return identity


if _HAVE_NUMBA:
    prange = numba.prange
else:  # pragma: no cover
    prange = range


def configure_threads(n: int | None = None) -> int:
    """Apply ``n`` (or ``SMALLDEV_THREADS``) as the numba thread cap.

    Returns the thread count in effect.
    """
    if not _HAVE_NUMBA:
        return 1
    if n is None:
        env = os.environ.get("SMALLDEV_THREADS")
        if env:
            try:
                n = int(env)
            except ValueError:
                warnings.warn(f"ignoring non-integer SMALLDEV_THREADS={env!r}")
                n = None
    if n is not None:
        n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
        numba.set_num_threads(n)
    return numba.get_num_threads()
