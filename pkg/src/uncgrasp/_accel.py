"""Numba switch.

Set ``UNCGRASP_DISABLE_NUMBA=1`` (or numba's own ``NUMBA_DISABLE_JIT=1``) to
force the pure-numpy kernels. When numba is missing the numpy path is used
silently.
"""

import os
import threading
from contextlib import nullcontext

_FLAG_OFF = ("", "0", "false", "no")


def _env_disabled() -> bool:
    for name in ("UNCGRASP_DISABLE_NUMBA", "NUMBA_DISABLE_JIT"):
        if os.environ.get(name, "").strip().lower() not in _FLAG_OFF:
            return True
    return False


try:
    import numba

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the bundled TBB is often too old; workqueue always loads
        numba.config.THREADING_LAYER = "workqueue"
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a soft dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _env_disabled()

# workqueue is not reentrant: two Python threads entering parallel kernels at
# once can crash the process, so those calls are serialised under it
_PARALLEL_LOCK = threading.Lock()


def parallel_guard():
    """Context manager to hold while calling a ``parallel=True`` kernel."""
    if HAVE_NUMBA and numba.config.THREADING_LAYER == "workqueue":
        return _PARALLEL_LOCK
    return nullcontext()


def njit(func=None, **kwargs):
    """``numba.njit(cache=True)`` when numba is importable, else ``None``.

    Returning ``None`` (instead of the plain Python function) makes an
    accidental call into an un-jitted loop kernel fail loudly rather than
    crawl.
    """
    if func is None:
        return lambda f: njit(f, **kwargs)
    if not HAVE_NUMBA:
        return None
    kwargs.setdefault("cache", True)
    return numba.njit(**kwargs)(func)


def set_threads(n: int | None) -> None:
    if n is None or not HAVE_NUMBA:
        return
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
