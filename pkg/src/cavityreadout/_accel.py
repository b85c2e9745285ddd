"""Optional numba acceleration and thread-capped mapping.

Set ``READOUT_NUMBA=0`` to force the pure-numpy code paths (numba is also
skipped automatically when it is not importable).  ``READOUT_THREADS`` caps
the worker threads used by parameter sweeps (default 1).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

try:
    import numba as nb
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None


def numba_enabled() -> bool:
    return nb is not None and os.environ.get("READOUT_NUMBA", "1").strip() not in ("0", "false", "no")


def njit(fn):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if nb is None:
        return fn
    return nb.njit(cache=True)(fn)


def thread_count() -> int:
    raw = os.environ.get("READOUT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"READOUT_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def thread_map(fn, items) -> list:
    """``[fn(x) for x in items]``, possibly on a thread pool; order preserved."""
    items = list(items)
    n = min(thread_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
