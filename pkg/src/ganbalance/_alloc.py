"""Allocator tuning for large transient buffers.

Training allocates tens-of-MB im2col workspaces every step. glibc serves
those via mmap and returns them to the kernel on free, so each step pays
page-fault costs again; under hardened/sandboxed kernels that overhead can
exceed the arithmetic. Raising the mmap and trim thresholds keeps big blocks
on the heap free-list, so steady-state steps reuse already-faulted pages.

No-op (with a debug log) on platforms without glibc mallopt.
"""

from __future__ import annotations

import ctypes
import logging

logger = logging.getLogger(__name__)

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_DONE = False


def tune_allocator(threshold_bytes: int = 1 << 30) -> bool:
    global _DONE
    if _DONE:
        return True
    try:
        libc = ctypes.CDLL("libc.so.6")
        ok = bool(libc.mallopt(_M_MMAP_THRESHOLD, threshold_bytes))
        ok = bool(libc.mallopt(_M_TRIM_THRESHOLD, threshold_bytes)) and ok
        _DONE = ok
        return ok
    except Exception as exc:
        logger.debug("allocator tuning unavailable: %s", exc)
        return False


_thread_limiter = None


def tune_threads() -> bool:
    """Pin BLAS/OpenMP pools to one thread.

    The training steps interleave many small GEMMs with compiled serial
    kernels; letting BLAS wake a thread pool for each call costs far more
    than the parallelism returns (measured ~3x end to end on shared-core
    hosts). Override by calling threadpoolctl yourself after import.
    """
    global _thread_limiter
    if _thread_limiter is not None:
        return True
    try:
        from threadpoolctl import threadpool_limits

        _thread_limiter = threadpool_limits(limits=1)
        return True
    except Exception as exc:
        logger.debug("thread limiting unavailable: %s", exc)
        return False
