"""Allocator tuning for latency-sensitive paths.

Numpy temporaries above glibc's default mmap threshold are served by fresh
mmaps and returned to the kernel on free, so every inference pays page
faults for the same buffers. Raising the thresholds keeps those blocks on
the heap where they are reused. No-op on non-glibc platforms.
"""

import ctypes

_done = False

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def enable_low_latency_malloc() -> bool:
    """Idempotent; returns True when the thresholds were raised."""
    global _done
    if _done:
        return True
    try:
        libc = ctypes.CDLL("libc.so.6")
        ok = bool(libc.mallopt(_M_MMAP_THRESHOLD, 64 * 1024 * 1024))
        ok = bool(libc.mallopt(_M_TRIM_THRESHOLD, 128 * 1024 * 1024)) and ok
    except (OSError, AttributeError):
        return False
    _done = ok
    return ok
