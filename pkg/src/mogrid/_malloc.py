"""glibc malloc tuning for allocation-heavy array code.

Every training step allocates hundreds of megabytes of short-lived buffers;
with default thresholds glibc hands the big ones to mmap and returns them on
free, so each step re-pays page faults. Raising the thresholds keeps those
buffers in the arena for reuse. Best effort: silently skipped off glibc.
"""

import ctypes

M_TRIM_THRESHOLD = -1
M_MMAP_THRESHOLD = -3
_LIMIT = 256 * 1024 * 1024


def tune() -> None:
    try:
        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(M_MMAP_THRESHOLD, _LIMIT)
        libc.mallopt(M_TRIM_THRESHOLD, _LIMIT)
    except (OSError, AttributeError):
        pass
