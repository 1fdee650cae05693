"""Small shared helpers."""

import os


def thread_count() -> int:
    """Worker cap for internally parallel sections.

    Reads GIBBSLAB_THREADS; unset or invalid means all cores."""
    raw = os.environ.get("GIBBSLAB_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return os.cpu_count() or 1
    return max(1, n)
