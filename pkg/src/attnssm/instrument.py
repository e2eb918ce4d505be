"""Execution counters used to cross-check analytic cost models.

Counting is off unless a :class:`Recorder` is active; the hooks are plain
integer additions so leaving them in the hot path is cheap.
"""
from __future__ import annotations

from collections import Counter
from contextlib import contextmanager

_active: list[Counter] = []


def add(key: str, amount: int = 1) -> None:
    if _active:
        for c in _active:
            c[key] += int(amount)


@contextmanager
def recording():
    """Collect counts (``"scan_calls"``, ``"macs:<stage>"`` ...) within a block."""
    c: Counter = Counter()
    _active.append(c)
    try:
        yield c
    finally:
        _active.remove(c)
