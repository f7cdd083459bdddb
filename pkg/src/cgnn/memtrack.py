"""Live-buffer accounting for the memory experiments.

Counts matrix buffers that the integrators and the discrete propagation
path declare as state, via weakrefs: a registered array counts as live
until it is garbage collected. CPython's refcounting frees dropped
states immediately, so the peak reflects what a path actually retains
(a stored trajectory keeps its arrays alive; the adjoint does not).
"""

from __future__ import annotations

import weakref
from contextlib import contextmanager

import numpy as np

_ACTIVE: "AllocationTracker | None" = None


class AllocationTracker:
    """Registry of live matrix buffers with a running peak count."""

    def __init__(self) -> None:
        self._refs: dict[int, weakref.ref] = {}
        self._next = 0
        self.peak = 0
        self.total_registered = 0

    def register(self, arr: np.ndarray) -> np.ndarray:
        key = self._next
        self._next += 1

        def _drop(_ref, *, _key=key, _refs=self._refs):
            _refs.pop(_key, None)

        self._refs[key] = weakref.ref(arr, _drop)
        self.total_registered += 1
        live = len(self._refs)
        if live > self.peak:
            self.peak = live
        return arr

    @property
    def live(self) -> int:
        return len(self._refs)


def note(arr: np.ndarray) -> np.ndarray:
    """Register `arr` with the active tracker, if any. Returns `arr`."""
    if _ACTIVE is not None:
        _ACTIVE.register(arr)
    return arr


@contextmanager
def tracking():
    """Activate a fresh tracker for the enclosed block and yield it."""
    global _ACTIVE
    tracker = AllocationTracker()
    prev = _ACTIVE
    _ACTIVE = tracker
    try:
        yield tracker
    finally:
        _ACTIVE = prev
