"""Optional capture sink for affinity matrices.

Attention stages emit each per-group affinity matrix they compute,
tagged with a stage label ("dense", "long", "short", "down"). Tests and
the effective-matrix oracle install a sink to inspect them; with no
sink installed, emission is a no-op.
"""

import threading
from contextlib import contextmanager

_state = threading.local()


def emit(label, affinity):
    sink = getattr(_state, "sink", None)
    if sink is not None:
        sink.append((label, affinity.copy()))


@contextmanager
def capture_affinities():
    """Collect (label, affinity-matrix) pairs emitted during the block."""
    previous = getattr(_state, "sink", None)
    _state.sink = []
    try:
        yield _state.sink
    finally:
        _state.sink = previous
