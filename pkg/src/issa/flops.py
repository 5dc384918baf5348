"""Thread-local FLOP counter.

Counting convention (documented, fixed):
  * one multiply and one add each count as one FLOP, so a multiply-add
    pair costs 2 FLOPs: an (m, k) x (k, n) matrix product registers
    2*m*k*n FLOPs;
  * a position-wise projection of an N x C x H x W map to R output
    channels registers 2*N*H*W*R*C FLOPs (the bias add is not counted);
  * row softmax registers 4 FLOPs per matrix element (subtract-max,
    exp, divide, and an amortized share of the row sum).

Only forward-pass operations register counts. Backward passes and the
average pooling used by the downsampled baseline run on plain numpy and
are deliberately outside the counted cost model.

The counter is thread-local: parallel runs each observe only their own
counts.
"""

import logging
import threading
from contextlib import contextmanager

logger = logging.getLogger(__name__)

_state = threading.local()


def install():
    """Install (or re-arm) the counter for the current thread, zeroed."""
    _state.installed = True
    _state.count = 0


def uninstall():
    _state.installed = False
    _state.count = 0


def reset():
    """Zero the accumulator without changing installation state."""
    _state.count = 0


def read():
    """Total FLOPs registered since the last install/reset.

    Reading without an installed counter returns 0 and logs a warning.
    """
    if not getattr(_state, "installed", False):
        logger.warning("FLOP counter read without install; returning 0")
        return 0
    return _state.count


def register(n):
    """Add ``n`` FLOPs if a counter is installed; no-op otherwise."""
    if getattr(_state, "installed", False):
        _state.count += int(n)


@contextmanager
def counting():
    """Context manager: install a fresh counter, yield a reader callable."""
    install()
    try:
        yield read
    finally:
        uninstall()
