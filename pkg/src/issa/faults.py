"""Test-only fault injection.

These switches exist solely so the verification suite can be shown to
fail when the implementation is broken on purpose. They must never be
enabled in normal use.

Known fault names:
  * ``no-softmax-norm``  -- row softmax skips the normalizing division
  * ``skip-short-pass``  -- the interlaced forward omits the short-range
    stage
"""

from contextlib import contextmanager

KNOWN_FAULTS = frozenset({"no-softmax-norm", "skip-short-pass"})

_active = set()


def activate(name):
    if name not in KNOWN_FAULTS:
        raise ValueError(f"unknown fault {name!r}; known: {sorted(KNOWN_FAULTS)}")
    _active.add(name)


def deactivate_all():
    _active.clear()


def is_active(name):
    return name in _active


@contextmanager
def injected(name):
    activate(name)
    try:
        yield
    finally:
        _active.discard(name)
