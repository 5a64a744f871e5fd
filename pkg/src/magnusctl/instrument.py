"""Lightweight operation counters.

Counting is opt-in and scoped with :func:`track`; outside a ``track`` block
:func:`bump` is a no-op. The active counter lives in a context variable so
concurrent threads each see their own scope.
"""

from collections import Counter
from contextlib import contextmanager
from contextvars import ContextVar

_active: ContextVar[Counter | None] = ContextVar("magnusctl_counter", default=None)


def bump(key: str, n: int = 1) -> None:
    counter = _active.get()
    if counter is not None:
        counter[key] += n


@contextmanager
def track():
    """Collect operation counts for the duration of the block.

    >>> with track() as counts:
    ...     bump("expm_multiply")
    >>> counts["expm_multiply"]
    1
    """
    counter = Counter()
    token = _active.set(counter)
    try:
        yield counter
    finally:
        _active.reset(token)
