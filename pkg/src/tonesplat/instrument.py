"""Call counters for the training-only enhancement path.

Test-time rendering must never touch curves, color matrices or generators;
these counters make that checkable.
"""

from collections import Counter
from contextlib import contextmanager

counts: Counter = Counter()


def hit(name: str) -> None:
    counts[name] += 1


def reset() -> None:
    counts.clear()


def total(*names: str) -> int:
    if not names:
        return sum(counts.values())
    return sum(counts[n] for n in names)


@contextmanager
def recording():
    """Reset the counters, yield them, leave them populated afterwards."""
    reset()
    yield counts
