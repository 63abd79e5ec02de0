"""Operation counting for the expensive protocol primitives.

Cost accounting distinguishes four operations: KeyGen, HomoEnc, HomoDec
and BillCalc. Library code reports them through :func:`tick`; callers that
want attribution open a :func:`scope` around the code acting on behalf of
one entity. Scopes form a process-global stack so that worker threads
spawned inside a scope report into it as well; increments are lock-guarded.
"""
from __future__ import annotations

import threading
from collections import Counter
from contextlib import contextmanager

KEYGEN = "KeyGen"
HOMO_ENC = "HomoEnc"
HOMO_DEC = "HomoDec"
BILL_CALC = "BillCalc"


class OpCounter:
    """Monotone per-entity counter of expensive operations."""

    __slots__ = ("counts",)

    def __init__(self):
        self.counts: Counter[str] = Counter()

    def get(self, name: str) -> int:
        return self.counts.get(name, 0)

    def merge(self, other: "OpCounter") -> None:
        self.counts.update(other.counts)

    def __repr__(self):
        inner = ", ".join(f"{k}={v}" for k, v in sorted(self.counts.items()))
        return f"OpCounter({inner})"


_lock = threading.Lock()
_stack: list[OpCounter] = []


def tick(name: str, n: int = 1) -> None:
    """Record *n* occurrences of operation *name* on every active scope."""
    if not _stack:
        return
    with _lock:
        for counter in _stack:
            counter.counts[name] += n


@contextmanager
def scope(counter: OpCounter | None = None):
    """Attribute operations performed inside the block to *counter*."""
    counter = counter if counter is not None else OpCounter()
    with _lock:
        _stack.append(counter)
    try:
        yield counter
    finally:
        with _lock:
            _stack.remove(counter)
