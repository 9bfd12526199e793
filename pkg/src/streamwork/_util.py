"""Small concurrency helpers."""

from __future__ import annotations

import threading


class AtomicCounter:
    __slots__ = ("_value", "_lock")

    def __init__(self, initial: int = 0):
        self._value = initial
        self._lock = threading.Lock()

    def inc(self, amount: int = 1) -> int:
        with self._lock:
            self._value += amount
            return self._value

    def dec(self, amount: int = 1) -> int:
        return self.inc(-amount)

    @property
    def value(self) -> int:
        with self._lock:
            return self._value


class InFlightLedger:
    """Conservation ledger for live tasks: created vs completed.

    A task is created when its envelope is enqueued (or seeded) and completed
    once its successors have been enqueued and the delivery acknowledged.
    ``quiescent`` is a race-free emptiness witness: created is read, then
    completed, then created again; equality of all three proves no task was
    live at the final read, because successors are always created before
    their parent completes.
    """

    def __init__(self):
        self._created = AtomicCounter()
        self._completed = AtomicCounter()

    def task_created(self, amount: int = 1) -> None:
        self._created.inc(amount)

    def task_completed(self) -> None:
        self._completed.inc()

    @property
    def created(self) -> int:
        return self._created.value

    @property
    def completed(self) -> int:
        return self._completed.value

    @property
    def in_flight(self) -> int:
        return self.created - self.completed

    def quiescent(self) -> bool:
        c1 = self._created.value
        d = self._completed.value
        c2 = self._created.value
        return c1 == c2 == d
