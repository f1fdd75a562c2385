"""Thread-local scope guards, the compact used-guide set, and the TAI.

Every public store operation runs inside a scope.  The outermost entry
samples the global epoch and registers the thread in the Thread Activity
Index (TAI); guide uses are collected in a base+delta set and, while ATC
tracking is enabled, increment the guide's active-thread count exactly once
per scope.  The matching decrements happen when the outermost scope exits.
"""
from __future__ import annotations

import threading
import time
from bisect import bisect_right
from enum import IntEnum

from .guideword import GuideProtocolError


class Phase(IntEnum):
    INACTIVE = 0
    PREPARE = 1
    ACTIVE = 2


class EpochState:
    """Collector-published epoch number, phase, and ATC-tracking flag.

    Written only by the collector thread; read without locks by mutators.
    A mutator that races a transition keeps its entry-time view for the whole
    scope, and the convergence protocol waits such scopes out.
    """

    __slots__ = ("epoch", "phase", "tracking_enabled")

    def __init__(self):
        self.epoch = 0
        self.phase = Phase.INACTIVE
        self.tracking_enabled = False


class ScopeError(RuntimeError):
    pass


class BaseDeltaSet:
    """Set of 48-bit values stored as group bases plus 32-bit deltas.

    Groups hold up to 16 deltas; membership and insertion are O(1) when an
    existing group covers the value, O(log G) plus a bounded backward scan
    otherwise.
    """

    DELTA_RANGE = 1 << 32
    GROUP_CAPACITY = 16

    __slots__ = ("_bases", "_groups", "_size")

    def __init__(self):
        self._bases: list[int] = []
        self._groups: list[set[int]] = []
        self._size = 0

    def add(self, value: int) -> bool:
        """Insert; returns True when the value was newly added."""
        if not 0 <= value < 1 << 48:
            raise ValueError("value outside the 48-bit space")
        bases = self._bases
        i = bisect_right(bases, value)
        low = value - self.DELTA_RANGE
        open_group = -1
        j = i - 1
        while j >= 0 and bases[j] > low:
            if value - bases[j] in self._groups[j]:
                return False
            if open_group < 0 and len(self._groups[j]) < self.GROUP_CAPACITY:
                open_group = j
            j -= 1
        if open_group >= 0:
            self._groups[open_group].add(value - bases[open_group])
        else:
            bases.insert(i, value)
            self._groups.insert(i, {0})
        self._size += 1
        return True

    def __contains__(self, value: int) -> bool:
        bases = self._bases
        j = bisect_right(bases, value) - 1
        low = value - self.DELTA_RANGE
        while j >= 0 and bases[j] > low:
            if value - bases[j] in self._groups[j]:
                return True
            j -= 1
        return False

    def __len__(self) -> int:
        return self._size

    def __iter__(self):
        for base, deltas in zip(self._bases, self._groups):
            for delta in deltas:
                yield base + delta

    @property
    def group_count(self) -> int:
        return len(self._bases)

    def clear(self) -> None:
        self._bases.clear()
        self._groups.clear()
        self._size = 0


class ThreadActivityIndex:
    """Fixed array of {epoch, active_count} slots keyed by thread-id hash.

    Hash collisions merge into one slot; convergence then conservatively
    waits for every colliding thread to exit.
    """

    def __init__(self, slot_count: int = 256):
        if slot_count <= 0 or slot_count & (slot_count - 1):
            raise ValueError("slot_count must be a power of two")
        self._mask = slot_count - 1
        self._slots = [[0, 0] for _ in range(slot_count)]
        self._locks = [threading.Lock() for _ in range(slot_count)]

    def slot_index(self, thread_id: int) -> int:
        return hash(thread_id) & self._mask

    def enter(self, thread_id: int, epoch: int) -> None:
        i = self.slot_index(thread_id)
        with self._locks[i]:
            slot = self._slots[i]
            slot[0] = epoch
            slot[1] += 1

    def exit(self, thread_id: int) -> None:
        i = self.slot_index(thread_id)
        with self._locks[i]:
            slot = self._slots[i]
            if slot[1] <= 0:
                raise ScopeError("TAI exit without matching enter")
            slot[1] -= 1

    def converged(self, epoch: int) -> bool:
        """True when every slot with active threads reflects `epoch`."""
        for slot in self._slots:
            if slot[1] > 0 and slot[0] != epoch:
                return False
        return True

    def snapshot(self) -> list[tuple[int, int]]:
        return [tuple(slot) for slot in self._slots]


class _ThreadScope:
    __slots__ = ("depth", "epoch_at_entry", "tracking", "used",
                 "atc_recorded", "thread_id", "entered_at")

    def __init__(self):
        self.depth = 0
        self.epoch_at_entry = 0
        self.tracking = False
        self.used = BaseDeltaSet()
        self.atc_recorded: list[int] = []
        self.thread_id = 0
        self.entered_at = 0.0


class ScopeManager:
    def __init__(self, registry, tai: ThreadActivityIndex,
                 epoch_state: EpochState, sample_scope_sizes: bool = False):
        self._registry = registry
        self.tai = tai
        self.epoch_state = epoch_state
        self._tls = threading.local()
        self.outermost_entries = 0
        self.outermost_exits = 0
        self.max_scope_seconds = 0.0
        self._sample_sizes = sample_scope_sizes
        self.scope_size_samples: list[int] = []

    def _scope(self) -> _ThreadScope:
        scope = getattr(self._tls, "scope", None)
        if scope is None:
            scope = self._tls.scope = _ThreadScope()
        return scope

    def enter_scope(self) -> None:
        scope = self._scope()
        scope.depth += 1
        if scope.depth == 1:
            state = self.epoch_state
            scope.epoch_at_entry = state.epoch
            scope.tracking = state.tracking_enabled
            scope.used = BaseDeltaSet()
            scope.atc_recorded = []
            scope.thread_id = threading.get_ident()
            scope.entered_at = time.monotonic()
            self.tai.enter(scope.thread_id, scope.epoch_at_entry)
            self.outermost_entries += 1

    def record_guide_use(self, cell_index: int) -> None:
        scope = getattr(self._tls, "scope", None)
        if scope is None or scope.depth == 0:
            raise ScopeError("guide use outside any scope")
        if scope.used.add(cell_index) and scope.tracking:
            if self._registry.cell(cell_index).atc_increment():
                scope.atc_recorded.append(cell_index)
            # Saturated ATC: the object stays migration-ineligible this
            # epoch anyway, so the scope simply records no debt.

    def exit_scope(self) -> None:
        scope = getattr(self._tls, "scope", None)
        if scope is None or scope.depth == 0:
            raise ScopeError("unbalanced scope exit")
        scope.depth -= 1
        if scope.depth == 0:
            cell = self._registry.cell
            for index in scope.atc_recorded:
                cell(index).atc_decrement()
            scope.atc_recorded = []
            self.tai.exit(scope.thread_id)
            self.outermost_exits += 1
            duration = time.monotonic() - scope.entered_at
            if duration > self.max_scope_seconds:
                self.max_scope_seconds = duration
            if self._sample_sizes and len(self.scope_size_samples) < 65536:
                self.scope_size_samples.append(len(scope.used))

    @property
    def depth(self) -> int:
        scope = getattr(self._tls, "scope", None)
        return 0 if scope is None else scope.depth

    def in_scope(self) -> bool:
        return self.depth > 0
