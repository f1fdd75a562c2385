"""Guide-cell registry and the wired-up runtime facade.

TierRuntime owns one of everything: the three heap regions, the guide-cell
arena with its sparse bitmap, the thread activity index, the scope manager,
the access log, and the collector.  Stores and the benchmark driver talk to
their components through this object.
"""
from __future__ import annotations

import threading

from .collector import Collector, ControllerState
from .guideword import (ATC_FIELD, GuideCell, HeapId, tombstone_from,
                        word_heap)
from .metrics import AccessLog
from .regions import (DEFAULT_PAGE_SIZE, DEFAULT_REGION_LENGTH,
                      DEFAULT_SIZE_CLASSES, RegionManager)
from .scope import EpochState, ScopeManager, ThreadActivityIndex
from .soda import SodaBitmap


class GuideRegistry:
    """Arena of guide cells with stable indices and a mirrored SODA bitmap.

    Deleted cells are tombstoned (heap=RESERVED, ATC preserved) and parked in
    a graveyard until their ATC drains to zero, so scopes that recorded the
    guide before the delete can still balance their decrements.  The
    collector drains the graveyard at the end of each window.
    """

    def __init__(self, soda: SodaBitmap, lock_stripes: int = 256):
        if lock_stripes & (lock_stripes - 1):
            raise ValueError("lock_stripes must be a power of two")
        self.soda = soda
        self._cells: list[GuideCell] = []
        self._free: list[int] = []
        self._graveyard: list[int] = []
        self._stripes = [threading.Lock() for _ in range(lock_stripes)]
        self._stripe_mask = lock_stripes - 1
        self._lock = threading.Lock()

    def create(self, word: int) -> int:
        if word_heap(word) == HeapId.RESERVED:
            raise ValueError("cannot create a guide with a RESERVED heap id")
        with self._lock:
            if self._free:
                index = self._free.pop()
                self._cells[index].word = word
            else:
                index = len(self._cells)
                self._cells.append(GuideCell(
                    index, word, self._stripes[index & self._stripe_mask]))
        self.soda.set_bit(index)
        return index

    def cell(self, index: int) -> GuideCell:
        return self._cells[index]

    def retire(self, index: int) -> None:
        """Clear the SODA bit and park the index until its ATC drains.

        The caller must already have swung the word to a tombstone.
        """
        self.soda.clear_bit(index)
        with self._lock:
            self._graveyard.append(index)

    def tombstone(self, index: int) -> int:
        """CAS the cell to a tombstone; returns the replaced word."""
        cell = self._cells[index]
        while True:
            word = cell.load()
            if cell.compare_and_swap(word, tombstone_from(word)):
                return word

    def reclaim_retired(self) -> None:
        with self._lock:
            still_parked = []
            for index in self._graveyard:
                if self._cells[index].word & ATC_FIELD:
                    still_parked.append(index)
                else:
                    self._free.append(index)
            self._graveyard = still_parked

    @property
    def live_count(self) -> int:
        return len(self.soda)

    def live_indices(self):
        return self.soda.indices()


class TierRuntime:
    def __init__(self, *, page_size: int = DEFAULT_PAGE_SIZE,
                 region_length: int = DEFAULT_REGION_LENGTH,
                 size_classes=DEFAULT_SIZE_CLASSES,
                 scan_interval_s: float = 120.0,
                 pr_target: float = 0.01,
                 ct_init: int = 3,
                 hinted: bool = False,
                 track_access_log: bool = True,
                 sample_scope_sizes: bool = False,
                 tai_slots: int = 256):
        self.regions = RegionManager(region_length, size_classes, page_size)
        self.soda = SodaBitmap()
        self.registry = GuideRegistry(self.soda)
        self.epoch_state = EpochState()
        self.tai = ThreadActivityIndex(tai_slots)
        self.scope = ScopeManager(self.registry, self.tai, self.epoch_state,
                                  sample_scope_sizes=sample_scope_sizes)
        self.access_log = AccessLog(page_size) if track_access_log else None
        controller = ControllerState(cold_threshold=ct_init,
                                     pr_target=pr_target,
                                     scan_interval_s=scan_interval_s)
        self.collector = Collector(
            self.registry, self.regions, self.tai, self.epoch_state,
            controller, access_log=self.access_log, hinted=hinted,
            convergence_timeout=self._convergence_timeout)

    def _convergence_timeout(self) -> float:
        # 10x the longest observed scope, floored at 100 ms.
        return max(0.1, 10.0 * self.scope.max_scope_seconds)

    def record_access(self, locator: int, length: int) -> None:
        if self.access_log is not None:
            self.access_log.record(locator, length)

    def audit(self) -> None:
        """Full-system consistency walk; raises on any drift.

        Checks region accounting, SODA/registry agreement, and that every
        live guide's heap bits match the region its locator falls in.
        """
        self.regions.audit()
        for index in self.registry.live_indices():
            cell = self.registry.cell(index)
            word = cell.load()
            heap = word_heap(word)
            if heap == HeapId.RESERVED:
                continue  # tombstoned concurrently with the walk
            locator = word & ((1 << 48) - 1)
            actual = self.regions.heap_of(locator)
            if actual != heap:
                raise AssertionError(
                    f"guide {index}: heap bits say {heap.name}, locator "
                    f"{locator:#x} lies in {actual.name}")
