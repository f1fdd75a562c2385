"""Temperature-segregated arena allocator with page-level accounting.

Each heap temperature (NEW, HOT, COLD) gets one contiguous reserved range of
the 48-bit managed space and sub-allocates object slots from power-of-two
size classes.  Pages are materialized lazily; each carries live-byte and
live-slot counts plus a simulated residency flag, so reclaim advice can be
modeled without touching the OS.
"""
from __future__ import annotations

import bisect
import heapq
import threading
from dataclasses import dataclass
from enum import Enum

from .guideword import LOCATOR_MASK, HeapId

DEFAULT_PAGE_SIZE = 4096
DEFAULT_REGION_LENGTH = 4 << 30  # 4 GiB per heap
DEFAULT_SIZE_CLASSES = tuple(1 << i for i in range(4, 17))  # 16 B .. 64 KiB


class RegionError(RuntimeError):
    pass


class RegionExhausted(RegionError):
    pass


class DoubleFreeError(RegionError):
    pass


class HintKind(str, Enum):
    COLD_ADVICE = "COLD_ADVICE"
    PAGEOUT_ADVICE = "PAGEOUT_ADVICE"
    HUGEPAGE_ADVICE = "HUGEPAGE_ADVICE"


@dataclass
class HintEvent:
    kind: HintKind
    heap: HeapId
    start_page: int
    end_page: int  # exclusive
    window: int

    def format_line(self) -> str:
        return (f"{self.window},{self.heap.name},{self.kind.value},"
                f"{self.start_page},{self.end_page}")


@dataclass
class ObjectSlot:
    size_class: int
    length: int
    data: bytes = b""


class _Page:
    __slots__ = ("live_bytes", "live_slots", "resident")

    def __init__(self):
        self.live_bytes = 0
        self.live_slots = 0
        self.resident = False


class HeapRegion:
    """One heap's reserved range with size-class free lists.

    Free slots are kept in per-class min-heaps so allocation always returns
    the lowest-addressed free slot of the smallest sufficient class, falling
    back to bump allocation at the end of the used prefix.
    """

    def __init__(self, heap: HeapId, base: int, length: int,
                 size_classes=DEFAULT_SIZE_CLASSES,
                 page_size: int = DEFAULT_PAGE_SIZE):
        if length % page_size:
            raise RegionError("region length must be page aligned")
        if base + length - 1 > LOCATOR_MASK:
            raise RegionError("region exceeds the 48-bit managed space")
        self.heap = heap
        self.base = base
        self.length = length
        self.page_size = page_size
        self.size_classes = sorted(size_classes)
        self._free: dict[int, list[int]] = {c: [] for c in self.size_classes}
        self._bump = 0
        self._live: dict[int, ObjectSlot] = {}  # region-relative offset -> slot
        self._pages: dict[int, _Page] = {}  # absolute page index
        self._lock = threading.Lock()
        self.live_bytes = 0

    def contains(self, locator: int) -> bool:
        return self.base <= locator < self.base + self.length

    def _size_class_for(self, length: int) -> int:
        i = bisect.bisect_left(self.size_classes, length)
        if i == len(self.size_classes):
            raise RegionError(f"payload of {length} B exceeds the largest "
                              f"size class ({self.size_classes[-1]} B)")
        return self.size_classes[i]

    def _account(self, locator: int, length: int, sign: int) -> None:
        ps = self.page_size
        end = locator + length
        for page in range(locator // ps, (end - 1) // ps + 1):
            rec = self._pages.get(page)
            if rec is None:
                rec = self._pages[page] = _Page()
            overlap = min(end, (page + 1) * ps) - max(locator, page * ps)
            rec.live_bytes += sign * overlap
            rec.live_slots += sign
            if sign > 0:
                rec.resident = True
        self.live_bytes += sign * length

    def allocate(self, length: int) -> int:
        """Return the absolute locator of a slot holding `length` bytes."""
        if length <= 0:
            raise RegionError("allocation length must be positive")
        size_class = self._size_class_for(length)
        with self._lock:
            free = self._free[size_class]
            if free:
                offset = heapq.heappop(free)
            else:
                offset = self._bump
                if offset + size_class > self.length:
                    raise RegionExhausted(
                        f"{self.heap.name} region exhausted")
                self._bump = offset + size_class
            self._live[offset] = ObjectSlot(size_class, length)
            locator = self.base + offset
            self._account(locator, length, +1)
            return locator

    def free(self, locator: int) -> None:
        offset = locator - self.base
        with self._lock:
            slot = self._live.pop(offset, None)
            if slot is None:
                raise DoubleFreeError(
                    f"free of non-live locator {locator:#x} in "
                    f"{self.heap.name}")
            self._account(locator, slot.length, -1)
            heapq.heappush(self._free[slot.size_class], offset)

    def write(self, locator: int, data: bytes) -> None:
        slot = self._live.get(locator - self.base)
        if slot is None:
            raise RegionError(f"write to non-live locator {locator:#x}")
        if len(data) != slot.length:
            raise RegionError("payload length does not match the slot")
        slot.data = data

    def read(self, locator: int) -> bytes:
        slot = self._live.get(locator - self.base)
        if slot is None:
            raise RegionError(f"read of non-live locator {locator:#x}")
        return slot.data

    def slot(self, locator: int) -> ObjectSlot:
        slot = self._live.get(locator - self.base)
        if slot is None:
            raise RegionError(f"no live slot at {locator:#x}")
        return slot

    @property
    def live_slot_count(self) -> int:
        return len(self._live)

    def page_stats(self) -> dict:
        resident = 0
        hist = [0] * 10
        for rec in list(self._pages.values()):
            if rec.resident:
                resident += 1
            if rec.live_bytes > 0:
                occupancy = rec.live_bytes / self.page_size
                hist[min(9, int(occupancy * 10))] += 1
        return {
            "total_pages": self.length // self.page_size,
            "resident_pages": resident,
            "live_bytes": self.live_bytes,
            "occupancy_histogram": hist,
        }

    def resident_bytes(self) -> int:
        return sum(1 for r in self._pages.values() if r.resident) \
            * self.page_size

    def emit_hints(self, kind: HintKind, eligible=None,
                   window: int = 0) -> list[HintEvent]:
        """Coalesce eligible pages into maximal ranges of hint events.

        With eligible=None a single event covering the whole region is
        emitted.  PAGEOUT_ADVICE clears the residency flag of the hinted
        pages (simulated reclamation).
        """
        ps = self.page_size
        if eligible is None:
            start = self.base // ps
            events = [HintEvent(kind, self.heap, start,
                                start + self.length // ps, window)]
            if kind is HintKind.PAGEOUT_ADVICE:
                with self._lock:
                    for rec in self._pages.values():
                        rec.resident = False
            return events

        with self._lock:
            pages = sorted(p for p, rec in self._pages.items()
                           if eligible(p, rec))
            events: list[HintEvent] = []
            for page in pages:
                if events and events[-1].end_page == page:
                    events[-1].end_page = page + 1
                else:
                    events.append(HintEvent(kind, self.heap, page,
                                            page + 1, window))
                if kind is HintKind.PAGEOUT_ADVICE:
                    self._pages[page].resident = False
            return events

    def audit(self) -> None:
        """Recompute page accounting from live slots and compare."""
        expected_bytes: dict[int, int] = {}
        expected_slots: dict[int, int] = {}
        ps = self.page_size
        with self._lock:
            total = 0
            for offset, slot in self._live.items():
                locator = self.base + offset
                end = locator + slot.length
                total += slot.length
                for page in range(locator // ps, (end - 1) // ps + 1):
                    overlap = min(end, (page + 1) * ps) \
                        - max(locator, page * ps)
                    expected_bytes[page] = expected_bytes.get(page, 0) + overlap
                    expected_slots[page] = expected_slots.get(page, 0) + 1
            if total != self.live_bytes:
                raise RegionError("live byte accounting drifted")
            for page, rec in self._pages.items():
                if rec.live_bytes != expected_bytes.get(page, 0) \
                        or rec.live_slots != expected_slots.get(page, 0):
                    raise RegionError(f"page {page} accounting drifted")
            # Empty materialized pages lose simulated residency on audit.
            for page, rec in self._pages.items():
                if rec.live_slots == 0:
                    rec.resident = False


class RegionManager:
    """The three temperature regions packed back to back in locator space."""

    def __init__(self, region_length: int = DEFAULT_REGION_LENGTH,
                 size_classes=DEFAULT_SIZE_CLASSES,
                 page_size: int = DEFAULT_PAGE_SIZE):
        if 3 * region_length - 1 > LOCATOR_MASK:
            raise RegionError("regions overflow the 48-bit managed space")
        self.page_size = page_size
        self.regions = {
            heap: HeapRegion(heap, i * region_length, region_length,
                             size_classes, page_size)
            for i, heap in enumerate((HeapId.NEW, HeapId.HOT, HeapId.COLD))
        }
        self._order = [self.regions[h] for h in
                       (HeapId.NEW, HeapId.HOT, HeapId.COLD)]

    def region(self, heap: HeapId) -> HeapRegion:
        return self.regions[heap]

    def heap_of(self, locator: int) -> HeapId:
        for region in self._order:
            if region.contains(locator):
                return region.heap
        raise RegionError(f"locator {locator:#x} outside every region")

    def allocate(self, heap: HeapId, length: int) -> int:
        return self.regions[heap].allocate(length)

    def free(self, locator: int) -> None:
        self._region_of(locator).free(locator)

    def read(self, locator: int) -> bytes:
        return self._region_of(locator).read(locator)

    def write(self, locator: int, data: bytes) -> None:
        self._region_of(locator).write(locator, data)

    def _region_of(self, locator: int) -> HeapRegion:
        return self.regions[self.heap_of(locator)]

    def page_stats(self, heap: HeapId) -> dict:
        return self.regions[heap].page_stats()

    def emit_hints(self, heap: HeapId, kind: HintKind, eligible=None,
                   window: int = 0) -> list[HintEvent]:
        return self.regions[heap].emit_hints(kind, eligible, window)

    def live_slot_count(self) -> int:
        return sum(r.live_slot_count for r in self._order)

    def audit(self) -> None:
        for region in self._order:
            region.audit()


def reserve_regions(region_length: int = DEFAULT_REGION_LENGTH,
                    size_classes=DEFAULT_SIZE_CLASSES,
                    page_size: int = DEFAULT_PAGE_SIZE) -> RegionManager:
    return RegionManager(region_length, size_classes, page_size)


def write_hint_log(events: list[HintEvent], path) -> None:
    with open(path, "w") as fh:
        for event in events:
            fh.write(event.format_line() + "\n")
