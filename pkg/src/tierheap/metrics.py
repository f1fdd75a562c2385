"""Layout-quality metrics: page utilization, heap byte split, reclaim replay.

Utilization is counted at 64-byte line granularity: for a scan window T, the
aggregate is sum over touched pages of unique-lines-touched*64 divided by the
combined capacity of those pages.  Pages with no access in the window are
excluded from both sums.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .guideword import HeapId

LINE_SIZE = 64


@dataclass
class AccessLogEntry:
    window: int
    page: int
    line_mask: int


@dataclass
class UtilizationReport:
    per_page: dict[int, float]
    aggregate: float
    cdf_points: list[tuple[float, float]] = field(default_factory=list)


class AccessLog:
    """Windowed record of which 64 B lines of which pages were touched.

    record() is called from mutator hot paths without a lock; a racing pair
    of updates to the same page can drop a duplicate line mark, which only
    understates utilization marginally and never corrupts the structure.
    """

    def __init__(self, page_size: int = 4096):
        self.page_size = page_size
        self.window = 1
        self._windows: dict[int, dict[int, int]] = {1: {}}
        self._current: dict[int, int] = self._windows[1]

    def record(self, offset: int, length: int) -> None:
        if length <= 0:
            return
        ps = self.page_size
        current = self._current
        end = offset + length
        for page in range(offset // ps, (end - 1) // ps + 1):
            page_start = page * ps
            a = max(offset, page_start) - page_start
            b = min(end, page_start + ps) - page_start
            first = a // LINE_SIZE
            last = (b - 1) // LINE_SIZE
            mask = ((1 << (last - first + 1)) - 1) << first
            current[page] = current.get(page, 0) | mask

    def advance(self) -> int:
        """Close the current window and start the next; returns its index."""
        self.window += 1
        self._current = self._windows[self.window] = {}
        return self.window

    def entries(self, window: int | None = None) -> list[AccessLogEntry]:
        if window is not None:
            masks = self._windows.get(window, {})
            return [AccessLogEntry(window, p, m) for p, m in masks.items()]
        out = []
        for w in sorted(self._windows):
            out.extend(AccessLogEntry(w, p, m)
                       for p, m in self._windows[w].items())
        return out

    def windows(self) -> list[int]:
        return sorted(self._windows)


def page_utilization(entries: list[AccessLogEntry],
                     page_size: int = 4096) -> UtilizationReport:
    """Aggregate and per-page utilization over one window's access log."""
    merged: dict[int, int] = {}
    for entry in entries:
        merged[entry.page] = merged.get(entry.page, 0) | entry.line_mask
    per_page = {}
    touched_bytes = 0
    for page, mask in merged.items():
        used = mask.bit_count() * LINE_SIZE
        per_page[page] = used / page_size
        touched_bytes += used
    if not merged:
        return UtilizationReport({}, 0.0, [])
    aggregate = touched_bytes / (len(merged) * page_size)
    values = sorted(per_page.values())
    n = len(values)
    cdf = [(v, (i + 1) / n) for i, v in enumerate(values)]
    return UtilizationReport(per_page, aggregate, cdf)


def heap_byte_distribution(region_manager) -> dict:
    live = {}
    resident = {}
    for heap in (HeapId.NEW, HeapId.HOT, HeapId.COLD):
        region = region_manager.region(heap)
        live[heap.name] = region.live_bytes
        resident[heap.name] = region.resident_bytes()
    return {"live_bytes": live, "resident_bytes": resident}


def simulate_reclaim(reclaimed_pages, entries: list[AccessLogEntry],
                     scan_interval_s: float) -> dict:
    """Replay an access log against a set of reclaimed pages.

    A refault is the first access to a reclaimed page in the subsequent log.
    The rate is normalized like the promotion-rate signal so it can be
    compared against the controller target: per window, refaulted pages over
    unique pages touched, scaled to a per-minute fraction, then averaged over
    the windows spanned by the log.
    """
    reclaimed = set(reclaimed_pages)
    by_window: dict[int, set[int]] = {}
    for entry in entries:
        by_window.setdefault(entry.window, set()).add(entry.page)
    refaulted: set[int] = set()
    window_rates = []
    for window in sorted(by_window):
        pages = by_window[window]
        hits = {p for p in pages if p in reclaimed and p not in refaulted}
        refaulted |= hits
        if pages:
            window_rates.append(len(hits) / len(pages)
                                * 60.0 / scan_interval_s)
        else:
            window_rates.append(0.0)
    rate = sum(window_rates) / len(window_rates) if window_rates else 0.0
    return {"refaults": len(refaulted), "refault_rate_per_min": rate}


def write_cdf_csv(report: UtilizationReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utilization", "cum_fraction"])
        for utilization, cum in report.cdf_points:
            writer.writerow([f"{utilization:.6f}", f"{cum:.6f}"])
