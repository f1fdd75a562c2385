"""Guide-managed concurrent key-value stores.

Two structures share the same guide discipline: a striped-lock hash map and
a lock-free-style skip list.  Every public operation runs inside a scope
guard, every key/value access goes through a guide cell, and inserted data
is deep-copied into region slots so the runtime owns the authoritative
bytes.  A baseline mode bypasses guides entirely for overhead comparisons.
"""
from __future__ import annotations

import threading
import zlib
from dataclasses import dataclass

from .guideword import (ACCESSED_BIT, ATC_FIELD, LOCATOR_MASK, HeapId,
                        pack)
from .regions import RegionError
from .runtime import TierRuntime


@dataclass
class KvEntry:
    __slots__ = ("key_guide", "value_guide")
    key_guide: int
    value_guide: int


class _GuideOps:
    """Guide plumbing shared by both store structures."""

    def __init__(self, runtime: TierRuntime, baseline: bool):
        self.runtime = runtime
        self.baseline = baseline
        self.op_count = 0

    def _make_entry(self, key: bytes, value: bytes) -> KvEntry:
        rt = self.runtime
        key_loc = rt.regions.allocate(HeapId.NEW, len(key))
        rt.regions.write(key_loc, key)
        key_guide = rt.registry.create(
            pack(key_loc, heap=HeapId.NEW, accessed=True))
        value_loc = rt.regions.allocate(HeapId.NEW, len(value))
        rt.regions.write(value_loc, value)
        value_guide = rt.registry.create(
            pack(value_loc, heap=HeapId.NEW, accessed=True))
        rt.record_access(key_loc, len(key))
        rt.record_access(value_loc, len(value))
        return KvEntry(key_guide, value_guide)

    def _touch_key(self, entry: KvEntry, key_len: int) -> None:
        rt = self.runtime
        rt.scope.record_guide_use(entry.key_guide)
        locator = rt.registry.cell(entry.key_guide).dereference()
        rt.record_access(locator, key_len)

    def _swing_value(self, entry: KvEntry, value: bytes) -> None:
        """Publish a fresh NEW-heap slot for the value via guide CAS.

        Whoever succeeds a CAS frees exactly the slot named by the word it
        replaced, so racing setters and an in-flight migration can never
        free the same slot twice.
        """
        rt = self.runtime
        rt.scope.record_guide_use(entry.value_guide)
        cell = rt.registry.cell(entry.value_guide)
        new_loc = rt.regions.allocate(HeapId.NEW, len(value))
        rt.regions.write(new_loc, value)
        new_base = new_loc | ACCESSED_BIT  # heap=NEW, ciw=0, lock clear
        while True:
            word = cell.load()
            if cell.compare_and_swap(word, new_base | (word & ATC_FIELD)):
                rt.regions.free(word & LOCATOR_MASK)
                break
        rt.record_access(new_loc, len(value))

    def _read_value(self, entry: KvEntry) -> bytes | None:
        rt = self.runtime
        rt.scope.record_guide_use(entry.value_guide)
        locator = rt.registry.cell(entry.value_guide).dereference()
        try:
            data = rt.regions.read(locator)
        except RegionError:
            return None  # lost a race with delete; entry is gone
        rt.record_access(locator, len(data))
        return data

    def _retire_entry(self, entry: KvEntry) -> None:
        rt = self.runtime
        for guide in (entry.key_guide, entry.value_guide):
            rt.scope.record_guide_use(guide)
            old_word = rt.registry.tombstone(guide)
            rt.regions.free(old_word & LOCATOR_MASK)
            rt.registry.retire(guide)


class StripedGuideMap(_GuideOps):
    """Hash map with per-stripe locks; guide CAS arbitrates with migration."""

    def __init__(self, runtime: TierRuntime, stripes: int = 64,
                 baseline: bool = False):
        super().__init__(runtime, baseline)
        if stripes & (stripes - 1):
            raise ValueError("stripes must be a power of two")
        self._mask = stripes - 1
        self._stripes: list[dict[bytes, KvEntry]] = \
            [{} for _ in range(stripes)]
        self._locks = [threading.Lock() for _ in range(stripes)]
        self._plain: list[dict[bytes, bytes]] = \
            [{} for _ in range(stripes)] if baseline else []

    def _stripe(self, key: bytes) -> int:
        return zlib.crc32(key) & self._mask

    def set(self, key: bytes, value: bytes) -> None:
        self.op_count += 1
        i = self._stripe(key)
        if self.baseline:
            with self._locks[i]:
                self._plain[i][key] = bytes(value)
            return
        scope = self.runtime.scope
        scope.enter_scope()
        try:
            with self._locks[i]:
                entry = self._stripes[i].get(key)
                if entry is None:
                    entry = self._make_entry(key, value)
                    self._stripes[i][key] = entry
                    scope.record_guide_use(entry.key_guide)
                    scope.record_guide_use(entry.value_guide)
                else:
                    self._touch_key(entry, len(key))
                    self._swing_value(entry, value)
        finally:
            scope.exit_scope()

    def get(self, key: bytes) -> bytes | None:
        self.op_count += 1
        i = self._stripe(key)
        if self.baseline:
            with self._locks[i]:
                return self._plain[i].get(key)
        scope = self.runtime.scope
        scope.enter_scope()
        try:
            with self._locks[i]:
                entry = self._stripes[i].get(key)
                if entry is None:
                    return None
                self._touch_key(entry, len(key))
                return self._read_value(entry)
        finally:
            scope.exit_scope()

    def delete(self, key: bytes) -> bool:
        self.op_count += 1
        i = self._stripe(key)
        if self.baseline:
            with self._locks[i]:
                return self._plain[i].pop(key, None) is not None
        scope = self.runtime.scope
        scope.enter_scope()
        try:
            with self._locks[i]:
                entry = self._stripes[i].pop(key, None)
                if entry is None:
                    return False
                self._retire_entry(entry)
                return True
        finally:
            scope.exit_scope()

    def __len__(self) -> int:
        if self.baseline:
            return sum(len(s) for s in self._plain)
        return sum(len(s) for s in self._stripes)


# -- skip list ---------------------------------------------------------------

_MAX_LEVEL = 16


class _AtomicRef:
    __slots__ = ("ref", "_lock")

    def __init__(self, ref=None):
        self.ref = ref
        self._lock = threading.Lock()

    def get(self):
        return self.ref

    def cas(self, expected, new) -> bool:
        with self._lock:
            if self.ref is expected:
                self.ref = new
                return True
            return False


class _Node:
    __slots__ = ("key", "state", "nexts", "level")

    def __init__(self, key: bytes | None, level: int, entry=None):
        self.key = key
        self.level = level
        self.state = _AtomicRef(entry)  # live KvEntry, or None when deleted
        self.nexts = [_AtomicRef(None) for _ in range(level)]


def _node_level(key: bytes) -> int:
    # Deterministic per key so runs are reproducible regardless of thread
    # interleaving.
    h = zlib.crc32(key, 0x9E3779B9)
    level = 1
    while h & 1 and level < _MAX_LEVEL:
        level += 1
        h >>= 1
    return level


class GuideSkipList(_GuideOps):
    """Ordered map with per-level CAS insertion and logical deletion.

    Deleted keys leave their node in place with a cleared state reference;
    a later insert of the same key resurrects the node.  This avoids unlink
    races at the cost of node memory for deleted keys, which is acceptable
    for a benchmark store.
    """

    def __init__(self, runtime: TierRuntime, baseline: bool = False):
        super().__init__(runtime, baseline)
        self._head = _Node(None, _MAX_LEVEL)
        self._plain: dict[bytes, bytes] = {}
        self._plain_lock = threading.Lock()

    def _find(self, key: bytes):
        """Predecessors per level plus the matching node, if any."""
        preds = [self._head] * _MAX_LEVEL
        node = self._head
        for level in range(_MAX_LEVEL - 1, -1, -1):
            nxt = node.nexts[level].get()
            while nxt is not None and nxt.key < key:
                node = nxt
                nxt = node.nexts[level].get()
            preds[level] = node
        candidate = preds[0].nexts[0].get()
        if candidate is not None and candidate.key == key:
            return preds, candidate
        return preds, None

    def _insert_node(self, key: bytes, entry: KvEntry) -> _Node | None:
        """Link a fresh node; None means another thread linked the key."""
        level = _node_level(key)
        node = _Node(key, level, entry)
        while True:
            preds, found = self._find(key)
            if found is not None:
                return None
            succ = preds[0].nexts[0].get()
            node.nexts[0].ref = succ
            if preds[0].nexts[0].cas(succ, node):
                break
        for lvl in range(1, level):
            while True:
                preds, _ = self._find(key)
                succ = preds[lvl].nexts[lvl].get()
                if succ is node:
                    break
                node.nexts[lvl].ref = succ
                if preds[lvl].nexts[lvl].cas(succ, node):
                    break
        return node

    def set(self, key: bytes, value: bytes) -> None:
        self.op_count += 1
        if self.baseline:
            with self._plain_lock:
                self._plain[key] = bytes(value)
            return
        scope = self.runtime.scope
        scope.enter_scope()
        try:
            while True:
                _, node = self._find(key)
                if node is None:
                    entry = self._make_entry(key, value)
                    scope.record_guide_use(entry.key_guide)
                    scope.record_guide_use(entry.value_guide)
                    if self._insert_node(key, entry) is not None:
                        return
                    self._retire_entry(entry)  # lost the link race
                    continue
                entry = node.state.get()
                if entry is None:
                    fresh = self._make_entry(key, value)
                    scope.record_guide_use(fresh.key_guide)
                    scope.record_guide_use(fresh.value_guide)
                    if node.state.cas(None, fresh):
                        return
                    self._retire_entry(fresh)
                    continue
                self._touch_key(entry, len(key))
                self._swing_value(entry, value)
                return
        finally:
            scope.exit_scope()

    def get(self, key: bytes) -> bytes | None:
        self.op_count += 1
        if self.baseline:
            with self._plain_lock:
                return self._plain.get(key)
        scope = self.runtime.scope
        scope.enter_scope()
        try:
            _, node = self._find(key)
            if node is None:
                return None
            entry = node.state.get()
            if entry is None:
                return None
            self._touch_key(entry, len(key))
            return self._read_value(entry)
        finally:
            scope.exit_scope()

    def delete(self, key: bytes) -> bool:
        self.op_count += 1
        if self.baseline:
            with self._plain_lock:
                return self._plain.pop(key, None) is not None
        scope = self.runtime.scope
        scope.enter_scope()
        try:
            _, node = self._find(key)
            if node is None:
                return False
            entry = node.state.get()
            if entry is None:
                return False
            if node.state.cas(entry, None):
                self._retire_entry(entry)
                return True
            return False
        finally:
            scope.exit_scope()

    def __len__(self) -> int:
        if self.baseline:
            return len(self._plain)
        count = 0
        node = self._head.nexts[0].get()
        while node is not None:
            if node.state.get() is not None:
                count += 1
            node = node.nexts[0].get()
        return count

    def keys(self) -> list[bytes]:
        out = []
        node = self._head.nexts[0].get()
        while node is not None:
            if node.state.get() is not None:
                out.append(node.key)
            node = node.nexts[0].get()
        return out


def make_store(runtime: TierRuntime, structure: str = "hashmap",
               baseline: bool = False):
    if structure == "hashmap":
        return StripedGuideMap(runtime, baseline=baseline)
    if structure == "skiplist":
        return GuideSkipList(runtime, baseline=baseline)
    raise ValueError(f"unknown structure {structure!r}")
