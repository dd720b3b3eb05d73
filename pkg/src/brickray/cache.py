"""In-RAM block cache with LRU eviction and a pinned coarsest level.

The cache realizes the missing-data discipline of out-of-core rendering:
`resolve_block` never performs IO.  It answers every request immediately
with the finest *resident* version of the requested region — possibly a
coarser ancestor block — and queues the missing blocks for asynchronous
loading via `pump_loads`.  The coarsest pyramid level is loaded eagerly at
construction and pinned, so a fallback always exists and rendering can
never stall on disk.
"""

from __future__ import annotations

import heapq
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityTooSmall
from .volume import Block, BlockKey

__all__ = ["BlockCache", "CacheStats", "ResolvedBlock", "ResidencySnapshot",
           "LevelPool"]


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    loads: int = 0
    evictions: int = 0
    failed_loads: int = 0
    dropped_loads: int = 0
    resident_bytes: int = 0
    resident_blocks: int = 0
    pinned_bytes: int = 0
    pending: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class ResolvedBlock:
    """Answer to a block request: `key`/`block` may be a coarser ancestor."""

    requested: BlockKey
    key: BlockKey
    block: Block

    @property
    def exact(self) -> bool:
        return self.key == self.requested


@dataclass
class LevelPool:
    """All resident blocks of one level for one (channel, timepoint), padded.

    `slots[bz, by, bx]` is the index into `pool` or -1 when the block is not
    resident.  Border blocks are zero-padded to the full cubic block shape so
    kernels can index without bounds checks (samplers clamp taps to the level
    extent and therefore never read into the padding).
    """

    level: int
    grid: tuple
    slots: np.ndarray  # int32 (gz, gy, gx)
    pool: np.ndarray  # (n, bs, bs, bs) native dtype


@dataclass
class ResidencySnapshot:
    channel: int
    timepoint: int
    block_size: int
    levels: list = field(default_factory=list)  # LevelPool per pyramid level


class BlockCache:
    """LRU block cache over a volume source.

    Invariants (hold at every instant, including mid-pump):
      * resident_bytes <= capacity_bytes (eviction happens before insert);
      * every coarsest-level block is resident and never evicted;
      * resolve_block performs no IO and always returns a block covering the
        requested region.
    """

    def __init__(self, source, capacity_bytes: int):
        self.source = source
        self.meta = source.meta
        self.capacity_bytes = int(capacity_bytes)
        self._lock = threading.Lock()
        self._pinned: dict = {}  # BlockKey -> Block, never evicted
        self._lru: OrderedDict = OrderedDict()  # BlockKey -> Block, LRU order
        self._pending_set: set = set()
        self._pending_heap: list = []  # (level, seq, key)
        self._seq = 0
        self._stats = CacheStats()

        coarsest = self.meta.levels - 1
        pinned_bytes = 0
        for key in self.meta.iter_keys(level=coarsest):
            blk = self.source.read_block(key)
            pinned_bytes += blk.nbytes
            if pinned_bytes > self.capacity_bytes:
                raise CapacityTooSmall(
                    f"coarsest level needs more than {self.capacity_bytes} bytes")
            self._pinned[key] = blk
        self._stats.pinned_bytes = pinned_bytes
        self._stats.resident_bytes = pinned_bytes
        self._stats.resident_blocks = len(self._pinned)

    # -- queries -----------------------------------------------------------

    def contains(self, key: BlockKey) -> bool:
        with self._lock:
            return key in self._pinned or key in self._lru

    @property
    def pending_count(self) -> int:
        with self._lock:
            return len(self._pending_set)

    @property
    def resident_bytes(self) -> int:
        with self._lock:
            return self._stats.resident_bytes

    def stats(self) -> CacheStats:
        with self._lock:
            s = CacheStats(**self._stats.as_dict())
            s.pending = len(self._pending_set)
            return s

    # -- the resolve contract ----------------------------------------------

    def resolve_block(self, key: BlockKey) -> ResolvedBlock:
        """Finest resident block covering `key`; never blocks on IO.

        A miss (exact block absent) is counted once and the absent ancestor
        chain is queued for loading, finest level first.
        """
        self.meta.validate_key(key)
        with self._lock:
            blk = self._get_resident(key)
            if blk is not None:
                self._stats.hits += 1
                return ResolvedBlock(key, key, blk)
            self._stats.misses += 1
            # Walk coarser ancestors; the pinned coarsest level bounds the walk.
            missing = [key]
            for level in range(key.level + 1, self.meta.levels):
                anc = key.ancestor(level)
                blk = self._get_resident(anc)
                if blk is not None:
                    self._enqueue_chain(missing)
                    return ResolvedBlock(key, anc, blk)
                missing.append(anc)
            raise AssertionError("pinned coarsest level must always resolve")

    def request(self, key: BlockKey) -> None:
        """Queue `key`'s missing ancestor chain without touching stats or LRU."""
        self.meta.validate_key(key)
        with self._lock:
            missing = []
            for level in range(key.level, self.meta.levels):
                anc = key.ancestor(level)
                if self._get_resident(anc, touch=False) is None:
                    missing.append(anc)
                else:
                    break
            self._enqueue_chain(missing)

    def _get_resident(self, key: BlockKey, touch: bool = True):
        blk = self._pinned.get(key)
        if blk is not None:
            return blk
        blk = self._lru.get(key)
        if blk is not None and touch:
            self._lru.move_to_end(key)
        return blk

    def _enqueue_chain(self, keys) -> None:
        for k in keys:
            if k not in self._pending_set:
                self._pending_set.add(k)
                heapq.heappush(self._pending_heap, (k.level, self._seq, k))
                self._seq += 1

    # -- loading -----------------------------------------------------------

    def pump_loads(self, max_loads: int | None = None) -> int:
        """Load up to `max_loads` queued blocks (all queued if None).

        Finer-level requests load first; equal levels load in request order.
        Failed loads are dropped and counted, never retried implicitly.
        """
        loaded = 0
        while max_loads is None or loaded < max_loads:
            with self._lock:
                key = None
                while self._pending_heap:
                    _, _, cand = heapq.heappop(self._pending_heap)
                    if cand in self._pending_set:
                        key = cand
                        break
                if key is None:
                    return loaded
            try:
                blk = self.source.read_block(key)
            except Exception:
                with self._lock:
                    self._pending_set.discard(key)
                    self._stats.failed_loads += 1
                loaded += 1
                continue
            with self._lock:
                self._pending_set.discard(key)
                if key in self._pinned or key in self._lru:
                    loaded += 1
                    continue
                if not self._make_room(blk.nbytes):
                    self._stats.dropped_loads += 1
                    loaded += 1
                    continue
                self._lru[key] = blk
                self._stats.loads += 1
                self._stats.resident_bytes += blk.nbytes
                self._stats.resident_blocks += 1
            loaded += 1
        return loaded

    def _make_room(self, nbytes: int) -> bool:
        """Evict LRU blocks until `nbytes` fits; False if it never can."""
        if self._stats.pinned_bytes + nbytes > self.capacity_bytes:
            return False
        while self._stats.resident_bytes + nbytes > self.capacity_bytes:
            old_key, old_blk = self._lru.popitem(last=False)
            self._stats.evictions += 1
            self._stats.resident_bytes -= old_blk.nbytes
            self._stats.resident_blocks -= 1
        return True

    # -- per-frame snapshot for render kernels ------------------------------

    def residency_snapshot(self, channel: int = 0, timepoint: int = 0) -> ResidencySnapshot:
        """Padded block pools + slot tables for every level of one (c, t).

        The pools are fresh arrays (stable for the duration of a frame even
        if loads are pumped concurrently); the slot tables map block grid
        coordinates to pool rows, -1 marking non-resident blocks.
        """
        meta = self.meta
        bs = meta.block_size
        snap = ResidencySnapshot(channel, timepoint, bs)
        with self._lock:
            per_level = [[] for _ in range(meta.levels)]
            for store in (self._pinned, self._lru):
                for key, blk in store.items():
                    if key.channel == channel and key.timepoint == timepoint:
                        per_level[key.level].append((key, blk))
            for level in range(meta.levels):
                gx, gy, gz = meta.grid_dims(level)
                slots = np.full((gz, gy, gx), -1, dtype=np.int32)
                items = per_level[level]
                pool = np.zeros((len(items), bs, bs, bs), dtype=meta.np_dtype)
                for i, (key, blk) in enumerate(items):
                    ex, ey, ez = blk.extent
                    pool[i, :ez, :ey, :ex] = blk.data
                    slots[key.bz, key.by, key.bx] = i
                snap.levels.append(LevelPool(level, (gx, gy, gz), slots, pool))
        return snap
