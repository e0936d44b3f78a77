"""Buffer-kind registry: classify opaque buffer handles as host or device
memory under three policies, counting simulated driver queries.

The "driver" is a ground-truth map over live allocations plus a per-query
cost counter.  The allocator reuses the lowest freed address first, which
makes the classic stale-cache scenario (free, then realloc of the same
address with a different kind) deterministic.
"""

from __future__ import annotations

import enum
import heapq
import json
import threading
from dataclasses import asdict, dataclass

from .errors import InvalidHandleError, UnknownBufferError

_BASE_ADDRESS = 0x1000

# Placeholder for the per-query driver latency; the real cost is platform
# dependent, so it is configurable and feeds the cost model as plain seconds.
DEFAULT_QUERY_DELAY_NS = 1000


class BufferKind(enum.Enum):
    HOST = "host"
    DEVICE = "device"


class Policy(enum.Enum):
    NO_CACHE = "no_cache"
    LAZY_CACHE = "lazy_cache"
    INTERCEPT_CACHE = "intercept_cache"


@dataclass(frozen=True)
class BufferHandle:
    address: int
    size: int


@dataclass
class RegistryStats:
    driver_queries: int = 0
    cache_hits: int = 0
    inserts: int = 0
    invalidations: int = 0


class BufferRegistry:
    """Handle -> kind map with a pluggable classification policy.

    All operations are serialized by a lock so concurrent rank executors can
    share one registry.
    """

    def __init__(self, policy: Policy | str = Policy.NO_CACHE,
                 query_delay_ns: int = DEFAULT_QUERY_DELAY_NS):
        self.policy = Policy(policy)
        self.query_delay_ns = query_delay_ns
        self.stats = RegistryStats()
        self._lock = threading.Lock()
        self._live: dict[int, BufferHandle] = {}
        self._kinds: dict[int, BufferKind] = {}  # driver ground truth
        self._cache: dict[int, BufferKind] = {}
        self._freed: list[int] = []  # min-heap of reusable addresses
        self._next_address = _BASE_ADDRESS

    def alloc(self, kind: BufferKind, size: int) -> BufferHandle:
        if size <= 0:
            raise ValueError(f"allocation size must be positive, got {size}")
        with self._lock:
            if self._freed:
                address = heapq.heappop(self._freed)
            else:
                address = self._next_address
                self._next_address += 1
            handle = BufferHandle(address, size)
            self._live[address] = handle
            self._kinds[address] = kind
            if self.policy is Policy.INTERCEPT_CACHE:
                self._cache[address] = kind
                self.stats.inserts += 1
            return handle

    def free(self, handle: BufferHandle) -> None:
        with self._lock:
            if self._live.get(handle.address) is not handle:
                raise InvalidHandleError(
                    f"free of dead or unknown handle at address "
                    f"{handle.address:#x}"
                )
            del self._live[handle.address]
            del self._kinds[handle.address]
            heapq.heappush(self._freed, handle.address)
            if self.policy is Policy.INTERCEPT_CACHE:
                del self._cache[handle.address]
                self.stats.invalidations += 1
            # lazy_cache deliberately keeps the entry: the runtime never
            # hears about the free, which is exactly the staleness flaw

    def classify(self, handle: BufferHandle) -> BufferKind:
        with self._lock:
            address = handle.address
            if self.policy is Policy.NO_CACHE:
                return self._driver_query(address)
            if self.policy is Policy.LAZY_CACHE:
                if address in self._cache:
                    self.stats.cache_hits += 1
                    return self._cache[address]
                kind = self._driver_query(address)
                self._cache[address] = kind
                self.stats.inserts += 1
                return kind
            # intercept: the cache is authoritative, no driver traffic ever
            if address not in self._cache:
                raise UnknownBufferError(
                    f"classify of never-allocated address {address:#x}"
                )
            self.stats.cache_hits += 1
            return self._cache[address]

    def _driver_query(self, address: int) -> BufferKind:
        self.stats.driver_queries += 1
        if address not in self._kinds:
            raise UnknownBufferError(
                f"classify of never-allocated address {address:#x}"
            )
        return self._kinds[address]

    def ground_truth(self, handle: BufferHandle) -> BufferKind:
        """Actual kind of the live allocation at this address (test oracle;
        does not count as a driver query)."""
        with self._lock:
            if handle.address not in self._kinds:
                raise UnknownBufferError(
                    f"no live allocation at address {handle.address:#x}"
                )
            return self._kinds[handle.address]

    def query_delay_seconds(self) -> float:
        """Total simulated driver time spent so far."""
        return self.stats.driver_queries * self.query_delay_ns * 1e-9

    def stats_dict(self) -> dict:
        return {"policy": self.policy.value, **asdict(self.stats)}

    def stats_json(self) -> str:
        return json.dumps(self.stats_dict())
