import json

import pytest
from hypothesis import given, settings, strategies as st

from collectium.errors import InvalidHandleError, UnknownBufferError
from collectium.registry import (BufferHandle, BufferKind, BufferRegistry,
                                 Policy)


class TestAllocFree:
    def test_intercept_alloc_inserts(self):
        reg = BufferRegistry(Policy.INTERCEPT_CACHE)
        h1 = reg.alloc(BufferKind.DEVICE, 256)
        assert reg.stats.inserts == 1
        assert reg.classify(h1) is BufferKind.DEVICE
        assert reg.stats.driver_queries == 0

    def test_lowest_freed_address_reused(self):
        reg = BufferRegistry(Policy.NO_CACHE)
        h1 = reg.alloc(BufferKind.DEVICE, 256)
        reg.free(h1)
        h2 = reg.alloc(BufferKind.HOST, 64)
        assert h2.address == h1.address

    def test_live_allocations_distinct(self):
        reg = BufferRegistry(Policy.NO_CACHE)
        h1 = reg.alloc(BufferKind.HOST, 8)
        h2 = reg.alloc(BufferKind.HOST, 8)
        assert h1.address != h2.address

    def test_double_free(self):
        reg = BufferRegistry(Policy.NO_CACHE)
        h1 = reg.alloc(BufferKind.HOST, 8)
        reg.free(h1)
        with pytest.raises(InvalidHandleError):
            reg.free(h1)

    def test_bad_size_rejected(self):
        reg = BufferRegistry(Policy.NO_CACHE)
        with pytest.raises(ValueError):
            reg.alloc(BufferKind.HOST, 0)


class TestClassifyPolicies:
    def test_no_cache_queries_every_call(self):
        reg = BufferRegistry(Policy.NO_CACHE)
        h = reg.alloc(BufferKind.DEVICE, 16)
        for _ in range(5):
            assert reg.classify(h) is BufferKind.DEVICE
        assert reg.stats.driver_queries == 5
        assert reg.stats.cache_hits == 0

    def test_lazy_queries_once(self):
        reg = BufferRegistry(Policy.LAZY_CACHE)
        h = reg.alloc(BufferKind.DEVICE, 16)
        for _ in range(5):
            assert reg.classify(h) is BufferKind.DEVICE
        assert reg.stats.driver_queries == 1
        assert reg.stats.cache_hits == 4

    def test_intercept_never_queries(self):
        reg = BufferRegistry(Policy.INTERCEPT_CACHE)
        h = reg.alloc(BufferKind.DEVICE, 16)
        for _ in range(5):
            assert reg.classify(h) is BufferKind.DEVICE
        assert reg.stats.driver_queries == 0

    def test_never_allocated_address(self):
        for policy in Policy:
            reg = BufferRegistry(policy)
            with pytest.raises(UnknownBufferError):
                reg.classify(BufferHandle(0xDEAD, 8))


class TestStaleness:
    def test_lazy_goes_stale_after_reuse(self):
        reg = BufferRegistry(Policy.LAZY_CACHE)
        h1 = reg.alloc(BufferKind.HOST, 32)
        assert reg.classify(h1) is BufferKind.HOST
        reg.free(h1)
        h2 = reg.alloc(BufferKind.DEVICE, 32)
        assert h2.address == h1.address
        # the cache was never invalidated: wrong (stale) answer
        assert reg.classify(h2) is BufferKind.HOST
        assert reg.ground_truth(h2) is BufferKind.DEVICE

    def test_intercept_stays_correct_after_reuse(self):
        reg = BufferRegistry(Policy.INTERCEPT_CACHE)
        h1 = reg.alloc(BufferKind.HOST, 32)
        assert reg.classify(h1) is BufferKind.HOST
        reg.free(h1)
        assert reg.stats.invalidations == 1
        h2 = reg.alloc(BufferKind.DEVICE, 32)
        assert h2.address == h1.address
        assert reg.classify(h2) is BufferKind.DEVICE


class TestStats:
    def test_json_dump_schema(self):
        reg = BufferRegistry(Policy.LAZY_CACHE)
        h = reg.alloc(BufferKind.HOST, 8)
        reg.classify(h)
        data = json.loads(reg.stats_json())
        assert data == {"policy": "lazy_cache", "driver_queries": 1,
                        "cache_hits": 0, "inserts": 1, "invalidations": 0}

    def test_query_delay_accounting(self):
        reg = BufferRegistry(Policy.NO_CACHE, query_delay_ns=2000)
        h = reg.alloc(BufferKind.HOST, 8)
        reg.classify(h)
        reg.classify(h)
        assert reg.query_delay_seconds() == pytest.approx(4e-6)


def _replay(trace):
    """Replay one op trace against all three policies plus a ground-truth
    shadow; returns the registries and observed classification counts."""
    regs = {policy: BufferRegistry(policy) for policy in Policy}
    live = {}  # index -> per-policy handles
    classified_addresses = set()
    classify_calls = 0
    for op in trace:
        if op[0] == "alloc":
            _, idx, kind, size = op
            live[idx] = {policy: regs[policy].alloc(kind, size)
                         for policy in Policy}
        elif op[0] == "free":
            _, idx = op
            for policy in Policy:
                regs[policy].free(live[idx][policy])
            del live[idx]
        else:
            _, idx = op
            classify_calls += 1
            handles = live[idx]
            truth = regs[Policy.NO_CACHE].ground_truth(
                handles[Policy.NO_CACHE])
            classified_addresses.add(handles[Policy.NO_CACHE].address)
            # no_cache and intercept are always correct; lazy may be stale
            assert regs[Policy.NO_CACHE].classify(handles[Policy.NO_CACHE]) \
                is truth
            assert regs[Policy.INTERCEPT_CACHE].classify(
                handles[Policy.INTERCEPT_CACHE]) is truth
            regs[Policy.LAZY_CACHE].classify(handles[Policy.LAZY_CACHE])
    return regs, classify_calls, classified_addresses


@st.composite
def traces(draw):
    ops = []
    live = []
    next_idx = 0
    for _ in range(draw(st.integers(10, 120))):
        choice = draw(st.integers(0, 3))
        if choice == 0 or not live:
            kind = draw(st.sampled_from([BufferKind.HOST, BufferKind.DEVICE]))
            size = draw(st.integers(1, 4096))
            ops.append(("alloc", next_idx, kind, size))
            live.append(next_idx)
            next_idx += 1
        elif choice == 1:
            idx = draw(st.sampled_from(live))
            live.remove(idx)
            ops.append(("free", idx))
        else:
            ops.append(("classify", draw(st.sampled_from(live))))
    return ops


@settings(max_examples=60, deadline=None)
@given(traces())
def test_policy_query_bounds_hold_on_random_traces(trace):
    regs, classify_calls, addresses = _replay(trace)
    assert regs[Policy.INTERCEPT_CACHE].stats.driver_queries == 0
    assert regs[Policy.NO_CACHE].stats.driver_queries == classify_calls
    lazy_queries = regs[Policy.LAZY_CACHE].stats.driver_queries
    assert 0 <= lazy_queries <= len(addresses) <= classify_calls \
        or classify_calls == 0
