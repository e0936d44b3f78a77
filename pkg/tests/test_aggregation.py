import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from collectium.aggregation import (FusionConfig, GradientSet, aggregate,
                                    fuse, negotiate_ready, unfuse)
from collectium.core import GroupSpec, Tensor
from collectium.errors import ShapeError
from collectium.registry import BufferKind, BufferRegistry, Policy

from conftest import run_group, sum_oracle


def grad_set(arrays_by_name, dtype="float64", iteration=0):
    return GradientSet(tuple(Tensor(name, dtype, arr)
                             for name, arr in arrays_by_name.items()),
                       iteration)


def random_grads(names_and_lens, rank, seed=0, dtype="float64"):
    tensors = []
    for name, n in names_and_lens:
        rng = np.random.default_rng([seed, hash(name) % (2**31), rank])
        values = rng.standard_normal(n)
        if dtype == "float32":
            values = values.astype(np.float32)
        tensors.append(Tensor(name, dtype, values))
    return GradientSet(tuple(tensors))


class TestNegotiate:
    def test_full_intersection(self):
        def program(rank, tp):
            return negotiate_ready(["c", "a", "b"], GroupSpec(tp.size), tp)

        results, _ = run_group(3, program)
        assert results == [["a", "b", "c"]] * 3

    def test_partial_intersection(self):
        def program(rank, tp):
            ready = ["a", "b"] if rank == 0 else ["b", "c"]
            return negotiate_ready(ready, GroupSpec(tp.size), tp)

        results, _ = run_group(2, program)
        assert results == [["b"], ["b"]]

    def test_empty_intersection(self):
        def program(rank, tp):
            ready = ["a"] if rank == 0 else ["z"]
            return negotiate_ready(ready, GroupSpec(tp.size), tp)

        results, _ = run_group(2, program)
        assert results == [[], []]

    def test_single_rank(self):
        def program(rank, tp):
            return negotiate_ready(["b", "a"], GroupSpec(1), tp)

        results, _ = run_group(1, program)
        assert results == [["a", "b"]]


class TestFuse:
    @staticmethod
    def _tensors(byte_sizes, dtype="float32"):
        itemsize = 4 if dtype == "float32" else 8
        return [Tensor(f"t{i}", dtype, np.arange(nbytes // itemsize,
                                                  dtype=np.float32))
                for i, nbytes in enumerate(byte_sizes)]

    def test_greedy_first_fit_example(self):
        buffers = fuse(self._tensors([16, 16, 48, 128]),
                       FusionConfig(threshold_bytes=64))
        groups = [[name for name, _, _ in buf.members] for buf in buffers]
        assert groups == [["t0", "t1"], ["t2"], ["t3"]]

    def test_huge_threshold_single_group(self):
        buffers = fuse(self._tensors([16, 16, 48, 128]),
                       FusionConfig(threshold_bytes=2**40))
        assert len(buffers) == 1
        assert len(buffers[0].members) == 4

    def test_threshold_one_all_singletons(self):
        buffers = fuse(self._tensors([16, 16, 48]),
                       FusionConfig(threshold_bytes=1))
        assert [len(buf.members) for buf in buffers] == [1, 1, 1]

    def test_mixed_dtypes_never_fused(self):
        tensors = [Tensor("a", "float32", np.zeros(2, dtype=np.float32)),
                   Tensor("b", "float64", np.zeros(2))]
        buffers = fuse(tensors, FusionConfig(threshold_bytes=2**20))
        assert len(buffers) == 2

    def test_unfuse_roundtrip(self):
        tensors = self._tensors([16, 48, 32])
        (buf,) = fuse(tensors, FusionConfig(threshold_bytes=2**20))
        recovered = unfuse(buf)
        assert [t.name for t in recovered] == [t.name for t in tensors]
        for orig, back in zip(tensors, recovered):
            assert np.array_equal(orig.payload, back.payload)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 64), min_size=1, max_size=30),
           st.integers(1, 512))
    def test_fusion_invariants(self, elem_counts, threshold):
        tensors = [Tensor(f"t{i:02d}", "float32",
                          np.ones(n, dtype=np.float32))
                   for i, n in enumerate(elem_counts)]
        buffers = fuse(tensors, FusionConfig(threshold_bytes=threshold))
        # every tensor appears exactly once, in order
        names = [name for buf in buffers for name, _, _ in buf.members]
        assert names == [t.name for t in tensors]
        for buf in buffers:
            if len(buf.members) > 1:
                assert buf.nbytes <= threshold
        # raising the threshold never increases the buffer count
        more = fuse(tensors, FusionConfig(threshold_bytes=threshold * 2))
        assert len(more) <= len(buffers)


class TestAggregate:
    def test_mean_of_two(self):
        def program(rank, tp):
            grads = grad_set({"g": [2.0, 4.0] if rank == 0 else [4.0, 8.0]})
            out = aggregate(grads, GroupSpec(2), tp)
            return out.get("g").payload

        results, _ = run_group(2, program)
        for payload in results:
            assert np.array_equal(payload, [3.0, 6.0])

    def test_fused_vs_unfused_bit_identical(self):
        schema = [(f"g{i:02d}", 5 + 3 * i) for i in range(10)]

        def make_program(threshold):
            def program(rank, tp):
                grads = random_grads(schema, rank, seed=4)
                out = aggregate(grads, GroupSpec(4), tp, algo="rhd_rsa",
                                cfg=FusionConfig(threshold_bytes=threshold))
                return [t.to_bytes() for t in out.tensors]
            return program

        fused, _ = run_group(4, make_program(2**30))
        unfused, _ = run_group(4, make_program(1))
        assert fused == unfused

    def test_p3_matches_oracle(self):
        schema = [("a", 17), ("b", 9)]
        per_rank = [random_grads(schema, rank, seed=9) for rank in range(3)]

        def program(rank, tp):
            return aggregate(per_rank[rank], GroupSpec(3), tp)

        results, _ = run_group(3, program)
        for name, _ in schema:
            oracle = sum_oracle([g.get(name).payload for g in per_rank]) / 3
            for out in results:
                np.testing.assert_allclose(out.get(name).payload, oracle,
                                           rtol=1e-12)

    def test_identical_grads_round_trip(self):
        values = np.random.default_rng(2).standard_normal(40)

        def program(rank, tp):
            grads = grad_set({"g": values})
            out = aggregate(grads, GroupSpec(4), tp)
            return out.get("g").payload

        results, _ = run_group(4, program)
        for payload in results:
            np.testing.assert_allclose(payload, values, rtol=1e-12)

    def test_allreduce_call_count_via_stats(self):
        schema = [(f"g{i}", 8) for i in range(6)]  # 64 B each

        def make_program(threshold):
            def program(rank, tp):
                stats = []
                aggregate(random_grads(schema, rank), GroupSpec(2), tp,
                          cfg=FusionConfig(threshold_bytes=threshold),
                          stats_out=stats)
                return len(stats)
            return program

        calls_small, _ = run_group(2, make_program(1))
        calls_large, _ = run_group(2, make_program(2**30))
        assert calls_small == [6, 6]
        assert calls_large == [1, 1]

    def test_registry_integration_one_classify_per_tensor(self):
        schema = [(f"g{i}", 4) for i in range(5)]
        registry = BufferRegistry(Policy.NO_CACHE)
        handles = {name: registry.alloc(BufferKind.DEVICE, n * 8)
                   for name, n in schema}

        def program(rank, tp):
            aggregate(random_grads(schema, rank), GroupSpec(2), tp,
                      registry=registry, handles=handles)

        run_group(2, program)
        # both ranks classify each of the 5 tensors once per step
        assert registry.stats.driver_queries == 10

    def test_duplicate_names_rejected(self):
        with pytest.raises(ShapeError):
            GradientSet((Tensor("g", "float64", [1.0]),
                         Tensor("g", "float64", [2.0])))
