"""Allreduce algorithm suite: ring RSA, recursive vector halving/doubling
RSA, a flat gather-reduce-broadcast baseline, and a byte-size dispatcher.

All algorithms run over any Transport and return bit-identical tensors on
every rank.  Message payloads are raw element bytes (no headers) so the
per-rank byte accounting matches the textbook formulas exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DTYPES, GroupSpec, ReduceOp, Tensor, chunk_partition
from .errors import ConfigError, ShapeError
from .transport.base import Transport

# Concrete algorithm ids plus the size-based selector.
ALGORITHMS = ("flat", "ring_rsa", "rhd_rsa", "auto")

# Default small/large boundary for the auto selector: 128 KB.
DEFAULT_SWITCH_BYTES = 131072

TAG_COLLECTIVE = 1


@dataclass(frozen=True)
class CollectiveStats:
    rounds: int
    messages_per_rank: int
    bytes_sent_per_rank: int


class _Counters:
    """Snapshot of one endpoint's counters, for per-call stats deltas."""

    def __init__(self, tp: Transport):
        self.messages = tp.messages_sent
        self.bytes = tp.bytes_sent

    def delta(self, tp: Transport, rounds: int) -> CollectiveStats:
        return CollectiveStats(
            rounds=rounds,
            messages_per_rank=tp.messages_sent - self.messages,
            bytes_sent_per_rank=tp.bytes_sent - self.bytes,
        )


def _check_call(t: Tensor, group: GroupSpec, tp: Transport) -> None:
    if group.size != tp.size:
        raise ShapeError(
            f"group size {group.size} does not match transport size {tp.size}"
        )


def _reduce_arrays(acc: np.ndarray, incoming: np.ndarray,
                   op: ReduceOp) -> np.ndarray:
    out = acc.copy()
    if op is ReduceOp.SUM:
        out += incoming
    else:
        np.maximum(out, incoming, out=out)
    return out


def _expect_len(incoming: np.ndarray, expected: int) -> None:
    if incoming.size != expected:
        raise ShapeError(
            f"collective shape error: peer sent {incoming.size} elements, "
            f"expected {expected}"
        )


def allreduce_flat(t: Tensor, op: ReduceOp, group: GroupSpec,
                   transport: Transport) -> Tensor:
    """Naive baseline: gather to rank 0, reduce in rank order, broadcast."""
    result, _ = _flat_with_stats(t, op, group, transport)
    return result


def _flat_with_stats(t, op, group, tp):
    _check_call(t, group, tp)
    p = group.size
    before = _Counters(tp)
    if p == 1:
        return Tensor(t.name, t.dtype, t.payload), before.delta(tp, 0)
    dtype = DTYPES[t.dtype]
    if tp.rank == 0:
        acc = t.payload.copy()
        for src in range(1, p):
            incoming = np.frombuffer(tp.recv(src, TAG_COLLECTIVE), dtype=dtype)
            _expect_len(incoming, t.len)
            acc = _reduce_arrays(acc, incoming, op)
            tp.charge_reduction(incoming.nbytes)
        raw = acc.tobytes()
        for dst in range(1, p):
            tp.send(dst, TAG_COLLECTIVE, raw)
        result = acc
    else:
        tp.send(0, TAG_COLLECTIVE, t.to_bytes())
        result = np.frombuffer(tp.recv(0, TAG_COLLECTIVE), dtype=dtype)
        _expect_len(result, t.len)
    return Tensor(t.name, t.dtype, result), before.delta(tp, 2)


def allreduce_ring(t: Tensor, op: ReduceOp, group: GroupSpec,
                   transport: Transport) -> tuple[Tensor, CollectiveStats]:
    """Ring RSA: p-1 reduce-scatter steps then p-1 allgather steps.

    Each step sends a chunk to the left neighbor and reduces the chunk
    arriving from the right; rank r finishes owning chunk r.
    """
    _check_call(t, group, transport)
    tp = transport
    p = group.size
    rank = tp.rank
    before = _Counters(tp)
    if p == 1:
        return Tensor(t.name, t.dtype, t.payload), before.delta(tp, 0)
    dtype = DTYPES[t.dtype]
    chunks = chunk_partition(t.len, p)
    data = t.payload.copy()
    left = (rank - 1) % p
    right = (rank + 1) % p

    # reduce-scatter: at step s send chunk (rank+s+1), absorb chunk (rank+s+2)
    for step in range(p - 1):
        send_idx = (rank + step + 1) % p
        recv_idx = (rank + step + 2) % p
        off, length = chunks[send_idx]
        tp.send(left, TAG_COLLECTIVE, data[off:off + length].tobytes())
        incoming = np.frombuffer(tp.recv(right, TAG_COLLECTIVE), dtype=dtype)
        off, length = chunks[recv_idx]
        _expect_len(incoming, length)
        # the traveling partial is the accumulator; local data folds in last
        data[off:off + length] = _reduce_arrays(incoming, data[off:off + length],
                                                op)
        tp.charge_reduction(incoming.nbytes)

    # allgather: at step s send chunk (rank+s), receive chunk (rank+s+1)
    for step in range(p - 1):
        send_idx = (rank + step) % p
        recv_idx = (rank + step + 1) % p
        off, length = chunks[send_idx]
        tp.send(left, TAG_COLLECTIVE, data[off:off + length].tobytes())
        incoming = np.frombuffer(tp.recv(right, TAG_COLLECTIVE), dtype=dtype)
        off, length = chunks[recv_idx]
        _expect_len(incoming, length)
        data[off:off + length] = incoming

    return Tensor(t.name, t.dtype, data), before.delta(tp, 2 * (p - 1))


def allreduce_rhd(t: Tensor, op: ReduceOp, group: GroupSpec,
                  transport: Transport) -> tuple[Tensor, CollectiveStats]:
    """Recursive vector halving/doubling RSA over XOR partners.

    For non-power-of-two p, the excess ranks fold pairwise into their even
    neighbors before the main algorithm and receive the final result after
    it.  Reduction operand order is canonical by rank, so the per-element
    combining tree never depends on where an element sits in the vector.
    """
    _check_call(t, group, transport)
    tp = transport
    p = group.size
    rank = tp.rank
    before = _Counters(tp)
    if p == 1:
        return Tensor(t.name, t.dtype, t.payload), before.delta(tp, 0)
    dtype = DTYPES[t.dtype]
    m = 1 << (p.bit_length() - 1)  # largest power of two <= p
    excess = p - m
    steps = m.bit_length() - 1
    rounds = 2 * steps + (2 if excess else 0)
    data = t.payload.copy()

    # fold phase: odd ranks among the first 2*excess idle after handing
    # their vector to the even neighbor
    if rank < 2 * excess and rank % 2 == 1:
        tp.send(rank - 1, TAG_COLLECTIVE, data.tobytes())
        result = np.frombuffer(tp.recv(rank - 1, TAG_COLLECTIVE), dtype=dtype)
        _expect_len(result, t.len)
        return Tensor(t.name, t.dtype, result), before.delta(tp, rounds)
    if rank < 2 * excess:
        incoming = np.frombuffer(tp.recv(rank + 1, TAG_COLLECTIVE), dtype=dtype)
        _expect_len(incoming, t.len)
        data = _reduce_arrays(data, incoming, op)
        tp.charge_reduction(incoming.nbytes)
        vrank = rank // 2
    else:
        vrank = rank - excess

    def real(v: int) -> int:
        return 2 * v if v < excess else v + excess

    # reduce-scatter by recursive vector halving
    lo, hi = 0, t.len
    for k in range(steps):
        partner_v = vrank ^ (1 << k)
        partner = real(partner_v)
        mid = lo + (hi - lo) // 2
        if vrank < partner_v:
            send_lo, send_hi, keep_lo, keep_hi = mid, hi, lo, mid
        else:
            send_lo, send_hi, keep_lo, keep_hi = lo, mid, mid, hi
        tp.send(partner, TAG_COLLECTIVE, data[send_lo:send_hi].tobytes())
        incoming = np.frombuffer(tp.recv(partner, TAG_COLLECTIVE), dtype=dtype)
        _expect_len(incoming, keep_hi - keep_lo)
        if vrank < partner_v:  # my subtree holds the lower ranks
            merged = _reduce_arrays(data[keep_lo:keep_hi], incoming, op)
        else:
            merged = _reduce_arrays(incoming, data[keep_lo:keep_hi], op)
        data[keep_lo:keep_hi] = merged
        tp.charge_reduction(incoming.nbytes)
        lo, hi = keep_lo, keep_hi

    # allgather by recursive doubling, reversing the halving order
    for k in reversed(range(steps)):
        partner_v = vrank ^ (1 << k)
        partner = real(partner_v)
        tp.send(partner, TAG_COLLECTIVE, data[lo:hi].tobytes())
        incoming = np.frombuffer(tp.recv(partner, TAG_COLLECTIVE), dtype=dtype)
        if vrank < partner_v:
            data[hi:hi + incoming.size] = incoming
            hi += incoming.size
        else:
            data[lo - incoming.size:lo] = incoming
            lo -= incoming.size

    if lo != 0 or hi != t.len:
        raise ShapeError("collective shape error: allgather did not "
                         "reassemble the full vector")
    if rank < 2 * excess:  # serve the folded partner its copy
        tp.send(rank + 1, TAG_COLLECTIVE, data.tobytes())
    return Tensor(t.name, t.dtype, data), before.delta(tp, rounds)


def resolve_algorithm(algo: str, nbytes: int,
                      switch_bytes: int = DEFAULT_SWITCH_BYTES) -> str:
    if algo not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algo!r}")
    if algo != "auto":
        return algo
    if switch_bytes <= 0:
        raise ConfigError("switch_bytes must be > 0 for auto dispatch")
    return "rhd_rsa" if nbytes < switch_bytes else "ring_rsa"


def allreduce(t: Tensor, op: ReduceOp, group: GroupSpec, transport: Transport,
              algo: str = "auto",
              switch_bytes: int = DEFAULT_SWITCH_BYTES
              ) -> tuple[Tensor, CollectiveStats]:
    """Dispatch to a concrete algorithm; auto picks rhd below switch_bytes."""
    concrete = resolve_algorithm(algo, t.nbytes, switch_bytes)
    if concrete == "flat":
        return _flat_with_stats(t, op, group, transport)
    if concrete == "ring_rsa":
        return allreduce_ring(t, op, group, transport)
    return allreduce_rhd(t, op, group, transport)
