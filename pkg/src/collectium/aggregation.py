"""Horovod-style gradient aggregation: readiness negotiation, tensor fusion
below a runtime threshold, allreduce summation, and averaging.

Tensors are processed in canonical (lexicographic) name order, which removes
any dependence on backprop arrival order.  Fusion packs the concatenated
payload through the same allreduce an unfused tensor would take, and the
rank-canonical combining trees of the underlying algorithms keep per-element
fold order independent of the packing (bit-exactly so for flat and rhd).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .collectives import DEFAULT_SWITCH_BYTES, CollectiveStats, allreduce
from .core import DTYPES, GroupSpec, ReduceOp, Tensor
from .errors import ShapeError
from .transport.base import Transport

TAG_NEGOTIATE = 2

# 64 MB; tunable, best value is platform dependent.
DEFAULT_FUSION_THRESHOLD = 67108864


@dataclass(frozen=True)
class GradientSet:
    """Ordered (name, Tensor) pairs for one training iteration."""

    tensors: tuple[Tensor, ...]
    iteration: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tensors", tuple(self.tensors))
        names = [t.name for t in self.tensors]
        if len(set(names)) != len(names):
            raise ShapeError("gradient names must be unique within a set")

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.tensors]

    def get(self, name: str) -> Tensor:
        for t in self.tensors:
            if t.name == name:
                return t
        raise KeyError(name)


@dataclass(frozen=True)
class FusionConfig:
    threshold_bytes: int = DEFAULT_FUSION_THRESHOLD

    def __post_init__(self):
        if self.threshold_bytes <= 0:
            raise ValueError("fusion threshold must be positive")


@dataclass
class FusedBuffer:
    dtype: str
    payload: np.ndarray
    members: list[tuple[str, int, int]] = field(default_factory=list)  # name, offset, len

    @property
    def nbytes(self) -> int:
        return int(self.payload.nbytes)


def negotiate_ready(local_ready: list[str], group: GroupSpec,
                    transport: Transport) -> list[str]:
    """Intersection of all ranks' ready sets in lexicographic order,
    identical on every rank (gather to rank 0, then broadcast)."""
    tp = transport
    encoded = "\x00".join(sorted(local_ready)).encode("utf-8")
    if group.size == 1:
        return sorted(local_ready)
    if tp.rank == 0:
        common = set(local_ready)
        for src in range(1, group.size):
            raw = tp.recv(src, TAG_NEGOTIATE).decode("utf-8")
            common &= set(raw.split("\x00")) if raw else set()
        agreed = sorted(common)
        out = "\x00".join(agreed).encode("utf-8")
        for dst in range(1, group.size):
            tp.send(dst, TAG_NEGOTIATE, out)
        return agreed
    tp.send(0, TAG_NEGOTIATE, encoded)
    raw = tp.recv(0, TAG_NEGOTIATE).decode("utf-8")
    return raw.split("\x00") if raw else []


def fuse(ready: list[Tensor], cfg: FusionConfig) -> list[FusedBuffer]:
    """Greedy first-fit packing in the given order.

    A group closes when adding the next tensor would exceed the threshold;
    a single tensor at or above the threshold forms a singleton group.
    Mixed dtypes are never fused together.
    """
    buffers: list[FusedBuffer] = []
    current: list[Tensor] = []
    current_bytes = 0

    def flush():
        nonlocal current, current_bytes
        if not current:
            return
        payload = np.concatenate([t.payload for t in current]) \
            if len(current) > 1 else current[0].payload.copy()
        members = []
        offset = 0
        for t in current:
            members.append((t.name, offset, t.len))
            offset += t.len
        buffers.append(FusedBuffer(current[0].dtype, payload, members))
        current = []
        current_bytes = 0

    for t in ready:
        if current and (current[0].dtype != t.dtype
                        or current_bytes + t.nbytes > cfg.threshold_bytes):
            flush()
        current.append(t)
        current_bytes += t.nbytes
        if current_bytes >= cfg.threshold_bytes:
            flush()
    flush()
    return buffers


def unfuse(buf: FusedBuffer) -> list[Tensor]:
    return [Tensor(name, buf.dtype, buf.payload[off:off + length])
            for name, off, length in buf.members]


def aggregate(grads: GradientSet, group: GroupSpec, transport: Transport,
              algo: str = "auto", cfg: FusionConfig | None = None,
              switch_bytes: int = DEFAULT_SWITCH_BYTES,
              registry=None, handles: dict | None = None,
              stats_out: list[CollectiveStats] | None = None) -> GradientSet:
    """Negotiate, fuse, allreduce-sum, and average this iteration's
    gradients; every rank returns the same mean tensors.

    ``registry``/``handles`` optionally classify each gradient's buffer
    once per allreduce call, mirroring an MPI runtime checking buffer types
    on the communication path.  ``stats_out`` collects one CollectiveStats
    per issued allreduce.
    """
    cfg = cfg or FusionConfig()
    ready_names = negotiate_ready(grads.names, group, transport)
    if not ready_names:
        return GradientSet((), grads.iteration)
    ready = [grads.get(name) for name in ready_names]
    p = group.size
    out: dict[str, Tensor] = {}
    for buf in fuse(ready, cfg):
        if registry is not None and handles is not None:
            for name, _, _ in buf.members:
                registry.classify(handles[name])
        carrier = Tensor("__fused__", buf.dtype, buf.payload)
        reduced, stats = allreduce(carrier, ReduceOp.SUM, group, transport,
                                   algo=algo, switch_bytes=switch_bytes)
        if stats_out is not None:
            stats_out.append(stats)
        summed = reduced.payload
        if buf.dtype == "float32":
            # divide in float64 to bound averaging error, then round once
            mean = (summed.astype(np.float64) / p).astype(DTYPES["float32"])
        else:
            mean = summed / p
        for name, off, length in buf.members:
            out[name] = Tensor(name, buf.dtype, mean[off:off + length])
    return GradientSet(tuple(out[name] for name in ready_names),
                       grads.iteration)
