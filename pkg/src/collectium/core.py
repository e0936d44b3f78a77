"""Foundational value types: tensors, process groups, reduction, chunking.

Everything here is an immutable value after construction so rank executors
can share instances freely.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidGroupError, ShapeError

# Wire dtypes are pinned little-endian so socket and simulated runs produce
# byte-identical payloads on any host.
DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
}


class ReduceOp(enum.Enum):
    SUM = "sum"
    MAX = "max"


@dataclass(frozen=True)
class Tensor:
    """Named, contiguous 1-D numeric payload; the unit of reduction/transfer."""

    name: str
    dtype: str
    payload: np.ndarray

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise ShapeError(f"unsupported dtype {self.dtype!r}")
        arr = np.ascontiguousarray(self.payload, dtype=DTYPES[self.dtype])
        if arr.ndim != 1:
            arr = arr.reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "payload", arr)

    @property
    def len(self) -> int:
        return int(self.payload.shape[0])

    @property
    def nbytes(self) -> int:
        return int(self.payload.nbytes)

    def to_bytes(self) -> bytes:
        return self.payload.tobytes()

    @classmethod
    def from_bytes(cls, name: str, dtype: str, raw: bytes) -> "Tensor":
        if dtype not in DTYPES:
            raise ShapeError(f"unsupported dtype {dtype!r}")
        itemsize = DTYPES[dtype].itemsize
        if len(raw) % itemsize:
            raise ShapeError(
                f"payload of {len(raw)} bytes is not a whole number of "
                f"{dtype} elements"
            )
        return cls(name, dtype, np.frombuffer(raw, dtype=DTYPES[dtype]))

    def with_payload(self, values) -> "Tensor":
        return Tensor(self.name, self.dtype, np.asarray(values))


@dataclass(frozen=True)
class GroupSpec:
    """A process group of ``size`` ranks numbered densely 0..size-1."""

    size: int

    def __post_init__(self):
        if self.size < 1:
            raise InvalidGroupError(f"group size must be >= 1, got {self.size}")

    @property
    def ranks(self) -> range:
        return range(self.size)

    def check_rank(self, rank: int) -> None:
        if not 0 <= rank < self.size:
            raise InvalidGroupError(
                f"rank {rank} outside group of size {self.size}"
            )


def local_reduce(a: Tensor, b: Tensor, op: ReduceOp) -> Tensor:
    """Element-wise reduce ``b`` into ``a`` (accumulator <- a op b).

    The accumulation direction is fixed so repeated runs are bit-identical.
    """
    if a.len != b.len:
        raise ShapeError(f"length mismatch: {a.len} vs {b.len}")
    if a.dtype != b.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    acc = a.payload.copy()
    if op is ReduceOp.SUM:
        acc += b.payload
    elif op is ReduceOp.MAX:
        np.maximum(acc, b.payload, out=acc)
    else:  # pragma: no cover - exhaustive enum
        raise ShapeError(f"unknown reduce op {op!r}")
    return Tensor(a.name, a.dtype, acc)


def chunk_partition(n: int, p: int) -> list[tuple[int, int]]:
    """Split ``n`` elements into ``p`` contiguous chunks.

    The first ``n mod p`` chunks get the extra element; zero-length chunks
    appear when ``n < p``.
    """
    if p < 1:
        raise InvalidGroupError(f"cannot partition over p={p} processes")
    if n < 0:
        raise ShapeError(f"negative element count {n}")
    base, rem = divmod(n, p)
    chunks = []
    offset = 0
    for i in range(p):
        length = base + (1 if i < rem else 0)
        chunks.append((offset, length))
        offset += length
    return chunks
