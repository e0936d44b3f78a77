"""Parameter-server pull model: producer/consumer tensor table, parameter
sharding, and a synchronous data-parallel training step.

Wire protocol (stable across runs; carried over the transport framing):

* tensor transfer payload: ``u16 name length | name utf-8 | u8 dtype code
  (0 = float32, 1 = float64) | u64 element count | raw little-endian
  elements``
* message tags encode the tensor name: ``tag = role_base | (crc32(name) &
  0x0FFFFFFF)`` with role bases 0x40000000 (gradient produce), 0x50000000
  (parameter request), 0x60000000 (parameter reply).  The request payload
  is the name bytes themselves.
"""

from __future__ import annotations

import struct
import threading
import zlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import DTYPES, Tensor
from .errors import ProtocolError, ShapeError, StalledProducerError
from .transport.base import Transport

_TENSOR_HEADER = struct.Struct("<H")
_TENSOR_BODY = struct.Struct("<BQ")
_DTYPE_CODES = {"float32": 0, "float64": 1}
_DTYPE_NAMES = {v: k for k, v in _DTYPE_CODES.items()}

_TAG_PRODUCE = 0x40000000
_TAG_REQUEST = 0x50000000
_TAG_REPLY = 0x60000000


def _name_tag(base: int, name: str) -> int:
    return base | (zlib.crc32(name.encode("utf-8")) & 0x0FFFFFFF)


def encode_tensor(t: Tensor) -> bytes:
    name = t.name.encode("utf-8")
    return (_TENSOR_HEADER.pack(len(name)) + name
            + _TENSOR_BODY.pack(_DTYPE_CODES[t.dtype], t.len)
            + t.to_bytes())


def decode_tensor(raw: bytes) -> Tensor:
    (name_len,) = _TENSOR_HEADER.unpack_from(raw, 0)
    pos = _TENSOR_HEADER.size
    name = raw[pos:pos + name_len].decode("utf-8")
    pos += name_len
    code, count = _TENSOR_BODY.unpack_from(raw, pos)
    pos += _TENSOR_BODY.size
    dtype = _DTYPE_NAMES[code]
    payload = np.frombuffer(raw, dtype=DTYPES[dtype], count=count, offset=pos)
    return Tensor(name, dtype, payload)


class TensorTable:
    """Producer/consumer matching table implementing the pull model.

    ``produce`` never blocks; ``request`` blocks until its tensor arrives.
    One outstanding version per name; competing requests for the same name
    are served FIFO, exactly once per produce.
    """

    def __init__(self, request_timeout: float = 30.0):
        self._timeout = request_timeout
        self._cond = threading.Condition()
        self._pending_tensors: dict[str, Tensor] = {}
        self._pending_requests: dict[str, deque[int]] = {}
        self._delivered: dict[int, Tensor] = {}
        self._next_ticket = 0

    def produce(self, t: Tensor) -> None:
        with self._cond:
            if t.name in self._pending_tensors:
                raise ProtocolError(
                    f"tensor {t.name!r} already pending; one outstanding "
                    f"version per name"
                )
            waiters = self._pending_requests.get(t.name)
            if waiters:
                ticket = waiters.popleft()
                if not waiters:
                    del self._pending_requests[t.name]
                self._delivered[ticket] = t
                self._cond.notify_all()
            else:
                self._pending_tensors[t.name] = t

    def request(self, name: str, consumer: int = 0) -> Tensor:
        with self._cond:
            if name in self._pending_tensors:
                return self._pending_tensors.pop(name)
            ticket = self._next_ticket
            self._next_ticket += 1
            self._pending_requests.setdefault(name, deque()).append(ticket)
            ok = self._cond.wait_for(lambda: ticket in self._delivered,
                                     timeout=self._timeout)
            if not ok:
                waiters = self._pending_requests.get(name)
                if waiters and ticket in waiters:
                    waiters.remove(ticket)
                    if not waiters:
                        del self._pending_requests[name]
                raise StalledProducerError(
                    f"consumer rank {consumer} timed out waiting for "
                    f"{name!r} after {self._timeout}s"
                )
            return self._delivered.pop(ticket)

    @property
    def pending_tensor_names(self) -> list[str]:
        with self._cond:
            return sorted(self._pending_tensors)

    @property
    def pending_request_names(self) -> list[str]:
        with self._cond:
            return sorted(self._pending_requests)

    def is_empty(self) -> bool:
        with self._cond:
            return not self._pending_tensors and not self._pending_requests


@dataclass(frozen=True)
class PsTopology:
    """Worker/PS rank sets (may overlap for co-location) and the tensor
    name -> owning PS rank shard map."""

    worker_ranks: tuple[int, ...]
    ps_ranks: tuple[int, ...]
    shard_map: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "worker_ranks",
                           tuple(sorted(self.worker_ranks)))
        object.__setattr__(self, "ps_ranks", tuple(sorted(self.ps_ranks)))
        if not self.worker_ranks or not self.ps_ranks:
            raise ProtocolError("topology needs at least one worker and one PS")
        for name, owner in self.shard_map.items():
            if owner not in self.ps_ranks:
                raise ProtocolError(
                    f"shard {name!r} maps to non-PS rank {owner}"
                )

    @property
    def size(self) -> int:
        return max(max(self.worker_ranks), max(self.ps_ranks)) + 1

    @classmethod
    def create(cls, workers, ps, names) -> "PsTopology":
        """Round-robin shard map over the PS ranks in name order."""
        ps = tuple(sorted(ps))
        shard_map = {name: ps[i % len(ps)]
                     for i, name in enumerate(sorted(names))}
        return cls(tuple(workers), ps, shard_map)

    def owned_names(self, ps_rank: int) -> list[str]:
        return sorted(n for n, o in self.shard_map.items() if o == ps_rank)


def run_ps_step(rank: int, tp: Transport, topology: PsTopology,
                grads: list[Tensor] | None, params: list[Tensor],
                learning_rate: float,
                table: TensorTable | None = None) -> list[Tensor] | None:
    """One rank's side of a synchronous PS training step.

    Workers push gradient shards to the owning PS ranks, each PS averages
    in worker-rank order and applies ``params <- params - lr * mean``, then
    serves the updated shards back through its tensor table.  Per-worker
    parameter copies use a ``name#worker`` suffix so the table's
    one-version-per-name rule holds.  Returns the updated parameter list on
    worker ranks, None on pure PS ranks.
    """
    workers = topology.worker_ranks
    is_worker = rank in workers
    is_ps = rank in topology.ps_ranks
    if is_worker and grads is None:
        raise ProtocolError(f"worker rank {rank} called without gradients")
    table = table if table is not None else TensorTable()
    by_name = {t.name: t for t in params}
    names = sorted(by_name)
    if set(topology.shard_map) != set(names):
        raise ShapeError("shard map does not cover the parameter schema")

    # phase 1: workers push gradient shards (never blocks)
    if is_worker:
        grad_by_name = {t.name: t for t in grads}
        if set(grad_by_name) != set(names):
            raise ShapeError("gradient schema does not match parameters")
        for name in names:
            owner = topology.shard_map[name]
            shard = Tensor(f"{name}@{rank}", grad_by_name[name].dtype,
                           grad_by_name[name].payload)
            if owner == rank:
                table.produce(shard)
            else:
                tp.send(owner, _name_tag(_TAG_PRODUCE, name),
                        encode_tensor(shard))

    # phase 2: PS collects every worker's shards, averages, updates params
    if is_ps:
        owned = topology.owned_names(rank)
        for w in workers:
            if w == rank:
                continue
            for name in owned:
                raw = tp.recv(w, _name_tag(_TAG_PRODUCE, name))
                table.produce(decode_tensor(raw))
        for name in owned:
            contributions = [table.request(f"{name}@{w}", rank)
                             for w in workers]
            acc = contributions[0].payload.astype(np.float64)
            for c in contributions[1:]:
                acc = acc + c.payload
            mean = acc / len(workers)
            param = by_name[name]
            updated = (param.payload.astype(np.float64)
                       - learning_rate * mean).astype(DTYPES[param.dtype])
            by_name[name] = Tensor(name, param.dtype, updated)
            for w in workers:
                table.produce(Tensor(f"{name}#{w}", param.dtype, updated))

    # phase 3: workers request updated shards; PS serves from the table
    if is_worker:
        for name in names:
            owner = topology.shard_map[name]
            if owner != rank:
                tp.send(owner, _name_tag(_TAG_REQUEST, name),
                        name.encode("utf-8"))
    if is_ps:
        for w in workers:
            if w == rank:
                continue
            for name in topology.owned_names(rank):
                req = tp.recv(w, _name_tag(_TAG_REQUEST, name))
                if req.decode("utf-8") != name:
                    raise ProtocolError(
                        f"request names {req!r}, expected {name!r}"
                    )
                served = table.request(f"{name}#{w}", w)
                tp.send(w, _name_tag(_TAG_REPLY, name), encode_tensor(served))

    # phase 4: workers assemble their updated parameter copies
    if is_worker:
        updated: dict[str, Tensor] = {}
        for name in names:
            owner = topology.shard_map[name]
            if owner == rank:
                served = table.request(f"{name}#{rank}", rank)
            else:
                served = decode_tensor(
                    tp.recv(owner, _name_tag(_TAG_REPLY, name)))
            updated[name] = Tensor(name, served.dtype, served.payload)
        if not table.is_empty() and not is_ps:
            raise ProtocolError("tensor table did not quiesce after the step")
        return [updated[t.name] for t in params]
    return None


def ps_training_step(topology: PsTopology, grads_per_worker, params,
                     learning_rate: float, link=None, gamma: float = 0.0):
    """Run one synchronous step over a simulated network.

    ``grads_per_worker`` lists each worker's gradients in worker-rank
    order.  Returns (per-worker updated parameter lists, the SimNetwork).
    """
    from .transport.sim import SimNetwork

    workers = topology.worker_ranks
    if len(grads_per_worker) != len(workers):
        raise ShapeError(
            f"got gradients for {len(grads_per_worker)} workers, topology "
            f"has {len(workers)}"
        )
    grad_of = dict(zip(workers, grads_per_worker))
    net = SimNetwork(topology.size, link=link, gamma=gamma)

    def program(rank, tp):
        return run_ps_step(rank, tp, topology, grad_of.get(rank),
                           list(params), learning_rate)

    results = net.run(program)
    return [results[w] for w in workers], net
