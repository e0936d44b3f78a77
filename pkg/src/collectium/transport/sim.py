"""Deterministic virtual-time simulated network.

All ranks run as cooperatively scheduled greenlets inside one OS thread.
A send charges the sender ``alpha + bytes*beta`` on the (src, dst) link and
the message becomes deliverable at ``max(receiver_ingress_free, send_start)
+ cost``: the receiving endpoint absorbs at most one message at a time, so
many-to-one traffic serializes at the receiver while pairwise exchanges are
full duplex.  Reductions charge ``gamma`` seconds per byte to the reducing
rank's clock.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import greenlet

from ..errors import DeadlockError, RoutingError, TransportError
from .base import Transport
from .events import EventLog


@dataclass(frozen=True)
class LinkModel:
    """alpha seconds per message, beta seconds per byte."""

    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")

    def cost(self, nbytes: int) -> float:
        return self.alpha + nbytes * self.beta


@dataclass
class _Msg:
    payload: bytes
    send_start: float
    cost: float


class SimEndpoint(Transport):
    def __init__(self, network: "SimNetwork", rank: int):
        self._net = network
        self.rank = rank
        self.size = network.size
        self.clock = 0.0
        self.ingress_free = 0.0
        # (src, tag) -> deque of in-flight messages
        self.mailbox: dict[tuple[int, int], deque[_Msg]] = {}

    def send(self, dst: int, tag: int, payload: bytes) -> None:
        net = self._net
        if not 0 <= dst < net.size:
            raise RoutingError(f"rank {self.rank}: send to unknown rank {dst}")
        if dst == self.rank:
            raise RoutingError("self-sends are not routed through transport")
        cost = net.link_for(self.rank, dst).cost(len(payload))
        start = self.clock
        self.clock += cost
        peer = net.endpoints[dst]
        peer.mailbox.setdefault((self.rank, tag), deque()).append(
            _Msg(bytes(payload), start, cost)
        )
        net.event_log.record_send(self.rank, dst, tag, len(payload), self.clock)
        net._wake_if_waiting(dst, self.rank, tag)

    def recv(self, src: int, tag: int) -> bytes:
        net = self._net
        if not 0 <= src < net.size:
            raise RoutingError(f"rank {self.rank}: recv from unknown rank {src}")
        if src == self.rank:
            raise RoutingError("self-receives are not routed through transport")
        key = (src, tag)
        queue = self.mailbox.get(key)
        if not queue:
            net._block_current(self.rank, key)
            queue = self.mailbox.get(key)
            if not queue:  # pragma: no cover - scheduler guarantees a match
                raise TransportError("resumed without a matching message")
        msg = queue.popleft()
        if not queue:
            del self.mailbox[key]
        delivered = max(self.ingress_free, msg.send_start) + msg.cost
        self.ingress_free = delivered
        self.clock = max(self.clock, delivered)
        net.event_log.record_recv(self.rank, src, tag, len(msg.payload),
                                  self.clock)
        return msg.payload

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("cannot advance the clock backwards")
        self.clock += seconds

    def charge_reduction(self, nbytes: int) -> None:
        self.clock += self._net.gamma * nbytes

    def virtual_time(self) -> float:
        return self.clock

    @property
    def messages_sent(self) -> int:
        return self._net.event_log.messages_sent(self.rank)

    @property
    def messages_received(self) -> int:
        return self._net.event_log.messages_received(self.rank)

    @property
    def bytes_sent(self) -> int:
        return self._net.event_log.bytes_sent(self.rank)

    @property
    def bytes_received(self) -> int:
        return self._net.event_log.bytes_received(self.rank)


class SimNetwork:
    """Discrete-event scheduler plus one endpoint per rank.

    ``node_map`` with ``intra_link``/``inter_link`` overrides the default
    link per rank pair (ranks on the same node use the intra-node link).
    """

    def __init__(self, size: int, link: LinkModel | None = None,
                 gamma: float = 0.0, node_map: dict[int, int] | None = None,
                 intra_link: LinkModel | None = None,
                 inter_link: LinkModel | None = None):
        if size < 1:
            raise ValueError("network needs at least one rank")
        if gamma < 0:
            raise ValueError("gamma must be non-negative")
        self.size = size
        self.link = link or LinkModel()
        self.gamma = gamma
        self.node_map = node_map
        self.intra_link = intra_link
        self.inter_link = inter_link
        self.event_log = EventLog(size)
        self.endpoints = [SimEndpoint(self, r) for r in range(size)]
        # scheduler state
        self._waiting: dict[int, tuple[int, int]] = {}
        self._ready: set[int] = set()
        self._finished: set[int] = set()
        self._scheduler: greenlet.greenlet | None = None

    def link_for(self, src: int, dst: int) -> LinkModel:
        if self.node_map is not None:
            same = self.node_map.get(src) == self.node_map.get(dst)
            override = self.intra_link if same else self.inter_link
            if override is not None:
                return override
        return self.link

    def max_virtual_time(self) -> float:
        return max(ep.clock for ep in self.endpoints)

    # -- scheduling internals ------------------------------------------------

    def _wake_if_waiting(self, rank: int, src: int, tag: int) -> None:
        if self._waiting.get(rank) == (src, tag):
            del self._waiting[rank]
            self._ready.add(rank)

    def _block_current(self, rank: int, key: tuple[int, int]) -> None:
        self._waiting[rank] = key
        self._scheduler.switch()

    def run(self, fn) -> list:
        """Run ``fn(rank, endpoint)`` on every rank to completion.

        Returns the per-rank results.  Raises the lowest-rank exception if
        any rank fails, or DeadlockError if all live ranks block forever.
        """
        if self._scheduler is not None:
            raise TransportError("network is already running a program")
        self._scheduler = greenlet.getcurrent()
        results: list = [None] * self.size
        failures: dict[int, BaseException] = {}

        def wrapper(rank: int):
            try:
                results[rank] = fn(rank, self.endpoints[rank])
            except greenlet.GreenletExit:
                pass  # torn down by the scheduler after another failure
            except BaseException as exc:  # noqa: BLE001 - reported to caller
                failures[rank] = exc
            finally:
                self._finished.add(rank)
                self._waiting.pop(rank, None)
                self._ready.discard(rank)

        tasks = [greenlet.greenlet(wrapper) for _ in range(self.size)]
        self._ready = set(range(self.size))
        self._finished = set()
        self._waiting = {}
        try:
            while len(self._finished) < self.size:
                runnable = sorted(self._ready)
                if not runnable:
                    if failures:
                        break
                    blocked = sorted(self._waiting)
                    self._abort(tasks)
                    raise DeadlockError(blocked)
                for rank in runnable:
                    self._ready.discard(rank)
                    tasks[rank].switch(rank)
                    if failures:
                        break
                if failures:
                    self._abort(tasks)
                    break
        finally:
            self._scheduler = None
            self._waiting = {}
            self._ready = set()
            self._finished = set()
        if failures:
            raise failures[min(failures)]
        return results

    def _abort(self, tasks) -> None:
        for task in tasks:
            if not task.dead:
                task.throw(greenlet.GreenletExit)


def run_simulated(size: int, fn, link: LinkModel | None = None,
                  gamma: float = 0.0, **kwargs):
    """Convenience: build a SimNetwork, run ``fn``, return (results, network)."""
    net = SimNetwork(size, link=link, gamma=gamma, **kwargs)
    results = net.run(fn)
    return results, net
