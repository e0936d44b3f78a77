"""Abstract point-to-point endpoint used by every collective algorithm."""

from __future__ import annotations

import abc


class Transport(abc.ABC):
    """One rank's endpoint into a group of ``size`` peers.

    An endpoint may be driven by only one logical thread of execution at a
    time; distinct ranks' endpoints operate concurrently.
    """

    rank: int
    size: int

    @abc.abstractmethod
    def send(self, dst: int, tag: int, payload: bytes) -> None:
        """Enqueue ``payload`` for ``dst``; never blocks on the peer."""

    @abc.abstractmethod
    def recv(self, src: int, tag: int) -> bytes:
        """Block until the matching (src, tag) message arrives (FIFO per
        (src, dst, tag) triple)."""

    @abc.abstractmethod
    def advance(self, seconds: float) -> None:
        """Charge local compute time: advances the virtual clock in sim
        mode, sleeps in socket mode."""

    @abc.abstractmethod
    def charge_reduction(self, nbytes: int) -> None:
        """Charge local reduction cost for ``nbytes`` reduced bytes (sim
        mode charges gamma per byte; socket mode measures real time and
        charges nothing)."""

    @abc.abstractmethod
    def virtual_time(self) -> float:
        """Current virtual clock (simulated backend only)."""

    # byte/message accounting, for CollectiveStats snapshots
    @property
    @abc.abstractmethod
    def messages_sent(self) -> int: ...

    @property
    @abc.abstractmethod
    def messages_received(self) -> int: ...

    @property
    @abc.abstractmethod
    def bytes_sent(self) -> int: ...

    @property
    @abc.abstractmethod
    def bytes_received(self) -> int: ...
