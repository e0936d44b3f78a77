"""Message/byte accounting shared by both transport backends."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Event:
    time: float  # virtual seconds in sim mode, wall clock in socket mode
    rank: int
    kind: str  # "send" | "recv"
    peer: int
    tag: int
    nbytes: int


class EventLog:
    """Ordered send/recv records plus per-rank message and byte counters."""

    def __init__(self, size: int):
        self.size = size
        self.events: list[Event] = []
        self._sent = [0] * size
        self._recvd = [0] * size
        self._sent_bytes = [0] * size
        self._recvd_bytes = [0] * size

    def record_send(self, rank: int, peer: int, tag: int, nbytes: int,
                    time: float) -> None:
        self.events.append(Event(time, rank, "send", peer, tag, nbytes))
        self._sent[rank] += 1
        self._sent_bytes[rank] += nbytes

    def record_recv(self, rank: int, peer: int, tag: int, nbytes: int,
                    time: float) -> None:
        self.events.append(Event(time, rank, "recv", peer, tag, nbytes))
        self._recvd[rank] += 1
        self._recvd_bytes[rank] += nbytes

    def messages_sent(self, rank: int) -> int:
        return self._sent[rank]

    def messages_received(self, rank: int) -> int:
        return self._recvd[rank]

    def bytes_sent(self, rank: int) -> int:
        return self._sent_bytes[rank]

    def bytes_received(self, rank: int) -> int:
        return self._recvd_bytes[rank]

    def total_messages_sent(self) -> int:
        return sum(self._sent)

    def total_messages_received(self) -> int:
        return sum(self._recvd)

    def total_bytes_sent(self) -> int:
        return sum(self._sent_bytes)

    def total_bytes_received(self) -> int:
        return sum(self._recvd_bytes)
