"""Real TCP transport for multi-process runs.

Wire framing (bit-exact, little endian): 8-byte payload length, 4-byte tag,
4-byte source rank, then the payload.  Connection establishment builds a
full mesh: every rank listens on its hostfile port, dials every lower rank
(announcing its own rank id in a 4-byte header), and accepts the rest.

Hostfile format: one ``rank host port`` line per rank, '#' comments allowed.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time

from ..errors import RoutingError, TransportError, UnsupportedOperationError
from .base import Transport
from .events import EventLog

_FRAME = struct.Struct("<QII")  # payload length, tag, src rank
_HELLO = struct.Struct("<I")


def parse_hostfile(path: str) -> dict[int, tuple[str, int]]:
    entries: dict[int, tuple[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise TransportError(
                    f"{path}:{lineno}: expected 'rank host port', got {line!r}"
                )
            rank, host, port = int(parts[0]), parts[1], int(parts[2])
            if rank in entries:
                raise TransportError(f"{path}:{lineno}: duplicate rank {rank}")
            entries[rank] = (host, port)
    if sorted(entries) != list(range(len(entries))):
        raise TransportError(
            f"{path}: ranks must be dense 0..p-1, got {sorted(entries)}"
        )
    return entries


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        try:
            part = sock.recv(n - len(buf))
        except socket.timeout as exc:
            raise TransportError("recv timed out") from exc
        except OSError as exc:
            raise TransportError(f"peer connection failed: {exc}") from exc
        if not part:
            raise TransportError("peer closed the connection")
        buf.extend(part)
    return bytes(buf)


class _Writer(threading.Thread):
    """One writer thread per peer connection; keeps sends non-blocking so
    simultaneous bidirectional bulk transfers cannot deadlock."""

    def __init__(self, sock: socket.socket, src_rank: int):
        super().__init__(daemon=True)
        self.sock = sock
        self.src_rank = src_rank
        self.queue: queue.Queue = queue.Queue()
        self.error: Exception | None = None
        self.start()

    def run(self):
        while True:
            item = self.queue.get()
            if item is None:
                return
            tag, payload = item
            try:
                self.sock.sendall(_FRAME.pack(len(payload), tag, self.src_rank))
                if payload:
                    self.sock.sendall(payload)
            except OSError as exc:
                self.error = TransportError(f"send failed: {exc}")
                return

    def stop(self):
        self.queue.put(None)


class SocketEndpoint(Transport):
    def __init__(self, rank: int, hosts: dict[int, tuple[str, int]],
                 recv_timeout: float = 30.0,
                 rendezvous_timeout: float = 30.0):
        self.rank = rank
        self.size = len(hosts)
        if rank not in hosts:
            raise RoutingError(f"rank {rank} missing from hostfile")
        self._recv_timeout = recv_timeout
        self._log = EventLog(self.size)
        self._pending: dict[tuple[int, int], list[bytes]] = {}
        self._conns: dict[int, socket.socket] = {}
        self._writers: dict[int, _Writer] = {}
        if self.size > 1:
            self._rendezvous(hosts, rendezvous_timeout)

    def _rendezvous(self, hosts, timeout: float) -> None:
        host, port = hosts[self.rank]
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            listener.bind((host, port))
            listener.listen(self.size)
        except OSError as exc:
            listener.close()
            raise TransportError(f"rank {self.rank}: cannot listen on "
                                 f"{host}:{port}: {exc}") from exc
        deadline = time.monotonic() + timeout
        try:
            for peer in range(self.rank):
                self._dial(peer, hosts[peer], deadline)
            listener.settimeout(1.0)
            while len(self._conns) < self.size - 1:
                if time.monotonic() > deadline:
                    raise TransportError(
                        f"rank {self.rank}: rendezvous timed out waiting for "
                        f"{self.size - 1 - len(self._conns)} peer(s)"
                    )
                try:
                    conn, _ = listener.accept()
                except socket.timeout:
                    continue
                conn.settimeout(self._recv_timeout)
                (peer,) = _HELLO.unpack(_recv_exact(conn, _HELLO.size))
                self._register(peer, conn)
        except Exception:
            self.close()
            raise
        finally:
            listener.close()

    def _dial(self, peer: int, addr: tuple[str, int], deadline: float) -> None:
        while True:
            sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            try:
                sock.settimeout(max(0.1, deadline - time.monotonic()))
                sock.connect(addr)
                sock.settimeout(self._recv_timeout)
                sock.sendall(_HELLO.pack(self.rank))
                self._register(peer, sock)
                return
            except OSError:
                sock.close()
                if time.monotonic() > deadline:
                    raise TransportError(
                        f"rank {self.rank}: rendezvous with rank {peer} at "
                        f"{addr[0]}:{addr[1]} timed out"
                    ) from None
                time.sleep(0.05)

    def _register(self, peer: int, sock: socket.socket) -> None:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._conns[peer] = sock
        self._writers[peer] = _Writer(sock, self.rank)

    def send(self, dst: int, tag: int, payload: bytes) -> None:
        if not 0 <= dst < self.size:
            raise RoutingError(f"rank {self.rank}: send to unknown rank {dst}")
        if dst == self.rank:
            raise RoutingError("self-sends are not routed through transport")
        writer = self._writers[dst]
        if writer.error is not None:
            raise writer.error
        writer.queue.put((tag, bytes(payload)))
        self._log.record_send(self.rank, dst, tag, len(payload), time.time())

    def recv(self, src: int, tag: int) -> bytes:
        if not 0 <= src < self.size:
            raise RoutingError(f"rank {self.rank}: recv from unknown rank {src}")
        if src == self.rank:
            raise RoutingError("self-receives are not routed through transport")
        key = (src, tag)
        while True:
            stash = self._pending.get(key)
            if stash:
                payload = stash.pop(0)
                break
            sock = self._conns[src]
            length, got_tag, got_src = _FRAME.unpack(
                _recv_exact(sock, _FRAME.size))
            payload = _recv_exact(sock, length) if length else b""
            if got_src != src:
                raise TransportError(
                    f"frame from rank {got_src} arrived on rank {src}'s link"
                )
            if got_tag == tag:
                break
            self._pending.setdefault((src, got_tag), []).append(payload)
        self._log.record_recv(self.rank, src, tag, len(payload), time.time())
        return payload

    def advance(self, seconds: float) -> None:
        # Socket mode spends the modeled compute time for real, so measured
        # throughput stays comparable with simulated runs.
        if seconds > 0:
            time.sleep(seconds)

    def charge_reduction(self, nbytes: int) -> None:
        pass  # reduction time is measured, not modeled, on real transports

    def virtual_time(self) -> float:
        raise UnsupportedOperationError(
            "virtual_time is only defined on the simulated backend"
        )

    def close(self) -> None:
        for writer in self._writers.values():
            writer.stop()
        for writer in self._writers.values():
            writer.join(timeout=5.0)
        for sock in self._conns.values():
            try:
                sock.close()
            except OSError:
                pass
        self._conns.clear()
        self._writers.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def messages_sent(self) -> int:
        return self._log.messages_sent(self.rank)

    @property
    def messages_received(self) -> int:
        return self._log.messages_received(self.rank)

    @property
    def bytes_sent(self) -> int:
        return self._log.bytes_sent(self.rank)

    @property
    def bytes_received(self) -> int:
        return self._log.bytes_received(self.rank)
