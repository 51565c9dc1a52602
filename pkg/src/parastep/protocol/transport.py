"""Message transports: in-process FIFO queues and localhost TCP sockets.

Both present the same surface to the worker: ``send(dest, frame)`` and
``recv_from(src, timeout, step)`` moving whole encoded frames, FIFO per
ordered (sender, receiver) pair, delivered exactly once or the run aborts.

The loopback backend wires one unbounded queue per ordered pair, so sends
never block. The TCP backend opens one persistent connection per ordered pair
the protocol uses — every non-root rank dials rank 0 for its noise uplink,
and rank 0 dials every other rank for the broadcast/shutdown downlink — each
announced with a HELLO frame naming the dialing rank. Localhost
experimentation only: no auth, no retry after a drop.
"""

from __future__ import annotations

import queue
import socket
import time

from ..errors import ProtocolAbortError
from .ledger import CommLedger
from .wire import (
    HEADER_BYTES,
    MSG_HELLO,
    WireMessage,
    decode_message,
    encode_message,
    payload_count,
)

DEFAULT_TIMEOUT = 30.0
_DIAL_RETRY_DELAY = 0.02


class LoopbackNetwork:
    """Shared hub of per-ordered-pair queues for p worker threads."""

    def __init__(self, size: int):
        self.size = size
        self._queues = {
            (src, dst): queue.Queue()
            for src in range(size)
            for dst in range(size)
            if src != dst
        }

    def endpoint(self, rank: int) -> "LoopbackTransport":
        return LoopbackTransport(self, rank)


class LoopbackTransport:
    def __init__(self, network: LoopbackNetwork, rank: int):
        self._network = network
        self.rank = rank
        self.size = network.size

    def setup(self, ledger: CommLedger) -> None:
        """Queues are pre-wired; no rendezvous traffic needed."""

    def send(self, dest: int, frame: bytes) -> None:
        self._network._queues[(self.rank, dest)].put(frame)

    def recv_from(self, src: int, timeout: float, step: int | None = None) -> bytes:
        try:
            return self._network._queues[(src, self.rank)].get(timeout=timeout)
        except queue.Empty:
            raise ProtocolAbortError(
                f"timed out after {timeout:g}s waiting for a frame from rank {src} "
                "— deadlock suspected",
                self.rank,
                step,
            ) from None

    def close(self) -> None:
        pass


def free_local_ports(n: int) -> list[str]:
    """Reserve n distinct ephemeral ports and return host:port strings."""
    socks = []
    hosts = []
    for _ in range(n):
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind(("127.0.0.1", 0))
        socks.append(s)
        hosts.append(f"127.0.0.1:{s.getsockname()[1]}")
    for s in socks:
        s.close()
    return hosts


def _parse_host(spec: str) -> tuple[str, int]:
    host, _, port = spec.rpartition(":")
    return host, int(port)


class TcpTransport:
    """Directional localhost connections; construct then setup() to rendezvous."""

    def __init__(self, rank: int, hosts: list[str]):
        self.rank = rank
        self.size = len(hosts)
        self._hosts = hosts
        self._send_conns: dict[int, socket.socket] = {}
        self._recv_conns: dict[int, socket.socket] = {}
        self._listener: socket.socket | None = None
        if self._expected_inbound():
            host, port = _parse_host(hosts[rank])
            self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._listener.bind((host, port))
            self._listener.listen(self.size)

    def _expected_inbound(self) -> list[int]:
        """Ranks that will dial us: everyone dials 0; 0 dials everyone."""
        if self.size == 1:
            return []
        if self.rank == 0:
            return list(range(1, self.size))
        return [0]

    def _dial_targets(self) -> list[int]:
        if self.size == 1:
            return []
        if self.rank == 0:
            return list(range(1, self.size))
        return [0]

    def _dial(self, dest: int, deadline: float) -> socket.socket:
        host, port = _parse_host(self._hosts[dest])
        while True:
            s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            try:
                s.settimeout(max(deadline - time.monotonic(), 0.01))
                s.connect((host, port))
                s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                return s
            except OSError:
                s.close()
                if time.monotonic() >= deadline:
                    raise ProtocolAbortError(
                        f"could not connect to rank {dest} at {host}:{port}", self.rank
                    ) from None
                time.sleep(_DIAL_RETRY_DELAY)

    def setup(self, ledger: CommLedger, timeout: float = DEFAULT_TIMEOUT) -> None:
        """Dial peers, announce with HELLO, and accept expected inbound dials."""
        deadline = time.monotonic() + timeout
        for dest in self._dial_targets():
            conn = self._dial(dest, deadline)
            frame = encode_message(WireMessage(MSG_HELLO, self.rank, 0))
            conn.sendall(frame)
            ledger.record(0, MSG_HELLO, 0, len(frame))
            self._send_conns[dest] = conn
        expected = set(self._expected_inbound())
        if expected:
            self._listener.settimeout(timeout)
        while expected:
            try:
                conn, _ = self._listener.accept()
            except (socket.timeout, OSError):
                raise ProtocolAbortError(
                    f"timed out waiting for connections from ranks {sorted(expected)}",
                    self.rank,
                ) from None
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            hello = self._read_frame(conn, timeout, None, src="peer")
            msg = decode_message(hello)
            if msg.msg_type != MSG_HELLO or msg.sender_rank not in expected:
                raise ProtocolAbortError(
                    f"unexpected rendezvous frame (type {msg.msg_type} "
                    f"from rank {msg.sender_rank})",
                    self.rank,
                )
            self._recv_conns[msg.sender_rank] = conn
            expected.discard(msg.sender_rank)

    def _read_exact(self, conn: socket.socket, n: int, src, step) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = conn.recv(n - len(buf))
            except socket.timeout:
                raise ProtocolAbortError(
                    f"timed out waiting for a frame from rank {src} — deadlock suspected",
                    self.rank,
                    step,
                ) from None
            if not chunk:
                raise ProtocolAbortError(
                    f"peer rank {src} disconnected mid-frame", self.rank, step
                )
            buf.extend(chunk)
        return bytes(buf)

    def _read_frame(self, conn: socket.socket, timeout: float, step, src) -> bytes:
        conn.settimeout(timeout)
        header = self._read_exact(conn, HEADER_BYTES, src, step)
        body = self._read_exact(conn, 8 * payload_count(header), src, step)
        return header + body

    def send(self, dest: int, frame: bytes) -> None:
        try:
            self._send_conns[dest].sendall(frame)
        except KeyError:
            raise ProtocolAbortError(
                f"no outbound connection to rank {dest}", self.rank
            ) from None
        except OSError as exc:
            raise ProtocolAbortError(
                f"send to rank {dest} failed: {exc}", self.rank
            ) from None

    def recv_from(self, src: int, timeout: float, step: int | None = None) -> bytes:
        try:
            conn = self._recv_conns[src]
        except KeyError:
            raise ProtocolAbortError(
                f"no inbound connection from rank {src}", self.rank, step
            ) from None
        return self._read_frame(conn, timeout, step, src)

    def close(self) -> None:
        for conn in (*self._send_conns.values(), *self._recv_conns.values()):
            try:
                conn.close()
            except OSError:
                pass
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
