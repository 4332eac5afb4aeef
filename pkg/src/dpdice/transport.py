"""Message framing and point-to-point channels between protocol parties.

Frame layout (little-endian)::

    u32  length of everything after this field
    u8   message type
    16s  session id
    u16  sender, u16 receiver, u8 phase
    u32  count, then count field elements of 16 bytes each
    ...  trailing opaque bytes (Hello digest, Abort reason)

Both transports move encoded frames, so byte counters reflect what a real
network would carry. Delivery is reliable and FIFO per (sender, receiver).
"""

from __future__ import annotations

import enum
import queue
import socket
import struct
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

from .errors import TransportError

SESSION_BYTES = 16
ELEM_BYTES = 16
MAX_FRAME = 1 << 30

_LEN = struct.Struct("<I")
_HEAD = struct.Struct("<B16sHHBI")


class MsgType(enum.IntEnum):
    HELLO = 1
    MASK_SHARE = 2
    MASKED_INPUT = 3
    REVEAL_SHARE = 4
    MAC_SIGMA_COMMIT = 5
    MAC_SIGMA_OPEN = 6
    ABORT = 7
    RESULT = 8


class Phase(enum.IntEnum):
    SETUP = 0
    COLLECTION = 1
    AGGREGATION = 2
    MAC_CHECK = 3
    OUTPUT = 4

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class WireMessage:
    kind: MsgType
    session_id: bytes
    sender: int
    receiver: int
    phase: Phase
    values: Tuple[int, ...] = ()
    data: bytes = b""

    def encode(self) -> bytes:
        if len(self.session_id) != SESSION_BYTES:
            raise TransportError("session id must be 16 bytes")
        body = b"".join(v.to_bytes(ELEM_BYTES, "little") for v in self.values)
        rest = _HEAD.pack(self.kind, self.session_id, self.sender, self.receiver,
                          self.phase, len(self.values)) + body + self.data
        return _LEN.pack(len(rest)) + rest

    @classmethod
    def decode(cls, frame: bytes) -> "WireMessage":
        """Decode a full frame, length prefix included."""
        if len(frame) < _LEN.size + _HEAD.size:
            raise TransportError("short frame")
        (n,) = _LEN.unpack_from(frame)
        if n != len(frame) - _LEN.size:
            raise TransportError(f"frame length field {n} != payload {len(frame) - _LEN.size}")
        kind, sid, snd, rcv, ph, count = _HEAD.unpack_from(frame, _LEN.size)
        off = _LEN.size + _HEAD.size
        end = off + count * ELEM_BYTES
        if end > len(frame):
            raise TransportError("element count overruns frame")
        values = tuple(int.from_bytes(frame[i:i + ELEM_BYTES], "little")
                       for i in range(off, end, ELEM_BYTES))
        try:
            return cls(MsgType(kind), sid, snd, rcv, Phase(ph), values, bytes(frame[end:]))
        except ValueError as exc:
            raise TransportError(f"bad frame header: {exc}") from None


@dataclass(frozen=True)
class Endpoint:
    party_id: int
    address: object  # (host, port) for TCP, registry key for memory


@dataclass
class TransportStats:
    bytes_sent: int = 0
    bytes_received: int = 0
    messages_sent: int = 0
    messages_received: int = 0
    sent_by_phase: Dict[str, int] = field(default_factory=lambda: defaultdict(int))
    received_by_phase: Dict[str, int] = field(default_factory=lambda: defaultdict(int))

    def on_send(self, msg: WireMessage, nbytes: int) -> None:
        self.bytes_sent += nbytes
        self.messages_sent += 1
        self.sent_by_phase[msg.phase.label] += nbytes

    def on_recv(self, msg: WireMessage, nbytes: int) -> None:
        self.bytes_received += nbytes
        self.messages_received += 1
        self.received_by_phase[msg.phase.label] += nbytes


class Channel:
    """One party's view of the network."""

    def __init__(self, party_id: int, timeout: Optional[float] = 60.0):
        self.party_id = party_id
        self.timeout = timeout
        self.stats = TransportStats()

    def _send_frame(self, receiver: int, frame: bytes) -> None:
        raise NotImplementedError

    def _recv_frame(self, sender: int, timeout: Optional[float]) -> bytes:
        raise NotImplementedError

    def send(self, msg: WireMessage) -> None:
        if msg.sender != self.party_id:
            raise TransportError(f"party {self.party_id} cannot send as {msg.sender}")
        frame = msg.encode()
        self._send_frame(msg.receiver, frame)
        self.stats.on_send(msg, len(frame))

    def broadcast(self, msg: WireMessage, recipients: Iterable[int]) -> None:
        for r in recipients:
            self.send(WireMessage(msg.kind, msg.session_id, msg.sender, r, msg.phase,
                                  msg.values, msg.data))

    def recv(self, sender: int, timeout: Optional[float] = None) -> WireMessage:
        """Next message from ``sender``, in send order."""
        frame = self._recv_frame(sender, self.timeout if timeout is None else timeout)
        msg = WireMessage.decode(frame)
        if msg.sender != sender or msg.receiver != self.party_id:
            raise TransportError(
                f"misrouted frame {msg.sender}->{msg.receiver} on {sender}->{self.party_id}")
        self.stats.on_recv(msg, len(frame))
        return msg

    def close(self) -> None:
        pass


# ---------------------------------------------------------------- memory

class MemoryHub:
    """Registry of in-process queues, one per ordered pair of parties."""

    def __init__(self, timeout: Optional[float] = 60.0):
        self.timeout = timeout
        self._queues: Dict[Tuple[int, int], queue.SimpleQueue] = defaultdict(queue.SimpleQueue)
        self._lock = threading.Lock()
        self.channels: Dict[int, "MemoryChannel"] = {}

    def _queue(self, receiver: int, sender: int) -> queue.SimpleQueue:
        with self._lock:
            return self._queues[(receiver, sender)]

    def channel(self, party_id: int) -> "MemoryChannel":
        with self._lock:
            if party_id in self.channels:
                raise TransportError(f"party {party_id} already registered")
            ch = MemoryChannel(self, party_id, self.timeout)
            self.channels[party_id] = ch
            return ch

    def endpoint(self, party_id: int) -> Endpoint:
        return Endpoint(party_id, ("memory", id(self), party_id))


class MemoryChannel(Channel):
    def __init__(self, hub: MemoryHub, party_id: int, timeout):
        super().__init__(party_id, timeout)
        self.hub = hub

    def _send_frame(self, receiver: int, frame: bytes) -> None:
        self.hub._queue(receiver, self.party_id).put(frame)

    def _recv_frame(self, sender: int, timeout) -> bytes:
        try:
            return self.hub._queue(self.party_id, sender).get(timeout=timeout)
        except queue.Empty:
            raise TransportError(
                f"party {self.party_id}: no message from {sender} within {timeout}s") from None


# ---------------------------------------------------------------- TCP

def _read_exact(sock: socket.socket, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            raise EOFError
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def _read_frame(sock: socket.socket) -> bytes:
    head = _read_exact(sock, _LEN.size)
    (n,) = _LEN.unpack(head)
    if n > MAX_FRAME or n < _HEAD.size:
        raise TransportError(f"refusing frame of {n} bytes")
    return head + _read_exact(sock, n)


def parse_address(text: str) -> Tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise TransportError(f"address {text!r} is not host:port")
    return host, int(port)


class TcpChannel(Channel):
    """TCP mesh endpoint.

    Each party connects to every peer with a lower id and accepts the rest.
    The connecting side sends HELLO carrying a digest of the session config;
    the acceptor checks it and answers with its own HELLO. One reader thread
    per connection feeds a FIFO queue per sender.
    """

    _EOF = object()

    def __init__(self, party_id: int, addresses: Dict[int, Tuple[str, int]], peers: Iterable[int],
                 session_id: bytes, digest: bytes = b"", listener: Optional[socket.socket] = None,
                 timeout: Optional[float] = 60.0):
        super().__init__(party_id, timeout)
        self.addresses = dict(addresses)
        self.peers = sorted(set(peers) - {party_id})
        self.session_id = session_id
        self.digest = digest
        self._socks: Dict[int, socket.socket] = {}
        self._send_locks: Dict[int, threading.Lock] = {}
        self._inbox: Dict[int, queue.SimpleQueue] = {p: queue.SimpleQueue() for p in self.peers}
        self._ready = threading.Condition()
        self._closed = False
        self._errors: list = []
        self._listener = listener
        self._threads: list = []

    def _hello(self, receiver: int) -> WireMessage:
        return WireMessage(MsgType.HELLO, self.session_id, self.party_id, receiver,
                           Phase.SETUP, (), self.digest)

    def _check_hello(self, frame: bytes) -> WireMessage:
        msg = WireMessage.decode(frame)
        if msg.kind is not MsgType.HELLO or msg.receiver != self.party_id:
            raise TransportError("expected HELLO")
        if msg.session_id != self.session_id or msg.data != self.digest:
            raise TransportError(f"peer {msg.sender} runs a different session configuration")
        if msg.sender not in self._inbox:
            raise TransportError(f"unexpected peer {msg.sender}")
        self.stats.on_recv(msg, len(frame))
        return msg

    def _register(self, peer: int, sock: socket.socket) -> None:
        sock.settimeout(None)
        with self._ready:
            if peer in self._socks:
                raise TransportError(f"duplicate connection from {peer}")
            self._socks[peer] = sock
            self._send_locks[peer] = threading.Lock()
            self._ready.notify_all()
        t = threading.Thread(target=self._reader, args=(peer, sock), daemon=True,
                             name=f"tcp-reader-{self.party_id}<-{peer}")
        t.start()
        self._threads.append(t)

    def _reader(self, peer: int, sock: socket.socket) -> None:
        box = self._inbox[peer]
        try:
            while True:
                box.put(_read_frame(sock))
        except (EOFError, OSError, TransportError):
            box.put(self._EOF)

    def _accept_loop(self, expected: int) -> None:
        accepted = 0
        while accepted < expected and not self._closed:
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            try:
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                sock.settimeout(self.timeout)
                msg = self._check_hello(_read_frame(sock))
                reply = self._hello(msg.sender).encode()
                sock.sendall(reply)
                self.stats.on_send(self._hello(msg.sender), len(reply))
                self._register(msg.sender, sock)
                accepted += 1
            except (TransportError, OSError, EOFError) as exc:
                self._errors.append(exc)
                sock.close()
                with self._ready:
                    self._ready.notify_all()

    def _connect(self, peer: int, deadline: float) -> None:
        addr = self.addresses[peer]
        while True:
            try:
                sock = socket.create_connection(addr, timeout=max(0.1, deadline - time.monotonic()))
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise TransportError(f"cannot reach party {peer} at {addr}") from None
                time.sleep(0.05)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        hello = self._hello(peer)
        frame = hello.encode()
        try:
            sock.sendall(frame)
            self.stats.on_send(hello, len(frame))
            reply = self._check_hello(_read_frame(sock))
        except (OSError, EOFError) as exc:
            sock.close()
            raise TransportError(f"handshake with party {peer} failed: {exc}") from None
        if reply.sender != peer:
            raise TransportError(f"expected party {peer}, reached {reply.sender}")
        self._register(peer, sock)

    def start(self, timeout: Optional[float] = None) -> "TcpChannel":
        """Bind, connect to lower peers, accept higher ones; block until the mesh is up."""
        timeout = self.timeout if timeout is None else timeout
        deadline = time.monotonic() + (timeout or 60.0)
        higher = [p for p in self.peers if p > self.party_id]
        if higher and self._listener is None:
            self._listener = socket.create_server(self.addresses[self.party_id], reuse_port=False)
        if higher:
            t = threading.Thread(target=self._accept_loop, args=(len(higher),), daemon=True,
                                 name=f"tcp-accept-{self.party_id}")
            t.start()
            self._threads.append(t)
        for p in self.peers:
            if p < self.party_id:
                self._connect(p, deadline)
        with self._ready:
            while len(self._socks) < len(self.peers):
                if self._errors:
                    raise TransportError(f"party {self.party_id}: {self._errors[0]}")
                left = deadline - time.monotonic()
                if left <= 0:
                    missing = sorted(set(self.peers) - set(self._socks))
                    raise TransportError(f"party {self.party_id}: peers {missing} never connected")
                self._ready.wait(left)
        return self

    def _send_frame(self, receiver: int, frame: bytes) -> None:
        sock = self._socks.get(receiver)
        if sock is None:
            raise TransportError(f"party {self.party_id} has no link to {receiver}")
        try:
            with self._send_locks[receiver]:
                sock.sendall(frame)
        except OSError as exc:
            raise TransportError(f"send to {receiver} failed: {exc}") from None

    def _recv_frame(self, sender: int, timeout) -> bytes:
        box = self._inbox.get(sender)
        if box is None:
            raise TransportError(f"party {self.party_id} has no link to {sender}")
        try:
            item = box.get(timeout=timeout)
        except queue.Empty:
            raise TransportError(
                f"party {self.party_id}: no message from {sender} within {timeout}s") from None
        if item is self._EOF:
            box.put(item)
            raise TransportError(f"party {sender} disconnected")
        return item

    def close(self) -> None:
        self._closed = True
        for sock in list(self._socks.values()):
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()
        if self._listener is not None:
            self._listener.close()


def local_listeners(party_ids: Iterable[int], host: str = "127.0.0.1"):
    """Bind ephemeral loopback listeners; returns (addresses, listeners) keyed by party."""
    listeners, addresses = {}, {}
    for pid in party_ids:
        s = socket.create_server((host, 0))
        listeners[pid] = s
        addresses[pid] = s.getsockname()[:2]
    return addresses, listeners
