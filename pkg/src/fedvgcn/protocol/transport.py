"""Message transports: reliable, ordered, at-most-once per sender-receiver pair.

Two implementations of the same contract:

* InProcessTransport — frames queue in memory and poll() serves senders in
  round-robin rotation, which makes multi-party runs byte-for-byte
  reproducible. A running SHA-256 over every frame (in send order) is the
  session transcript digest asserted by the determinism tests.
* SocketPairTransport — the same frames over real byte streams
  (socketpair per party pair), exercising the length-delimited framing.
  Connection loss surfaces as a TransportError; there are no retries.
"""

import hashlib
import socket
from collections import deque
from typing import Dict, Optional, Tuple

from .messages import HEADER, PASSIVE, ACTIVE, SERVER

ALL_ROLES = (PASSIVE, ACTIVE, SERVER)


class TransportError(RuntimeError):
    """Delivery failure: unknown party, closed stream, malformed frame."""


class InProcessTransport:
    def __init__(self):
        self._registered = set()
        self._queues: Dict[Tuple[int, int], deque] = {}
        self._rotation: Dict[int, int] = {}
        self._digest = hashlib.sha256()
        self.frames_sent = 0

    def register(self, role: int) -> None:
        if role in self._registered:
            raise TransportError(f"role {role} registered twice")
        self._registered.add(role)
        self._rotation[role] = 0

    def send(self, sender: int, receiver: int, frame: bytes) -> None:
        if receiver not in self._registered:
            raise TransportError(f"unknown recipient {receiver}")
        if sender not in self._registered:
            raise TransportError(f"unregistered sender {sender}")
        self._queues.setdefault((sender, receiver), deque()).append(frame)
        self._digest.update(frame)
        self.frames_sent += 1

    def poll(self, receiver: int) -> Optional[bytes]:
        """Next frame for receiver, rotating across senders for fairness."""
        if receiver not in self._registered:
            raise TransportError(f"unknown recipient {receiver}")
        senders = [r for r in ALL_ROLES if r != receiver]
        start = self._rotation[receiver]
        for k in range(len(senders)):
            sender = senders[(start + k) % len(senders)]
            q = self._queues.get((sender, receiver))
            if q:
                self._rotation[receiver] = (start + k + 1) % len(senders)
                return q.popleft()
        return None

    def pending(self) -> int:
        return sum(len(q) for q in self._queues.values())

    def transcript_digest(self) -> str:
        return self._digest.hexdigest()


class SocketPairTransport:
    """The same contract over OS byte streams.

    One socketpair per unordered party pair; frames are self-delimiting
    (fixed header carries the payload length) so the reader reassembles
    them from arbitrary stream chunking.
    """

    def __init__(self):
        self._registered = set()
        self._socks: Dict[Tuple[int, int], socket.socket] = {}
        self._buffers: Dict[Tuple[int, int], bytearray] = {}
        self._ready: Dict[Tuple[int, int], deque] = {}
        self._rotation: Dict[int, int] = {}
        self._digest = hashlib.sha256()
        self.frames_sent = 0
        for a in ALL_ROLES:
            for b in ALL_ROLES:
                if a < b:
                    sa, sb = socket.socketpair()
                    sa.setblocking(False)
                    sb.setblocking(False)
                    self._socks[(a, b)] = sa  # endpoint held by a, talks to b
                    self._socks[(b, a)] = sb
        for a in ALL_ROLES:
            for b in ALL_ROLES:
                if a != b:
                    self._buffers[(a, b)] = bytearray()
                    self._ready[(a, b)] = deque()

    def register(self, role: int) -> None:
        if role in self._registered:
            raise TransportError(f"role {role} registered twice")
        self._registered.add(role)
        self._rotation[role] = 0

    def close(self) -> None:
        for sock in self._socks.values():
            try:
                sock.close()
            except OSError:
                pass
        self._socks.clear()

    def send(self, sender: int, receiver: int, frame: bytes) -> None:
        if receiver not in self._registered or sender not in self._registered:
            raise TransportError("send between unregistered parties")
        sock = self._socks.get((sender, receiver))
        if sock is None:
            raise TransportError("connection lost")
        try:
            sock.setblocking(True)
            sock.sendall(frame)
            sock.setblocking(False)
        except OSError as exc:
            raise TransportError(f"connection to {receiver} lost: {exc}") from exc
        self._digest.update(frame)
        self.frames_sent += 1

    def transcript_digest(self) -> str:
        return self._digest.hexdigest()

    def _drain(self, sender: int, receiver: int) -> None:
        sock = self._socks.get((receiver, sender))
        if sock is None:
            raise TransportError("connection lost")
        buf = self._buffers[(sender, receiver)]
        while True:
            try:
                chunk = sock.recv(1 << 16)
            except BlockingIOError:
                break
            except OSError as exc:
                raise TransportError(f"connection from {sender} lost: {exc}") from exc
            if not chunk:
                break
            buf.extend(chunk)
        while len(buf) >= HEADER.size:
            payload_len = int.from_bytes(buf[HEADER.size - 4 : HEADER.size], "big")
            total = HEADER.size + payload_len
            if len(buf) < total:
                break
            self._ready[(sender, receiver)].append(bytes(buf[:total]))
            del buf[:total]

    def poll(self, receiver: int) -> Optional[bytes]:
        if receiver not in self._registered:
            raise TransportError(f"unknown recipient {receiver}")
        senders = [r for r in ALL_ROLES if r != receiver]
        start = self._rotation[receiver]
        for k in range(len(senders)):
            sender = senders[(start + k) % len(senders)]
            if sender in self._registered:
                self._drain(sender, receiver)
            q = self._ready[(sender, receiver)]
            if q:
                self._rotation[receiver] = (start + k + 1) % len(senders)
                return q.popleft()
        return None
