"""Anonymization-network model.

The mixnet's one job is to deliver messages stripped of origin: the
server sees (version, type, round, payload) and an arrival time, never
a sender.  Clients already randomize their send times across the round
window; the mixnet adds configurable latency jitter and randomizes the
order of simultaneous deliveries.  What the server -- honest or not --
can observe of a closed round is packaged as an :class:`AdversaryView`:
two payload multisets plus arrival times.

Two byte-identical transports are provided.  The in-process transport
round-trips every message through its wire encoding and hands it to the
server directly; the TCP transport pushes the same bytes through a
loopback relay that strips the source address, demonstrating the wire
format end-to-end.  Both run on the simulator's virtual clock and
produce identical adversary views for identical inputs and seeds.
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from queue import Queue
from typing import Callable

import numpy as np

from .messages import (
    MSG_MASKED_GRADIENT,
    MSG_NOISE_SEED,
    RoundMessage,
)

_FRAME = struct.Struct(">I")


@dataclass(frozen=True)
class AdversaryView:
    """Exactly what the server holds after a round: no identities.

    ``arrival_times`` lists (virtual time, message type) per delivered
    message in arrival order; the payload multisets are in the same
    order.
    """

    round: int
    masked_multiset: tuple[bytes, ...]
    seed_multiset: tuple[bytes, ...]
    arrival_times: tuple[tuple[float, int], ...]


@dataclass(frozen=True)
class LatencyModel:
    """Delivery jitter added to each message's send time."""

    kind: str = "uniform"  # uniform on [0, scale] | exponential with mean scale
    scale: float = 0.0

    def sample(self, rng: np.random.Generator) -> float:
        if self.scale == 0.0:
            return 0.0
        if self.kind == "uniform":
            return float(rng.uniform(0.0, self.scale))
        if self.kind == "exponential":
            return float(rng.exponential(self.scale))
        raise ValueError(f"unknown latency model {self.kind!r}")


@dataclass(frozen=True)
class DeliveryReceipt:
    """Opaque acknowledgement; deliberately reveals nothing about
    delivery (a dropped message surfaces only as a server-side count
    shortfall)."""

    accepted: bool = True


@dataclass
class _Submission:
    message: RoundMessage
    send_time: float
    seq: int


class Transport:
    """Moves one encoded message to the server and returns the decoded
    copy the server received."""

    def deliver(self, data: bytes) -> RoundMessage:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessTransport(Transport):
    def deliver(self, data: bytes) -> RoundMessage:
        return RoundMessage.from_bytes(data)


class RelayServer:
    """TCP loopback relay: accepts one frame per connection and forwards
    it over a single persistent connection, so the receiving end only
    ever sees the relay's address."""

    def __init__(self, forward_host: str, forward_port: int):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(("127.0.0.1", 0))
        self._sock.listen(64)
        self.port = self._sock.getsockname()[1]
        self._forward = socket.create_connection((forward_host, forward_port))
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _addr = self._sock.accept()
            except OSError:
                return
            with conn:
                frame = _read_frame(conn)
            if frame is None:
                continue
            with self._lock:
                self._forward.sendall(_FRAME.pack(len(frame)) + frame)

    def close(self) -> None:
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass
        try:
            self._forward.close()
        except OSError:
            pass


def _read_exact(conn: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def _read_frame(conn: socket.socket) -> bytes | None:
    head = _read_exact(conn, _FRAME.size)
    if head is None:
        return None
    (length,) = _FRAME.unpack(head)
    return _read_exact(conn, length)


class TcpLoopbackTransport(Transport):
    """Client socket -> relay -> server socket, on 127.0.0.1.

    ``deliver`` blocks until the server side has parsed the frame, so
    arrival order equals submission order and the simulator's schedule
    stays authoritative.
    """

    def __init__(self):
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(("127.0.0.1", 0))
        self._listener.listen(1)
        self._received: Queue = Queue()
        self.relay = RelayServer("127.0.0.1", self._listener.getsockname()[1])
        self._server_conn, _ = self._listener.accept()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        while True:
            frame = _read_frame(self._server_conn)
            if frame is None:
                return
            self._received.put(frame)

    def deliver(self, data: bytes) -> RoundMessage:
        with socket.create_connection(("127.0.0.1", self.relay.port)) as c:
            c.sendall(_FRAME.pack(len(data)) + data)
        frame = self._received.get(timeout=10.0)
        return RoundMessage.from_bytes(frame)

    def close(self) -> None:
        self.relay.close()
        for s in (self._server_conn, self._listener):
            try:
                s.close()
            except OSError:
                pass


class AnonymousChannel:
    """Request/response through a fresh anonymized circuit per call.

    Models parameter and hash fetches: the handler sees only the
    re-decoded message bytes, never a caller identity.
    """

    def __init__(self, handler: Callable[[RoundMessage], bytes]):
        self._handler = handler

    def request(self, message: RoundMessage) -> bytes:
        return self._handler(RoundMessage.from_bytes(message.to_bytes()))


class Mixnet:
    """Collects one round's submissions and delivers them unlinkably.

    On ``close_round`` every surviving message gets an arrival time
    (send time + jitter), ties are broken randomly, and messages flow to
    the server callback in arrival order.  Arrivals after the delivery
    deadline (round length + latency budget) are discarded and surface
    only as a count shortfall.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        deliver_cb: Callable[[RoundMessage, float], None],
        latency: LatencyModel | None = None,
        drop_probability: float = 0.0,
        latency_budget: float | None = None,
        transport: Transport | None = None,
        wall_clock_scale: float = 0.0,
    ):
        if not 0.0 <= drop_probability <= 1.0:
            raise ValueError("drop probability must be in [0, 1]")
        self.rng = rng
        self.deliver_cb = deliver_cb
        self.latency = latency or LatencyModel()
        self.drop_probability = drop_probability
        self.latency_budget = latency_budget
        self.transport = transport or InProcessTransport()
        self.wall_clock_scale = wall_clock_scale
        self._round: int | None = None
        self._round_length: float = 0.0
        self._submissions: list[_Submission] = []
        self._views: dict[int, AdversaryView] = {}

    def open_round(self, round_index: int, round_length_s: float) -> None:
        self._round = round_index
        self._round_length = round_length_s
        self._submissions = []

    def submit(self, message: RoundMessage, send_time: float) -> DeliveryReceipt:
        if self._round is None or message.round != self._round:
            raise ValueError(f"no open round for message round {message.round}")
        if message.msg_type not in (MSG_MASKED_GRADIENT, MSG_NOISE_SEED):
            raise ValueError("only data messages travel through submit()")
        if not 0.0 <= send_time < self._round_length:
            raise ValueError(
                f"send time {send_time} outside round window "
                f"[0, {self._round_length})"
            )
        self._submissions.append(
            _Submission(message, send_time, len(self._submissions))
        )
        return DeliveryReceipt()

    def close_round(self) -> AdversaryView:
        """Deliver everything, record the adversary view, end the round."""
        if self._round is None:
            raise RuntimeError("no open round")
        deadline = (
            None
            if self.latency_budget is None
            else self._round_length + self.latency_budget
        )
        schedule = []
        for sub in self._submissions:
            if self.drop_probability and self.rng.random() < self.drop_probability:
                continue
            arrival = sub.send_time + self.latency.sample(self.rng)
            if deadline is not None and arrival > deadline:
                continue
            schedule.append((arrival, self.rng.random(), sub))
        schedule.sort(key=lambda item: (item[0], item[1]))

        masked: list[bytes] = []
        seeds: list[bytes] = []
        arrivals: list[tuple[float, int]] = []
        prev_t = 0.0
        for arrival, _tie, sub in schedule:
            if self.wall_clock_scale > 0.0:
                time.sleep(max(0.0, (arrival - prev_t) * self.wall_clock_scale))
                prev_t = arrival
            received = self.transport.deliver(sub.message.to_bytes())
            self.deliver_cb(received, arrival)
            arrivals.append((arrival, received.msg_type))
            if received.msg_type == MSG_MASKED_GRADIENT:
                masked.append(received.payload)
            else:
                seeds.append(received.payload)
        view = AdversaryView(
            round=self._round,
            masked_multiset=tuple(masked),
            seed_multiset=tuple(seeds),
            arrival_times=tuple(arrivals),
        )
        self._views[self._round] = view
        self._round = None
        return view

    def tap(self, round_index: int) -> AdversaryView:
        """The closed round's full server-side view; origins never existed."""
        if round_index not in self._views:
            raise ValueError(f"round {round_index} is unknown or still open")
        return self._views[round_index]

    def close(self) -> None:
        self.transport.close()
