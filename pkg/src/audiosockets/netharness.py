"""Deterministic in-memory transport, fault injection, and integrity oracles.

Test infrastructure only; nothing here touches a real socket. The pipes
returned by :func:`make_pipe` satisfy the same stream contract TCP sockets
do, so the transport layer and whole-stack scenarios can run against them
unchanged. Fragmentation, per-write delay, and mid-stream connection drops
are scripted through :class:`FaultSchedule` and reproducible given a seed.
"""

from __future__ import annotations

import hashlib
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .transport import BindError


@dataclass
class FaultSchedule:
    """What to do to the bytes of one pipe direction.

    fragment_sizes: cycled read-chunk sizes; a recv() call never returns
        more than the next size in the cycle.
    fragment_range: (lo, hi) read-chunk sizes drawn uniformly, seeded.
    delay: seconds each write blocks before the bytes become readable.
    drop_after: total byte count after which the connection closes.
    """

    fragment_sizes: Optional[Sequence[int]] = None
    fragment_range: Optional[tuple[int, int]] = None
    delay: float = 0.0
    drop_after: Optional[int] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.fragment_sizes is not None and any(
            s < 1 for s in self.fragment_sizes
        ):
            raise ValueError("fragment sizes must be >= 1")
        if self.fragment_range is not None and self.fragment_range[0] < 1:
            raise ValueError("fragment sizes must be >= 1")

    def fragmenter(self):
        """Stateful next-read-size generator; deterministic per schedule."""
        if self.fragment_sizes is not None:
            sizes = list(self.fragment_sizes)
            i = 0
            while True:
                yield sizes[i % len(sizes)]
                i += 1
        elif self.fragment_range is not None:
            lo, hi = self.fragment_range
            rng = random.Random(self.seed)
            while True:
                yield rng.randint(lo, hi)
        else:
            while True:
                yield None  # no limit


class _Direction:
    """One direction of a duplex pipe: a byte buffer plus its schedule."""

    def __init__(self, schedule: FaultSchedule):
        self.schedule = schedule
        self.buf = bytearray()
        self.cond = threading.Condition()
        self.closed = False
        self.written = 0
        self._frag = schedule.fragmenter()

    def write(self, data: bytes) -> None:
        if self.schedule.delay:
            time.sleep(self.schedule.delay)
        with self.cond:
            if self.closed:
                raise BrokenPipeError("pipe closed")
            limit = self.schedule.drop_after
            if limit is not None:
                room = limit - self.written
                if room <= 0:
                    self.closed = True
                    self.cond.notify_all()
                    raise BrokenPipeError("pipe dropped by schedule")
                if len(data) > room:
                    self.buf += data[:room]
                    self.written += room
                    self.closed = True
                    self.cond.notify_all()
                    return
            self.buf += data
            self.written += len(data)
            self.cond.notify_all()

    def read(self, n: int, timeout: Optional[float]) -> bytes:
        deadline = None if timeout is None else time.monotonic() + timeout
        with self.cond:
            while not self.buf and not self.closed:
                if deadline is None:
                    self.cond.wait()
                else:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        raise TimeoutError("pipe read timed out")
                    self.cond.wait(remaining)
            if not self.buf:
                return b""  # closed and drained: EOF
            k = n
            frag = next(self._frag)
            if frag is not None:
                k = min(k, frag)
            k = min(k, len(self.buf))
            out = bytes(self.buf[:k])
            del self.buf[:k]
            return out

    def readable(self, timeout: float) -> bool:
        deadline = time.monotonic() + timeout
        with self.cond:
            while not self.buf and not self.closed:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self.cond.wait(remaining)
            return True

    def close(self) -> None:
        with self.cond:
            self.closed = True
            self.cond.notify_all()


class PipeEndpoint:
    """One end of an in-memory duplex pipe; socket-shaped."""

    def __init__(self, inbound: _Direction, outbound: _Direction):
        self._in = inbound
        self._out = outbound
        self._timeout: Optional[float] = None

    def recv(self, n: int) -> bytes:
        if n <= 0:
            return b""
        return self._in.read(n, self._timeout)

    def sendall(self, data: bytes) -> None:
        self._out.write(data)

    def settimeout(self, timeout: Optional[float]) -> None:
        self._timeout = timeout

    def poll_readable(self, timeout: float) -> bool:
        return self._in.readable(timeout)

    def close(self) -> None:
        self._in.close()
        self._out.close()


def make_pipe(
    schedule: Optional[FaultSchedule] = None,
    *,
    reverse_schedule: Optional[FaultSchedule] = None,
) -> tuple[PipeEndpoint, PipeEndpoint]:
    """A connected endpoint pair. ``schedule`` shapes a->b traffic; the
    reverse direction uses ``reverse_schedule`` or a clean default."""
    fwd = _Direction(schedule or FaultSchedule())
    rev = _Direction(reverse_schedule or FaultSchedule())
    a = PipeEndpoint(inbound=rev, outbound=fwd)
    b = PipeEndpoint(inbound=fwd, outbound=rev)
    return a, b


class MemoryListener:
    """Accepting endpoint for MemoryNetwork, mirroring TcpListener."""

    def __init__(self, network: "MemoryNetwork", address):
        self._network = network
        self.address = address
        self._pending: list[PipeEndpoint] = []
        self._cond = threading.Condition()
        self._closed = False

    def _offer(self, endpoint: PipeEndpoint) -> bool:
        with self._cond:
            if self._closed:
                return False
            self._pending.append(endpoint)
            self._cond.notify()
            return True

    def accept(self) -> PipeEndpoint:
        from .transport import PeerClosed

        with self._cond:
            while not self._pending and not self._closed:
                self._cond.wait()
            if self._closed and not self._pending:
                raise PeerClosed("listener closed")
            return self._pending.pop(0)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        self._network._unlisten(self.address)


class MemoryNetwork:
    """In-process stand-in for the TCP stack: listen/connect by address."""

    def __init__(self, default_schedule: Optional[FaultSchedule] = None):
        self._listeners: dict = {}
        self._lock = threading.Lock()
        self.default_schedule = default_schedule

    def listen(self, address) -> MemoryListener:
        address = tuple(address)
        with self._lock:
            if address in self._listeners:
                raise BindError(f"address {address} already in use")
            listener = MemoryListener(self, address)
            self._listeners[address] = listener
            return listener

    def _unlisten(self, address) -> None:
        with self._lock:
            self._listeners.pop(tuple(address), None)

    def connect(
        self,
        address,
        timeout: float = 1.0,
        schedule: Optional[FaultSchedule] = None,
    ) -> PipeEndpoint:
        address = tuple(address)
        with self._lock:
            listener = self._listeners.get(address)
        if listener is None:
            raise ConnectionRefusedError(f"nothing listening on {address}")
        schedule = schedule or self.default_schedule
        client_end, server_end = make_pipe(
            schedule,
            reverse_schedule=FaultSchedule(**vars(schedule)) if schedule else None,
        )
        if not listener._offer(server_end):
            raise ConnectionRefusedError(f"listener on {address} closed")
        return client_end


def chunk_digest(samples) -> str:
    """Stable content hash of a chunk's raw float32 little-endian bytes."""
    import numpy as np

    data = np.asarray(samples, dtype="<f4").tobytes()
    return hashlib.sha256(data).hexdigest()


@dataclass
class ChunkRecord:
    seq: int
    digest: str
    t: float = 0.0


@dataclass
class ProcessorReport:
    missing: list[int] = field(default_factory=list)
    duplicates: list[int] = field(default_factory=list)
    out_of_order: list[tuple[int, int]] = field(default_factory=list)
    hash_mismatches: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (
            self.missing or self.duplicates or self.out_of_order or self.hash_mismatches
        )


@dataclass
class IntegrityReport:
    per_processor: dict[str, ProcessorReport] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.per_processor.values())

    def __str__(self) -> str:
        if self.ok:
            return "integrity: ok"
        lines = []
        for name, rep in self.per_processor.items():
            if rep.ok:
                continue
            lines.append(
                f"{name}: missing={rep.missing} dup={rep.duplicates} "
                f"ooo={rep.out_of_order} hash={rep.hash_mismatches}"
            )
        return "integrity: " + "; ".join(lines)


class ScriptError(Exception):
    """A scenario script event is malformed."""


@dataclass
class ScenarioEvent:
    """One scripted action at a virtual timestamp (seconds from start)."""

    t: float
    action: str
    name: str = ""
    params: dict = field(default_factory=dict)


@dataclass
class Transcript:
    """What a scenario produced: delivery logs plus registry changes."""

    sent: list = field(default_factory=list)
    received: dict = field(default_factory=dict)
    registry_events: list = field(default_factory=list)

    def report(self) -> IntegrityReport:
        return integrity_report(self.sent, self.received)

    def signature(self):
        """Time-free view for reproducibility comparisons."""
        return (
            [(r.seq, r.digest) for r in self.sent],
            {k: [(r.seq, r.digest) for r in v] for k, v in self.received.items()},
            list(self.registry_events),
        )


_ACTIONS = {
    "start_broker",
    "stop_broker",
    "start_recorder",
    "stop_recorder",
    "start_processor",
    "stop_processor",
    "kill_processor",
}


class ScenarioRunner:
    """Drives real broker/recorder/processor code from a scripted timeline.

    transport="memory" runs everything over in-process pipes;
    transport="tcp" runs the identical script over loopback sockets. The
    two must produce identical integrity reports.
    """

    def __init__(self, *, transport: str = "memory", config=None, seed: int = 0):
        from .appcli import Config

        if transport == "memory":
            self.network = MemoryNetwork()
            port = 5050
        elif transport == "tcp":
            import socket as _socket

            from .transport import TCP_NETWORK

            self.network = TCP_NETWORK
            probe = _socket.socket()
            probe.bind(("127.0.0.1", 0))
            port = probe.getsockname()[1]
            probe.close()
        else:
            raise ScriptError(f"unknown transport {transport!r}")
        self.config = config or Config(SERVER="127.0.0.1", PORT=port)
        self.seed = seed
        self.transcript = Transcript()
        self.broker = None
        self.recorder = None
        self.processors: dict = {}
        self._started = 0.0

    # -- event handlers ------------------------------------------------------

    def _start_broker(self, event: ScenarioEvent) -> None:
        from .mailman import Mailman

        def on_registry(change, name):
            self.transcript.registry_events.append((change, name))

        self.broker = Mailman(
            self.config, network=self.network, registry_listener=on_registry
        )
        self.broker.start()

    def _stop_broker(self, event: ScenarioEvent) -> None:
        if self.broker is not None:
            self.broker.stop()

    def _start_recorder(self, event: ScenarioEvent) -> None:
        from .recorder import Recorder, SineSource

        p = event.params
        source = SineSource(
            freq=p.get("freq", 440.0),
            fs=p.get("fs", 16000),
            block_frames=p.get("block_frames", 256),
            paced=True,
        )
        self.recorder = Recorder(
            self.config,
            source,
            name=event.name or "rec0",
            send_period=p.get("send_period", 0.1),
            network=self.network,
            chunk_log=self.transcript.sent,
        )
        self.recorder.start()

    def _stop_recorder(self, event: ScenarioEvent) -> None:
        if self.recorder is None:
            return
        chunks = event.params.get("after_chunks")
        if chunks is not None:
            self._wait_for(lambda: len(self.transcript.sent) >= chunks, 30.0)
        self.recorder.stop()

    def _start_processor(self, event: ScenarioEvent) -> None:
        from .processor import ProcessorClient, null_hook

        name = event.name
        if not name:
            raise ScriptError("start_processor requires a name")
        log = self.transcript.received.setdefault(name, [])
        delay = event.params.get("hook_delay", 0.0)

        def hook(data, _delay=delay):
            if _delay:
                time.sleep(_delay)
            null_hook(data)

        client = ProcessorClient(
            name, self.config, hook, network=self.network, recv_log=log
        )
        self.processors[name] = client
        client.start_background()

    def _stop_processor(self, event: ScenarioEvent) -> None:
        client = self.processors.get(event.name)
        if client is None:
            raise ScriptError(f"no processor named {event.name!r}")
        chunks = event.params.get("after_chunks")
        if chunks is not None:
            log = self.transcript.received[event.name]
            self._wait_for(lambda: len(log) >= chunks, 30.0)
        client.disconnect()

    def _kill_processor(self, event: ScenarioEvent) -> None:
        client = self.processors.get(event.name)
        if client is None:
            raise ScriptError(f"no processor named {event.name!r}")
        client.auto_reconnect = False
        conn = client.connection
        if conn is not None:
            conn.close()

    @staticmethod
    def _wait_for(predicate, timeout: float) -> None:
        deadline = time.monotonic() + timeout
        while not predicate():
            if time.monotonic() > deadline:
                raise TimeoutError("scenario condition never became true")
            time.sleep(0.005)

    # -- driver ----------------------------------------------------------------

    def run(self, script: Sequence[ScenarioEvent]) -> Transcript:
        for event in script:
            if not isinstance(event, ScenarioEvent):
                raise ScriptError(f"not a ScenarioEvent: {event!r}")
            if event.action not in _ACTIONS:
                raise ScriptError(f"unknown action {event.action!r}")
            if event.t < 0:
                raise ScriptError("event time must be >= 0")
        self._started = time.monotonic()
        try:
            for event in sorted(script, key=lambda e: e.t):
                delay = self._started + event.t - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                getattr(self, f"_{event.action}")(event)
        finally:
            self._teardown()
        return self.transcript

    def _teardown(self) -> None:
        if self.recorder is not None:
            self.recorder.stop()
        self._drain_deliveries()
        for client in self.processors.values():
            client.disconnect(timeout=5.0)
        if self.broker is not None:
            self.broker.stop()

    def _drain_deliveries(self, timeout: float = 5.0) -> None:
        """Let in-flight fan-out settle before detaching clients, so the
        final chunks are not abandoned by a disconnect crossing."""
        deadline = time.monotonic() + timeout
        for name, client in self.processors.items():
            if client.connection is None:
                continue  # already detached during the scenario
            log = self.transcript.received.get(name, [])
            while (
                len(log) < len(self.transcript.sent)
                and client.connection is not None
                and time.monotonic() < deadline
            ):
                time.sleep(0.01)


def run_scenario(
    script: Sequence[ScenarioEvent],
    *,
    transport: str = "memory",
    config=None,
    seed: int = 0,
) -> Transcript:
    """Execute a scripted timeline against real module code; returns the
    transcript of sends, deliveries, and registry changes."""
    return ScenarioRunner(transport=transport, config=config, seed=seed).run(script)


def integrity_report(
    sent: Sequence[ChunkRecord],
    received: dict[str, Sequence[ChunkRecord]],
) -> IntegrityReport:
    """Compare per-processor delivery logs against the sender's log.

    Empty report (ok) means no missing, duplicated, reordered, or corrupted
    chunks anywhere.
    """
    sent_by_seq = {rec.seq: rec.digest for rec in sent}
    report = IntegrityReport()
    for name, log in received.items():
        rep = ProcessorReport()
        seen: set[int] = set()
        prev = None
        for rec in log:
            if rec.seq in seen:
                rep.duplicates.append(rec.seq)
            seen.add(rec.seq)
            if prev is not None and rec.seq <= prev:
                rep.out_of_order.append((prev, rec.seq))
            prev = rec.seq
            expected = sent_by_seq.get(rec.seq)
            if expected is not None and expected != rec.digest:
                rep.hash_mismatches.append(rec.seq)
        rep.missing = sorted(set(sent_by_seq) - seen)
        report.per_processor[name] = rep
    return report
