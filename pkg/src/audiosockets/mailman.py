"""The broker: accept clients, classify them, fan recorder audio out.

A connection's first envelope fixes its role for life. Recorders feed the
fan-out; processors register by name and are then served by a dedicated
delivery thread with its own queue, so one slow consumer never stalls the
others or the recorder. Anything else is told ERR UNKNOWN_TYPE and dropped.

Delivery threads own both directions of their processor's connection.
While idle they watch for client-initiated traffic (the disconnect
message); while sending they detect the rare case of a disconnect crossing
a delivery on the wire and abandon that delivery in favor of the
handshake, as documented in docs/protocol.md.
"""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass, field
from typing import Optional

from .appcli import Config
from .transport import (
    FramedConnection,
    TCP_NETWORK,
    TransportError,
)
from .wireproto import (
    CLIENT_PROCESSOR,
    CLIENT_RECORDER,
    Envelope,
    MessageKind,
    WireError,
    decode_envelope,
)

log = logging.getLogger("audiosockets.mailman")

_STOP = object()  # delivery queue sentinel


@dataclass
class Stats:
    chunks_received: int = 0
    chunks_fanned_out: int = 0
    clients_rejected: int = 0
    chunks_dropped: int = 0
    registrations: int = 0
    removals: int = 0
    disconnects: int = 0

    def snapshot(self) -> dict:
        return dict(vars(self))


@dataclass
class ProcessorEntry:
    name: str
    conn: FramedConnection
    outbound: queue.Queue = field(default_factory=queue.Queue)
    delivered: int = 0
    dropped: int = 0
    thread: Optional[threading.Thread] = None


class Mailman:
    """Broker lifecycle: ``start()`` binds and returns; ``stop()`` tears
    every connection down and joins the worker threads."""

    IDLE_POLL = 0.05

    def __init__(
        self,
        config: Config,
        *,
        network=None,
        stats_interval: Optional[float] = None,
        registry_listener=None,
    ):
        self.config = config
        self.network = network or TCP_NETWORK
        self.stats = Stats()
        self.stats_interval = stats_interval
        self.registry_listener = registry_listener
        self._registry: dict[str, ProcessorEntry] = {}
        self._lock = threading.Lock()
        self._listener = None
        self._accept_thread: Optional[threading.Thread] = None
        self._stats_thread: Optional[threading.Thread] = None
        self._handlers: set = set()
        self._handler_conns: set = set()
        self._running = threading.Event()
        self._stopped = threading.Event()

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "Mailman":
        """Bind the listener and launch the accept loop. BindError if the
        address is taken."""
        self._listener = self.network.listen(self.config.address)
        self._running.set()
        self._stopped.clear()
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name="mailman-accept", daemon=True
        )
        self._accept_thread.start()
        if self.stats_interval:
            self._stats_thread = threading.Thread(
                target=self._stats_loop, name="mailman-stats", daemon=True
            )
            self._stats_thread.start()
        return self

    @property
    def port(self) -> int:
        address = getattr(self._listener, "address", None)
        return address[1] if address else self.config.PORT

    def wait(self) -> None:
        """Block until stop() is called (for the CLI foreground mode)."""
        self._stopped.wait()

    def stop(self) -> None:
        """Close the listener and every live connection; join all threads."""
        if not self._running.is_set() and self._listener is None:
            self._stopped.set()
            return
        self._running.clear()
        self._stopped.set()
        if self._listener is not None:
            self._listener.close()
            self._listener = None
        with self._lock:
            entries = list(self._registry.values())
            handler_conns = list(self._handler_conns)
        for entry in entries:
            entry.outbound.put(_STOP)
        for conn in handler_conns:
            conn.close()
        for entry in entries:
            thread = entry.thread
            if thread is not None and thread.is_alive():
                thread.join(timeout=2.0)
            entry.conn.close()
        with self._lock:
            for entry in self._registry.values():
                self._notify("deregister", entry.name)
            self._registry.clear()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)
            self._accept_thread = None

    def _stats_loop(self) -> None:
        while self._running.is_set():
            self._running.wait(self.stats_interval)
            if self._running.is_set():
                log.info("stats: %s", self.stats.snapshot())

    def _notify(self, event: str, name: str) -> None:
        if self.registry_listener is not None:
            try:
                self.registry_listener(event, name)
            except Exception:
                log.exception("registry listener failed")

    # -- registry ------------------------------------------------------------

    @property
    def registry_size(self) -> int:
        with self._lock:
            return len(self._registry)

    def registered_names(self) -> list[str]:
        with self._lock:
            return list(self._registry)

    def _deregister(self, entry: ProcessorEntry, reason: str) -> None:
        with self._lock:
            current = self._registry.get(entry.name)
            if current is not entry:
                return
            del self._registry[entry.name]
            self.stats.removals += 1
        log.info("processor %r removed (%s)", entry.name, reason)
        self._notify("deregister", entry.name)

    # -- accept/dispatch -------------------------------------------------------

    def _accept_loop(self) -> None:
        while self._running.is_set():
            listener = self._listener
            if listener is None:
                return  # stop() already tore the listener down
            try:
                stream = listener.accept()
            except (TransportError, OSError):
                return  # listener closed
            conn = FramedConnection(stream, header_size=self.config.HEADER)
            thread = threading.Thread(
                target=self._handle_connection,
                args=(conn,),
                name="mailman-handler",
                daemon=True,
            )
            with self._lock:
                self._handlers.add(thread)
                self._handler_conns.add(conn)
            thread.start()

    def _handle_connection(self, conn: FramedConnection) -> None:
        """Classify by first envelope, then run that role's loop. Errors
        kill only this connection; the accept loop is unaffected."""
        try:
            first = self._recv_envelope(conn)
            if first is None:
                return
            payload, env = first
            if env.kind is MessageKind.REGISTER and env.client_type == CLIENT_PROCESSOR:
                self._register_processor(env.name, conn)
                return  # connection now owned by a delivery thread
            if env.client_type == CLIENT_RECORDER:
                self._recorder_loop(conn, payload, env)
                return
            log.warning("rejecting client of unknown type %r", env.client_type)
            self.stats.clients_rejected += 1
            self._safe_error(conn, "UNKNOWN_TYPE")
            conn.close()
        except TransportError as exc:
            log.debug("connection ended: %s", exc)
            conn.close()
        except Exception:
            log.exception("handler crashed; closing connection")
            conn.close()
        finally:
            with self._lock:
                self._handlers.discard(threading.current_thread())
                self._handler_conns.discard(conn)

    def _recv_envelope(
        self, conn: FramedConnection
    ) -> Optional[tuple[bytes, Envelope]]:
        """One message with the final ack left pending; None = malformed
        (error frame sent, connection closed)."""
        payload = conn.recv_message(auto_ack=False)
        try:
            return payload, decode_envelope(payload)
        except WireError as exc:
            log.warning("undecodable envelope (%s); closing", exc)
            self._safe_error(conn, "BAD_ENVELOPE")
            conn.close()
            return None

    def _safe_error(self, conn: FramedConnection, code: str) -> None:
        try:
            conn.reply_error(code)
        except TransportError:
            pass

    # -- recorder protocol -----------------------------------------------------

    def _recorder_loop(
        self, conn: FramedConnection, payload: bytes, env: Envelope
    ) -> None:
        current: Optional[tuple[bytes, Envelope]] = (payload, env)
        while current is not None:
            payload, env = current
            if env.kind is MessageKind.DATA:
                conn.send_ack()  # confirm receipt before fan-out
                self.stats.chunks_received += 1
                self.fanout(env, payload=payload)
            elif env.kind is MessageKind.CONTROL:
                if env.msg == self.config.DISCONNECT_MSG:
                    self.stats.disconnects += 1
                    conn.send_ack()  # the disconnect confirmation
                    conn.close()
                    log.info("recorder %r disconnected", env.name)
                    return
                self._safe_error(conn, "BAD_CONTROL")
            else:
                self._safe_error(conn, "UNEXPECTED_MESSAGE")
            current = self._recv_envelope(conn)
        # malformed envelope mid-stream: already closed by _recv_envelope

    # -- processor protocol ------------------------------------------------------

    def _register_processor(self, name: str, conn: FramedConnection) -> None:
        if not name:
            self._safe_error(conn, "BAD_NAME")
            conn.close()
            return
        entry = ProcessorEntry(name=name, conn=conn)
        with self._lock:
            if name in self._registry:
                duplicate = True
            else:
                self._registry[name] = entry
                self.stats.registrations += 1
                duplicate = False
        if duplicate:
            log.warning("duplicate processor name %r rejected", name)
            self._safe_error(conn, "DUPLICATE_NAME")
            conn.close()
            return
        conn.send_ack()  # completes the REGISTER handshake
        thread = threading.Thread(
            target=self._delivery_loop,
            args=(entry,),
            name=f"mailman-deliver-{name}",
            daemon=True,
        )
        thread.start()
        # only started threads become visible to stop()'s join pass
        entry.thread = thread
        log.info("processor %r registered", name)
        self._notify("register", name)

    def fanout(self, env: Envelope, payload: Optional[bytes] = None) -> int:
        """Queue one DATA envelope's bytes to every registered processor.

        Returns the number of processors it was queued to. Forwards the
        received bytes verbatim so every processor sees exactly what the
        recorder sent.
        """
        from .wireproto import encode_envelope

        if payload is None:
            payload = encode_envelope(env)
        with self._lock:
            entries = list(self._registry.values())
        for entry in entries:
            limit = self.config.max_queue_chunks
            if limit is not None and entry.outbound.qsize() >= limit:
                try:
                    entry.outbound.get_nowait()
                except queue.Empty:
                    pass
                entry.dropped += 1
                self.stats.chunks_dropped += 1
                log.warning(
                    "queue full for %r: dropped oldest chunk (%d total)",
                    entry.name,
                    entry.dropped,
                )
            entry.outbound.put(payload)
        return len(entries)

    def _delivery_loop(self, entry: ProcessorEntry) -> None:
        """Own the processor connection: push queued chunks, watch for the
        client's disconnect, survive crossings."""
        try:
            self._deliver(entry)
        except Exception:
            log.exception("delivery loop for %r crashed", entry.name)
            self._deregister(entry, "internal error")
            entry.conn.close()

    def _deliver(self, entry: ProcessorEntry) -> None:
        conn = entry.conn
        carry: Optional[bytes] = None
        while self._running.is_set():
            if carry is not None:
                item, carry = carry, None
            else:
                try:
                    item = entry.outbound.get(timeout=self.IDLE_POLL)
                except queue.Empty:
                    try:
                        if conn.poll_readable(0.0) and not self._service_incoming(
                            conn, entry, None
                        ):
                            return
                    except (TransportError, WireError) as exc:
                        self._deregister(entry, f"connection lost: {exc}")
                        conn.close()
                        return
                    continue
            if item is _STOP:
                conn.close()
                return
            try:
                pending_len = conn.send_message_abortable(item)
            except (TransportError, WireError) as exc:
                self._deregister(entry, f"delivery failed: {exc}")
                conn.close()
                return
            if pending_len is None:
                entry.delivered += 1
                self.stats.chunks_fanned_out += 1
                continue
            # The client's own message crossed our delivery; service it and,
            # if the connection survives, retry the chunk.
            try:
                if self._service_incoming(conn, entry, pending_len):
                    carry = item
                else:
                    return
            except (TransportError, WireError) as exc:
                self._deregister(entry, f"connection lost mid-handshake: {exc}")
                conn.close()
                return
        conn.close()

    def _service_incoming(
        self, conn: FramedConnection, entry: ProcessorEntry, pending_len: Optional[int]
    ) -> bool:
        """Handle a client-initiated message on a processor connection.

        Returns False when the connection is finished (disconnect or
        malformed traffic), True when delivery should continue.
        """
        if pending_len is None:
            payload = conn.recv_message(auto_ack=False)
        else:
            payload = conn.finish_incoming(pending_len)
        try:
            env = decode_envelope(payload)
        except WireError as exc:
            log.warning("bad message from processor %r (%s); closing", entry.name, exc)
            self._safe_error(conn, "BAD_ENVELOPE")
            self._deregister(entry, "malformed message")
            conn.close()
            return False
        if env.kind is MessageKind.CONTROL and env.msg == self.config.DISCONNECT_MSG:
            self._deregister(entry, "disconnect")
            self.stats.disconnects += 1
            conn.send_ack()  # the disconnect confirmation
            conn.close()
            return False
        log.warning(
            "unexpected %s from processor %r; connection stays open",
            env.kind.name,
            entry.name,
        )
        self._safe_error(conn, "BAD_CONTROL")
        return True
