"""The processor role over a plain socket: subclass and override.

Usage mirrors the broker's own client framework::

    from pyclient import BaseProcessor

    class Counter(BaseProcessor):
        def process_data(self, data):
            print(data["seq"], len(data["data"]), data["fs"])

    Counter("counter", "server_info.json").start()

``start()`` dials the configured broker once a second until it answers,
registers the name, then blocks delivering every fanned-out chunk to
``process_data``. ``disconnect()`` may be called from another thread; it
performs the clean disconnect exchange and unblocks ``start()``.
"""

from __future__ import annotations

import json
import logging
import select
import socket
import threading
import time

from . import wire

log = logging.getLogger("pyclient")

RETRY_INTERVAL = 1.0
ACK_TIMEOUT = 5.0
POLL_INTERVAL = 0.02


class ProcessorError(Exception):
    pass


class ConfigError(ProcessorError):
    pass


class ErrorReply(ProcessorError):
    """Peer answered ERR <code> in place of an ack."""

    def __init__(self, code: str):
        self.code = code
        super().__init__(code)


class RegistrationRejected(ErrorReply):
    pass


class ConnectionLost(ProcessorError):
    pass


class AckTimeout(ProcessorError):
    pass


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load {path}: {exc}") from exc
    for key in ("SERVER", "PORT", "HEADER", "FORMAT", "DISCONNECT_MSG"):
        if key not in raw:
            raise ConfigError(f"missing config key {key}")
    if str(raw["FORMAT"]).lower().replace("_", "-") != "utf-8":
        raise ConfigError("only utf-8 text is supported")
    return raw


class _Framed:
    """Double-ack framing over one socket, per the protocol document."""

    def __init__(self, sock: socket.socket, header_size: int):
        self.sock = sock
        self.header_size = header_size

    def recv_exact(self, n: int) -> bytes:
        parts, got = [], 0
        while got < n:
            try:
                piece = self.sock.recv(n - got)
            except socket.timeout as exc:
                raise AckTimeout("timed out mid-frame") from exc
            except OSError as exc:
                raise ConnectionLost(str(exc)) from exc
            if not piece:
                raise ConnectionLost(f"peer closed after {got}/{n} bytes")
            parts.append(piece)
            got += len(piece)
        return b"".join(parts)

    def read_frame(self, timeout: float | None = None):
        """Classify one fixed frame: ('ack', None) | ('err', code) | ('hdr', n)."""
        if timeout is not None:
            self.sock.settimeout(timeout)
        try:
            block = self.recv_exact(self.header_size)
        finally:
            if timeout is not None:
                self.sock.settimeout(None)
        text = block.rstrip(b" ")
        if text == b"ACK":
            return "ack", None
        if text.startswith(b"ERR"):
            return "err", text[3:].strip(b" ").decode("utf-8", "replace")
        return "hdr", wire.decode_header(block)

    def await_ack(self, skip_headers: bool = False) -> None:
        while True:
            kind, value = self.read_frame(timeout=ACK_TIMEOUT)
            if kind == "ack":
                return
            if kind == "err":
                raise ErrorReply(value)
            if not skip_headers:
                raise ConnectionLost("unexpected header frame in ack position")
            # a fan-out delivery crossed our message; the broker abandons it

    def send_message(self, payload: bytes, skip_headers: bool = False) -> None:
        self._sendall(wire.encode_header(len(payload), self.header_size))
        self.await_ack(skip_headers)
        if payload:
            self._sendall(payload)
        self.await_ack(skip_headers)

    def recv_message(self) -> bytes:
        length = wire.decode_header(self.recv_exact(self.header_size))
        self._sendall(wire.ack_frame(self.header_size))
        payload = self.recv_exact(length)
        self._sendall(wire.ack_frame(self.header_size))
        return payload

    def readable(self, timeout: float) -> bool:
        r, _, _ = select.select([self.sock], [], [], timeout)
        return bool(r)

    def _sendall(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise ConnectionLost(str(exc)) from exc

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class BaseProcessor:
    """Inherit, override ``process_data(data)``, call ``start()``.

    ``data`` is a dict with keys ``data`` (list of float samples,
    interleaved by channel), ``fs``, ``timestamp``, ``seq``, ``channels``.
    Exceptions from ``process_data`` are logged and delivery continues.
    """

    def __init__(self, name: str, config_path: str):
        if not name:
            raise ValueError("processor name must be non-empty")
        self.name = name
        self.config = load_config(config_path)
        self.processed_count = 0
        self._conn: _Framed | None = None
        self._stop = threading.Event()
        self._finished = threading.Event()

    def process_data(self, data: dict) -> None:
        raise NotImplementedError("override process_data(data)")

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        self._stop.clear()
        self._finished.clear()
        address = (self.config["SERVER"], self.config["PORT"])
        header_size = self.config["HEADER"]
        try:
            while not self._stop.is_set():
                sock = self._dial(address)
                if sock is None:
                    return
                self._conn = _Framed(sock, header_size)
                try:
                    self._register()
                except RegistrationRejected:
                    self._conn.close()
                    self._conn = None
                    raise
                except (ConnectionLost, AckTimeout) as exc:
                    log.warning("registration failed (%s); retrying", exc)
                    self._conn.close()
                    self._conn = None
                    continue
                try:
                    self._receive_loop()
                    return  # disconnected cleanly
                except (ConnectionLost, AckTimeout, wire.WireError) as exc:
                    self._conn.close()
                    self._conn = None
                    if self._stop.is_set():
                        return
                    log.warning("connection lost (%s); reconnecting", exc)
        finally:
            self._finished.set()

    def disconnect(self, timeout: float = 10.0) -> None:
        self._stop.set()
        self._finished.wait(timeout)

    # -- internals -----------------------------------------------------------

    def _dial(self, address) -> socket.socket | None:
        attempt = 0
        origin = time.monotonic()
        while not self._stop.is_set():
            attempt += 1
            try:
                sock = socket.create_connection(address, timeout=RETRY_INTERVAL)
                sock.settimeout(None)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                log.info("connected to %s:%s after %d attempt(s)", *address, attempt)
                return sock
            except OSError as exc:
                log.debug("connect attempt %d failed: %s", attempt, exc)
            remaining = origin + attempt * RETRY_INTERVAL - time.monotonic()
            if remaining > 0:
                self._stop.wait(remaining)
        return None

    def _register(self) -> None:
        try:
            self._conn.send_message(wire.encode_register(self.name, time.time()))
        except ErrorReply as exc:
            raise RegistrationRejected(exc.code) from exc
        log.info("registered as %r", self.name)

    def _receive_loop(self) -> None:
        while True:
            if self._stop.is_set():
                self._send_disconnect()
                return
            if not self._conn.readable(POLL_INTERVAL):
                continue
            payload = self._conn.recv_message()
            try:
                env = wire.decode(payload)
            except wire.WireError as exc:
                log.error("undecodable envelope: %s", exc)
                continue
            if env["kind"] != wire.KIND_DATA:
                continue
            self.processed_count += 1
            data = {
                "data": env["samples"],
                "fs": env["fs"],
                "timestamp": env["timestamp"],
                "seq": env["seq"],
                "channels": env["channels"],
            }
            try:
                self.process_data(data)
            except Exception:
                log.exception("process_data failed on seq %s; continuing", env["seq"])

    def _send_disconnect(self) -> None:
        try:
            self._conn.send_message(
                wire.encode_control(
                    "processor",
                    self.name,
                    self.config["DISCONNECT_MSG"],
                    time.time(),
                ),
                skip_headers=True,  # a delivery may cross our request
            )
        except (ConnectionLost, AckTimeout, ErrorReply, wire.WireError) as exc:
            log.warning("disconnect handshake failed: %s", exc)
        finally:
            self._conn.close()
            self._conn = None
