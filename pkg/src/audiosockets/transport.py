"""Framed, ack-synchronized message exchange over a byte stream.

A message crosses the wire as: header frame -> ACK -> payload -> ACK. The
receiver acks the header before reading the payload, and acks again once
the whole payload has arrived, looping over however many fragments the
stream delivers.

Works over anything that quacks like a connected socket: ``recv(n)``
returning at least one byte (empty = peer closed), ``sendall(data)``,
``settimeout(t)``, ``close()``. Real TCP sockets and the in-memory pipes
from :mod:`audiosockets.netharness` are interchangeable.

A connection supports one in-flight send handshake and one in-flight
receive handshake at a time. When both peers start a message at once
(only possible on a broker<->processor link, where the broker pushes
fan-out while the client may initiate a disconnect), the frames are still
unambiguous: ack/err frames are non-numeric, header frames are numeric.
``send_message_abortable`` lets the broker detect the crossing and yield;
``ignore_crossing`` lets the disconnecting client skip the abandoned
delivery header it may observe while waiting for its own ack.
"""

from __future__ import annotations

import select
import socket
from typing import Optional

from . import wireproto
from .wireproto import DEFAULT_HEADER_SIZE


class TransportError(Exception):
    """Base class for transport failures."""


class PeerClosed(TransportError):
    """The stream ended before the expected bytes arrived."""


class AckTimeout(TransportError):
    """No acknowledgement within ack_timeout seconds."""


class NackReceived(TransportError):
    """Peer answered with an ERR frame instead of an ACK."""

    def __init__(self, code: str):
        self.code = code
        super().__init__(f"peer replied ERR {code}")


class ProtocolViolation(TransportError):
    """Peer sent a frame that makes no sense at this point in the handshake."""


class BindError(TransportError):
    """Listening endpoint could not be created (port in use, bad address)."""


def _poll_stream(stream, timeout: float) -> bool:
    poll = getattr(stream, "poll_readable", None)
    if poll is not None:
        return poll(timeout)
    try:
        r, _, _ = select.select([stream], [], [], timeout)
    except (OSError, ValueError):
        return True  # closed fd: let the recv path surface PeerClosed
    return bool(r)


class FramedConnection:
    """One framed endpoint over a byte stream.

    Use by a single thread per direction; concurrent sends must be
    serialized by the caller.
    """

    def __init__(
        self,
        stream,
        header_size: int = DEFAULT_HEADER_SIZE,
        ack_timeout: float = 5.0,
    ):
        self.stream = stream
        self.header_size = header_size
        self.ack_timeout = ack_timeout

    def recv_exact(self, n: int) -> bytes:
        """Read exactly n bytes, tolerating arbitrary fragmentation."""
        if n == 0:
            return b""
        parts = []
        got = 0
        while got < n:
            try:
                piece = self.stream.recv(n - got)
            except TimeoutError:
                raise
            except OSError as exc:
                raise PeerClosed(f"stream error after {got}/{n} bytes: {exc}") from exc
            if not piece:
                raise PeerClosed(f"stream ended after {got}/{n} bytes")
            parts.append(piece)
            got += len(piece)
        return b"".join(parts)

    def poll_readable(self, timeout: float) -> bool:
        """True when a recv would not block (data pending or peer closed)."""
        return _poll_stream(self.stream, timeout)

    def _read_frame(self, timeout: Optional[float] = None):
        """Read one fixed-size frame and classify it.

        Returns ("ack", None), ("err", code) or ("hdr", payload_len).
        """
        if timeout is not None:
            self.stream.settimeout(timeout)
        try:
            block = self.recv_exact(self.header_size)
        except TimeoutError as exc:
            raise AckTimeout(f"no frame within {timeout}s") from exc
        finally:
            if timeout is not None:
                self.stream.settimeout(None)
        text = block.rstrip(b" ")
        if text == b"ACK":
            return ("ack", None)
        if text.startswith(b"ERR"):
            code = text[3:].strip(b" ").decode("utf-8", "replace")
            return ("err", code)
        return ("hdr", wireproto.decode_header(block, self.header_size))

    def _await_ack(self, ignore_crossing: bool = False) -> None:
        while True:
            kind, value = self._read_frame(timeout=self.ack_timeout)
            if kind == "ack":
                return
            if kind == "err":
                raise NackReceived(value)
            # A header frame: the peer started its own message while we were
            # waiting. Legal only during a disconnect crossing.
            if not ignore_crossing:
                raise ProtocolViolation(
                    f"header frame ({value} bytes) while awaiting ack"
                )

    def send_message(self, payload: bytes, *, ignore_crossing: bool = False) -> None:
        """Full double-ack send: header, ack, payload, ack."""
        header = wireproto.encode_header(len(payload), self.header_size)
        self._sendall(header)
        self._await_ack(ignore_crossing)
        if payload:
            self._sendall(payload)
        self._await_ack(ignore_crossing)

    def send_message_abortable(self, payload: bytes) -> Optional[int]:
        """Send, but yield if the peer's own message crosses our header.

        Returns None on normal delivery. If a header frame arrives in place
        of the first ack, the delivery is abandoned (payload never written)
        and the peer's declared payload length is returned; the caller must
        then ack and receive that message. The peer, per protocol, ignores
        our orphaned header frame.
        """
        header = wireproto.encode_header(len(payload), self.header_size)
        self._sendall(header)
        kind, value = self._read_frame(timeout=self.ack_timeout)
        if kind == "hdr":
            return value
        if kind == "err":
            raise NackReceived(value)
        if payload:
            self._sendall(payload)
        self._await_ack()
        return None

    def recv_message(self, *, auto_ack: bool = True) -> bytes:
        """Receive one message: header, ack, payload, ack.

        With auto_ack=False the final ack is left pending; the caller
        completes the handshake with send_ack() or reply_error(), which
        lets a server validate the payload before confirming it.
        """
        block = self.recv_exact(self.header_size)
        try:
            length = wireproto.decode_header(block, self.header_size)
        except wireproto.MalformedHeader:
            try:
                self.reply_error("BAD_HEADER")
            except TransportError:
                pass
            raise
        self.send_ack()
        payload = self.recv_exact(length)
        if auto_ack:
            self.send_ack()
        return payload

    def finish_incoming(self, length: int) -> bytes:
        """Continue a peer message whose header was consumed by a crossed send.

        Acks the already-read header and returns the payload; the final ack
        stays pending exactly as with recv_message(auto_ack=False).
        """
        self.send_ack()
        return self.recv_exact(length)

    def send_ack(self) -> None:
        self._sendall(wireproto.ack_frame(self.header_size))

    def reply_error(self, code: str) -> None:
        """Send an ERR frame in place of a pending ack."""
        frame = wireproto.error_frame(code, self.header_size)
        self._sendall(frame)

    def _sendall(self, data: bytes) -> None:
        try:
            self.stream.sendall(data)
        except TimeoutError:
            raise
        except OSError as exc:
            raise PeerClosed(f"send failed: {exc}") from exc

    def close(self) -> None:
        try:
            self.stream.close()
        except OSError:
            pass


class TcpListener:
    """Accepting endpoint over a real TCP socket."""

    def __init__(self, address: tuple[str, int]):
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind(address)
            sock.listen(16)
        except OSError as exc:
            sock.close()
            raise BindError(f"cannot listen on {address[0]}:{address[1]}: {exc}") from exc
        self._sock = sock

    @property
    def address(self) -> tuple[str, int]:
        return self._sock.getsockname()[:2]

    def accept(self):
        try:
            conn, _ = self._sock.accept()
        except OSError as exc:
            raise PeerClosed(f"listener closed: {exc}") from exc
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return conn

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class TcpNetwork:
    """Default dial/listen implementation over the kernel TCP stack."""

    def listen(self, address: tuple[str, int]) -> TcpListener:
        return TcpListener(address)

    def connect(self, address: tuple[str, int], timeout: float = 1.0):
        sock = socket.create_connection(address, timeout=timeout)
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return sock


TCP_NETWORK = TcpNetwork()
