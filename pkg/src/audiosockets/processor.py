"""Processor client: register by name, receive fan-out, run a user hook.

The hook is any callable taking one argument, a dict with keys ``data``
(float32 samples), ``fs``, ``timestamp``, ``seq`` and ``channels``. Hooks
run serially in delivery order on the receive thread; a hook that raises
is logged and the loop keeps going, so one bad frame cannot kill a
long-running node.
"""

from __future__ import annotations

import logging
import threading
import time
from typing import Callable, Optional

from .appcli import Config
from .netharness import ChunkRecord, chunk_digest
from .recorder import connect_with_retry
from .transport import (
    FramedConnection,
    NackReceived,
    TCP_NETWORK,
    TransportError,
)
from .wireproto import (
    Envelope,
    MessageKind,
    WireError,
    decode_envelope,
    encode_envelope,
)

log = logging.getLogger("audiosockets.processor")


class RegistrationRejected(Exception):
    """The broker refused our name (duplicate, empty, ...)."""

    def __init__(self, code: str):
        self.code = code
        super().__init__(code)


class ProcessorClient:
    """One named processor. ``start()`` blocks; ``disconnect()`` may be
    called from any other thread and returns once the clean disconnect
    exchange has finished."""

    POLL_INTERVAL = 0.02  # also bounds how fast a disconnect request is noticed

    def __init__(
        self,
        name: str,
        config: Config,
        hook: Callable,
        *,
        network=None,
        auto_reconnect: bool = True,
        recv_log: Optional[list] = None,
    ):
        if not name:
            raise ValueError("processor name must be non-empty")
        self.name = name
        self.config = config
        self.hook = hook
        self.network = network or TCP_NETWORK
        self.auto_reconnect = auto_reconnect
        self.recv_log = recv_log
        self.processed_count = 0
        self.connection: Optional[FramedConnection] = None
        self._stop = threading.Event()
        self._run_thread: Optional[threading.Thread] = None
        self._finished = threading.Event()

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        """Register and consume fan-out until disconnect() or a fatal error."""
        self._stop.clear()
        self._finished.clear()
        try:
            while not self._stop.is_set():
                self.connection = connect_with_retry(
                    self.config, stop=self._stop, network=self.network
                )
                if self.connection is None:
                    return
                try:
                    self._register()
                except TransportError as exc:
                    log.warning("registration attempt failed: %s", exc)
                    self.connection.close()
                    self.connection = None
                    if not self.auto_reconnect:
                        raise
                    continue
                try:
                    self._receive_loop()
                    return  # clean disconnect happened inside the loop
                except (TransportError, WireError) as exc:
                    # WireError here means the frame stream desynced, which
                    # is as fatal as a dropped connection
                    self.connection.close()
                    self.connection = None
                    if self._stop.is_set() or not self.auto_reconnect:
                        log.info("connection lost (%s); stopping", exc)
                        return
                    log.warning("connection lost (%s); reconnecting", exc)
        finally:
            self._finished.set()

    def _register(self) -> None:
        env = Envelope.register(self.name, time.time())
        try:
            self.connection.send_message(encode_envelope(env))
        except NackReceived as exc:
            self.connection.close()
            self.connection = None
            raise RegistrationRejected(exc.code) from exc
        log.info("registered as %r", self.name)

    def _receive_loop(self) -> None:
        while True:
            if self._stop.is_set():
                self._do_disconnect()
                return
            if not self.connection.poll_readable(self.POLL_INTERVAL):
                continue
            payload = self.connection.recv_message()
            try:
                env = decode_envelope(payload)
            except WireError as exc:
                log.error("undecodable envelope from broker: %s", exc)
                continue
            if env.kind is not MessageKind.DATA:
                log.warning("ignoring %s envelope from broker", env.kind.name)
                continue
            self._dispatch(env)

    def _dispatch(self, env: Envelope) -> None:
        self.processed_count += 1
        if self.recv_log is not None:
            self.recv_log.append(
                ChunkRecord(env.seq, chunk_digest(env.audio.samples), time.time())
            )
        data = {
            "data": env.audio.samples,
            "fs": env.fs,
            "timestamp": env.timestamp,
            "seq": env.seq,
            "channels": env.channels,
        }
        try:
            self.hook(data)
        except Exception:
            log.exception("hook failed on seq %s; continuing", env.seq)

    def _do_disconnect(self) -> None:
        """Send the disconnect token and wait for the broker's confirmation.

        A fan-out delivery may cross our request on the wire; its header
        frame is skipped (the broker abandons that delivery once it sees
        our message).
        """
        env = Envelope.control(
            "processor", self.name, self.config.DISCONNECT_MSG, time.time()
        )
        try:
            self.connection.send_message(encode_envelope(env), ignore_crossing=True)
        except (TransportError, WireError) as exc:
            log.warning("disconnect handshake failed: %s", exc)
        finally:
            self.connection.close()
            self.connection = None

    def disconnect(self, timeout: float = 10.0) -> None:
        """Signal the receive loop to perform the disconnect exchange."""
        self._stop.set()
        self._finished.wait(timeout)

    def shutdown(self) -> None:
        """Cleanup for callers whose start() was interrupted on this thread."""
        self._stop.set()
        if self.connection is not None:
            self._do_disconnect()
        self._finished.set()

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(
            target=self.start, name=f"processor-{self.name}", daemon=True
        )
        self._run_thread = thread
        thread.start()
        return thread


# -- shipped hooks ----------------------------------------------------------


def null_hook(data) -> None:
    """Does nothing; useful as a throughput baseline."""


class DumpHook:
    """Appends every chunk to one float32 WAV file."""

    def __init__(self, path: str):
        self.path = path
        self._writer = None

    def __call__(self, data) -> None:
        from .wavio import FloatWavWriter

        if self._writer is None:
            self._writer = FloatWavWriter(
                self.path, fs=data["fs"], channels=data["channels"]
            )
        self._writer.append(data["data"])

    def close(self) -> None:
        if self._writer is not None:
            self._writer.close()


class LogMelHook:
    """Prints the log-mel matrix dimensions for every chunk."""

    def __init__(self, **kwargs):
        self._kwargs = kwargs
        self._transform = None

    def __call__(self, data) -> None:
        from .dsp import LogMelSpectrogram, TooShort

        if self._transform is None or self._transform.cfg.fs != data["fs"]:
            self._transform = LogMelSpectrogram(data["fs"], **self._kwargs)
        try:
            matrix = self._transform(data["data"])
        except TooShort:
            print(f"seq {data['seq']}: chunk shorter than one frame")
            return
        print(f"{matrix.shape[0]}x{matrix.shape[1]}")
