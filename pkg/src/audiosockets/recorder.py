"""Recorder client: capture audio into a queue, periodically ship it out.

Capture and sending run on separate threads joined by a CaptureQueue, so a
slow or broken network never blocks the audio source. The client connects
with a 1 Hz retry loop, stamps every outgoing chunk with a monotone ``seq``,
and on transport failure keeps the queue intact, reconnects, and resumes.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import deque
from typing import Callable, Optional

import numpy as np

from .appcli import Config
from .netharness import ChunkRecord, chunk_digest
from .transport import (
    FramedConnection,
    TCP_NETWORK,
    TransportError,
)
from .wireproto import Envelope, WireError, encode_envelope

log = logging.getLogger("audiosockets.recorder")

RETRY_INTERVAL = 1.0


class SourceError(Exception):
    """The audio source failed mid-capture."""


def connect_with_retry(
    config: Config,
    *,
    stop: Optional[threading.Event] = None,
    network=None,
    attempt_log: Optional[list] = None,
) -> Optional[FramedConnection]:
    """Dial the broker once a second until it answers.

    Returns the live connection, or None if ``stop`` was set first.
    """
    network = network or TCP_NETWORK
    attempt = 0
    origin = time.monotonic()
    while stop is None or not stop.is_set():
        attempt += 1
        if attempt_log is not None:
            attempt_log.append(time.monotonic())
        try:
            stream = network.connect(config.address, timeout=RETRY_INTERVAL)
        except OSError as exc:
            log.debug("connect attempt %d to %s failed: %s", attempt, config.address, exc)
        else:
            log.info("connected to %s:%s after %d attempt(s)", *config.address, attempt)
            return FramedConnection(stream, header_size=config.HEADER)
        # attempts sit on a fixed 1 Hz grid so per-attempt cost cannot
        # stretch the cadence
        remaining = origin + attempt * RETRY_INTERVAL - time.monotonic()
        if remaining > 0:
            if stop is not None:
                stop.wait(remaining)
            else:
                time.sleep(remaining)
    return None


class SineSource:
    """Synthetic pure tone. Paced to real time by default so it behaves
    like a live microphone; unpaced mode serves deterministic tests."""

    def __init__(
        self,
        freq: float = 440.0,
        fs: int = 16000,
        channels: int = 1,
        block_frames: int = 1024,
        amplitude: float = 0.5,
        paced: bool = True,
        max_frames: Optional[int] = None,
    ):
        self.freq = freq
        self.fs = fs
        self.channels = channels
        self.block_frames = block_frames
        self.amplitude = amplitude
        self.paced = paced
        self.max_frames = max_frames
        self._frame = 0
        self._started: Optional[float] = None

    def next_block(self) -> Optional[np.ndarray]:
        if self.max_frames is not None and self._frame >= self.max_frames:
            return None
        n = self.block_frames
        if self.max_frames is not None:
            n = min(n, self.max_frames - self._frame)
        idx = np.arange(self._frame, self._frame + n, dtype=np.float64)
        mono = self.amplitude * np.sin(2.0 * np.pi * self.freq * idx / self.fs)
        block = np.repeat(mono, self.channels).astype("<f4")
        self._frame += n
        if self.paced:
            if self._started is None:
                self._started = time.monotonic()
            due = self._started + self._frame / self.fs
            delay = due - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        return block


class WavSource:
    """Streams a WAV file in fixed-size blocks; paced like live capture by
    default, so the recorder's periodic sender sees a steady feed."""

    def __init__(self, path: str, block_frames: int = 1024, paced: bool = True):
        from .wavio import read_wav

        self.fs, self.channels, self._samples = read_wav(path)
        self.block_frames = block_frames
        self.paced = paced
        self._frame = 0
        self._total_frames = self._samples.size // self.channels
        self._started: Optional[float] = None

    def next_block(self) -> Optional[np.ndarray]:
        if self._frame >= self._total_frames:
            return None
        n = min(self.block_frames, self._total_frames - self._frame)
        lo = self._frame * self.channels
        block = self._samples[lo : lo + n * self.channels]
        self._frame += n
        if self.paced:
            if self._started is None:
                self._started = time.monotonic()
            due = self._started + self._frame / self.fs
            delay = due - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        return block


class MicrophoneSource:
    """Live capture through sounddevice, when it is installed."""

    def __init__(self, fs: int = 16000, channels: int = 1, block_frames: int = 1024):
        try:
            import sounddevice
        except ImportError as exc:
            raise RuntimeError(
                "microphone capture needs the sounddevice package (pip install sounddevice)"
            ) from exc
        self.fs = fs
        self.channels = channels
        self.block_frames = block_frames
        self._stream = sounddevice.InputStream(
            samplerate=fs, channels=channels, dtype="float32", blocksize=block_frames
        )
        self._stream.start()

    def next_block(self) -> Optional[np.ndarray]:
        data, _overflowed = self._stream.read(self.block_frames)
        return np.ascontiguousarray(data, dtype="<f4").reshape(-1)

    def close(self) -> None:
        self._stream.stop()
        self._stream.close()


class CaptureQueue:
    """Ordered block buffer between the capture and network threads.

    Unbounded by default. In bounded mode the oldest block is dropped to
    make room and the loss is counted, never silent.
    """

    def __init__(self, capacity: Optional[int] = None):
        self.capacity = capacity
        self.dropped = 0
        self.dropped_samples = 0
        self._blocks: deque = deque()
        self._lock = threading.Lock()

    def put(self, block: np.ndarray) -> None:
        with self._lock:
            if self.capacity is not None and len(self._blocks) >= self.capacity:
                lost = self._blocks.popleft()
                self.dropped += 1
                self.dropped_samples += int(lost.size)
            self._blocks.append(block)

    def drain(self) -> list:
        with self._lock:
            out = list(self._blocks)
            self._blocks.clear()
            return out

    def __len__(self) -> int:
        with self._lock:
            return len(self._blocks)

    @property
    def queued_samples(self) -> int:
        with self._lock:
            return int(sum(b.size for b in self._blocks))


def capture_loop(
    source,
    queue: CaptureQueue,
    stop: Optional[threading.Event] = None,
    on_block: Optional[Callable] = None,
) -> None:
    """Pull blocks from the source into the queue until EOS or stop.

    Source failures raise SourceError to the caller.
    """
    while stop is None or not stop.is_set():
        try:
            block = source.next_block()
        except Exception as exc:
            raise SourceError(f"audio source failed: {exc}") from exc
        if block is None:
            return
        queue.put(block)
        if on_block is not None:
            on_block(block)


class Recorder:
    """The recorder role: one capture thread, one sending loop.

    ``run()`` blocks until the source ends or ``stop()`` is called from
    another thread; both paths flush the queue and perform the clean
    disconnect exchange before returning.
    """

    def __init__(
        self,
        config: Config,
        source,
        *,
        name: str = "rec0",
        send_period: Optional[float] = None,
        max_queue_chunks: Optional[int] = None,
        network=None,
        chunk_log: Optional[list] = None,
        stop_when_source_ends: bool = True,
    ):
        self.config = config
        self.source = source
        self.name = name
        self.send_period = send_period if send_period is not None else config.send_period
        self.network = network or TCP_NETWORK
        self.queue = CaptureQueue(
            max_queue_chunks if max_queue_chunks is not None else config.max_queue_chunks
        )
        self.chunk_log = chunk_log
        self.stop_when_source_ends = stop_when_source_ends
        self.seq_next = 0
        self.samples_captured = 0
        self.samples_sent = 0
        self.connection: Optional[FramedConnection] = None
        self._stop = threading.Event()
        self._run_thread: Optional[threading.Thread] = None
        self._capture_thread: Optional[threading.Thread] = None
        self._capture_error: Optional[Exception] = None
        self._source_done = threading.Event()

    # -- capture side ------------------------------------------------------

    def _capture(self) -> None:
        def count(block):
            self.samples_captured += int(block.size)

        try:
            capture_loop(self.source, self.queue, self._stop, on_block=count)
        except SourceError as exc:
            self._capture_error = exc
            log.error("capture stopped: %s", exc)
        finally:
            self._source_done.set()

    # -- network side ------------------------------------------------------

    def run(self) -> None:
        """Connect, stream until stopped or the source ends, then disconnect."""
        self._stop.clear()
        self.connection = connect_with_retry(
            self.config, stop=self._stop, network=self.network
        )
        if self.connection is None:
            return
        self._capture_thread = threading.Thread(
            target=self._capture, name="recorder-capture", daemon=True
        )
        self._capture_thread.start()

        pending: list = []
        next_tick = time.monotonic() + self.send_period
        while not self._stop.is_set():
            delay = next_tick - time.monotonic()
            if delay > 0:
                self._stop.wait(delay)
            # deadline-based cadence: send time does not push ticks later,
            # and a stall (reconnect) resumes the grid instead of bursting
            next_tick = max(next_tick + self.send_period,
                            time.monotonic() + 0.2 * self.send_period)
            pending = self._send_tick(pending)
            if (
                self.stop_when_source_ends
                and self._source_done.is_set()
                and not pending
                and len(self.queue) == 0
            ):
                break
        self._finish(pending)

    def _send_tick(self, pending: list) -> list:
        blocks = pending + self.queue.drain()
        if not blocks:
            return []
        samples = np.concatenate(blocks) if len(blocks) > 1 else blocks[0]
        if samples.size == 0:
            return []  # never send an empty DATA envelope
        if not self._transmit(samples):
            return [samples]
        return []

    def _transmit(self, samples: np.ndarray) -> bool:
        """Send one DATA envelope; on failure reconnect and report False so
        the caller keeps the samples for the next tick."""
        if self.connection is None:
            return False
        fs = getattr(self.source, "fs", 0)
        channels = getattr(self.source, "channels", 1)
        env = Envelope.data(
            self.name, time.time(), fs, channels, self.seq_next, samples
        )
        payload = encode_envelope(env)
        try:
            self.connection.send_message(payload)
        except (TransportError, WireError) as exc:
            log.warning("send of seq %d failed (%s); reconnecting", self.seq_next, exc)
            self.connection.close()
            self.connection = connect_with_retry(
                self.config, stop=self._stop, network=self.network
            )
            return False
        if self.chunk_log is not None:
            self.chunk_log.append(
                ChunkRecord(self.seq_next, chunk_digest(samples), time.time())
            )
        self.samples_sent += int(samples.size)
        self.seq_next += 1
        return True

    def _finish(self, pending: list) -> None:
        """Flush whatever is left, send the disconnect token, close."""
        if self.connection is not None:
            blocks = pending + self.queue.drain()
            samples = (
                np.concatenate(blocks)
                if len(blocks) > 1
                else (blocks[0] if blocks else np.zeros(0, dtype="<f4"))
            )
            if samples.size:
                if not self._transmit(samples) and self.connection is not None:
                    # one retry after the in-flush reconnect
                    self._transmit(samples)
            self._send_disconnect()
        closer = getattr(self.source, "close", None)
        if closer is not None:
            closer()

    def _send_disconnect(self) -> None:
        if self.connection is None:
            return
        env = Envelope.control(
            "recorder", self.name, self.config.DISCONNECT_MSG, time.time()
        )
        try:
            self.connection.send_message(encode_envelope(env))
        except (TransportError, WireError) as exc:
            log.warning("disconnect handshake failed: %s", exc)
        finally:
            self.connection.close()
            self.connection = None

    # -- control -----------------------------------------------------------

    def start(self) -> None:
        """Run on a background thread; pair with stop()."""
        self._run_thread = threading.Thread(
            target=self.run, name="recorder-run", daemon=True
        )
        self._run_thread.start()

    def stop(self, timeout: float = 10.0) -> None:
        """Signal the run loop to flush, disconnect, and return."""
        self._stop.set()
        if self._run_thread is not None:
            self._run_thread.join(timeout)
            self._run_thread = None

    def shutdown(self) -> None:
        """Synchronous cleanup for callers driving run() on their own thread."""
        self._stop.set()
        self._finish([])
