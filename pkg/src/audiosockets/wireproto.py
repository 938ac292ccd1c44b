"""Frame and envelope encoding for the audio-socket wire protocol.

Everything that crosses the wire is one of three frame shapes:

* header frame   -- fixed-size block (default 64 bytes) holding the decimal
                    byte length of the payload that follows, left-justified
                    and space-padded.
* ack/err frame  -- fixed-size block holding ``ACK`` or ``ERR <CODE>``,
                    space-padded. Sent by a receiver in response to a header
                    and again in response to the payload.
* envelope       -- the payload itself: a small binary container with JSON
                    metadata and an optional block of float32 audio samples.

Envelope layout (all multi-byte integers big-endian unless noted)::

    offset  size      field
    0       4         magic "ASKT"
    4       1         version, currently 0x01
    5       1         kind: 1=DATA, 2=REGISTER, 3=CONTROL
    6       4         meta_len (u32 BE)
    10      meta_len  UTF-8 JSON metadata, sorted keys, no extra whitespace
    10+m    rest      audio samples, IEEE-754 float32 little-endian,
                      interleaved by channel (DATA only, may be empty)

Metadata keys: ``type``, ``name``, ``timestamp``, ``fs``, ``channels``,
``nframes``, ``seq``, ``msg``. Keys that do not apply to a kind are omitted.
Encoding the same envelope twice yields identical bytes.

All functions here are pure; they are safe to call from any thread.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any

import numpy as np

MAGIC = b"ASKT"
VERSION = 1
DEFAULT_HEADER_SIZE = 64

# Fixed prefix: magic + version + kind + meta_len
_PREFIX_LEN = 10

CLIENT_RECORDER = "recorder"
CLIENT_PROCESSOR = "processor"


class WireError(Exception):
    """Base class for everything this module can raise on bad input."""


class MalformedHeader(WireError):
    """Header frame does not contain a non-negative decimal."""


class BadMagic(WireError):
    """Envelope bytes do not start with the protocol magic."""


class UnsupportedVersion(WireError):
    """Envelope declares a protocol version other than 1."""


class MetadataError(WireError):
    """Envelope metadata is truncated, malformed, or inconsistent."""


class LengthMismatch(WireError):
    """Audio byte count disagrees with nframes * channels."""


class InvalidEnvelope(WireError):
    """Envelope violates its own invariants and cannot be encoded."""


class MessageKind(IntEnum):
    DATA = 1
    REGISTER = 2
    CONTROL = 3


@dataclass
class AudioChunk:
    """A block of interleaved float32 samples.

    ``len(samples)`` must equal ``nframes * channels`` for whatever channel
    count the enclosing envelope declares.
    """

    samples: np.ndarray
    nframes: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype="<f4").reshape(-1)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AudioChunk):
            return NotImplemented
        return self.nframes == other.nframes and np.array_equal(
            self.samples, other.samples
        )

    def __len__(self) -> int:
        return int(self.samples.size)


@dataclass(eq=True)
class Envelope:
    """One complete protocol message.

    DATA envelopes carry audio plus ``fs``/``channels``/``seq``; REGISTER
    announces a processor by name; CONTROL carries a short text message
    (in practice the configured disconnect token).
    """

    kind: MessageKind
    client_type: str
    name: str
    timestamp: float
    fs: int | None = None
    channels: int | None = None
    seq: int | None = None
    msg: str | None = None
    audio: AudioChunk | None = field(default=None)

    @classmethod
    def data(
        cls,
        name: str,
        timestamp: float,
        fs: int,
        channels: int,
        seq: int,
        samples: np.ndarray,
    ) -> "Envelope":
        samples = np.asarray(samples, dtype="<f4").reshape(-1)
        if channels <= 0:
            raise InvalidEnvelope("channels must be >= 1")
        if samples.size % channels:
            raise InvalidEnvelope("sample count not divisible by channels")
        chunk = AudioChunk(samples, samples.size // channels)
        return cls(
            MessageKind.DATA,
            CLIENT_RECORDER,
            name,
            timestamp,
            fs=fs,
            channels=channels,
            seq=seq,
            audio=chunk,
        )

    @classmethod
    def register(cls, name: str, timestamp: float) -> "Envelope":
        return cls(MessageKind.REGISTER, CLIENT_PROCESSOR, name, timestamp)

    @classmethod
    def control(
        cls, client_type: str, name: str, msg: str, timestamp: float
    ) -> "Envelope":
        return cls(MessageKind.CONTROL, client_type, name, timestamp, msg=msg)


def encode_header(payload_len: int, header_size: int = DEFAULT_HEADER_SIZE) -> bytes:
    """Render ``payload_len`` as a fixed-size decimal header frame.

    Raises OverflowError when the decimal text cannot fit.
    """
    if payload_len < 0:
        raise ValueError("payload_len must be non-negative")
    text = str(payload_len)
    if len(text) > header_size:
        raise OverflowError(
            f"length {payload_len} needs {len(text)} digits, header is {header_size}"
        )
    return text.ljust(header_size).encode("utf-8")


def decode_header(block: bytes, header_size: int = DEFAULT_HEADER_SIZE) -> int:
    """Parse a header frame back into its byte count. Inverse of encode_header."""
    if len(block) != header_size:
        raise MalformedHeader(
            f"header frame is {len(block)} bytes, expected {header_size}"
        )
    text = block.strip(b" ")
    if not text or not text.isdigit():
        raise MalformedHeader(f"not a non-negative decimal: {block[:16]!r}")
    return int(text)


def ack_frame(header_size: int = DEFAULT_HEADER_SIZE) -> bytes:
    """The fixed acknowledgement frame: ``ACK`` space-padded to header_size."""
    return b"ACK".ljust(header_size)


def error_frame(code: str, header_size: int = DEFAULT_HEADER_SIZE) -> bytes:
    """An error frame: ``ERR <code>`` space-padded to header_size."""
    text = f"ERR {code}"
    if len(text) > header_size:
        raise OverflowError(f"error code too long for {header_size}-byte frame")
    return text.ljust(header_size).encode("utf-8")


# Keys allowed in envelope metadata, and which are mandatory per kind.
_ALL_KEYS = {"type", "name", "timestamp", "fs", "channels", "nframes", "seq", "msg"}
_REQUIRED = {
    MessageKind.DATA: {"type", "name", "timestamp", "fs", "channels", "nframes", "seq"},
    MessageKind.REGISTER: {"type", "name", "timestamp"},
    MessageKind.CONTROL: {"type", "name", "timestamp", "msg"},
}


def _check_text(value: Any, what: str) -> str:
    if not isinstance(value, str):
        raise InvalidEnvelope(f"{what} must be text")
    try:
        value.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise InvalidEnvelope(f"{what} is not UTF-8 encodable") from exc
    return value


def _validate_for_encode(env: Envelope) -> dict[str, Any]:
    if env.kind not in (MessageKind.DATA, MessageKind.REGISTER, MessageKind.CONTROL):
        raise InvalidEnvelope(f"unknown kind {env.kind!r}")
    if env.client_type not in (CLIENT_RECORDER, CLIENT_PROCESSOR):
        raise InvalidEnvelope(f"unknown client type {env.client_type!r}")
    _check_text(env.name, "name")
    if not isinstance(env.timestamp, (int, float)) or isinstance(env.timestamp, bool):
        raise InvalidEnvelope("timestamp must be a real number")
    if not math.isfinite(env.timestamp):
        raise InvalidEnvelope("timestamp must be finite")

    meta: dict[str, Any] = {
        "type": env.client_type,
        "name": env.name,
        "timestamp": float(env.timestamp),
    }

    if env.kind is MessageKind.DATA:
        if env.audio is None:
            raise InvalidEnvelope("DATA envelope requires an audio chunk")
        if not isinstance(env.fs, int) or isinstance(env.fs, bool) or env.fs < 1:
            raise InvalidEnvelope("DATA envelope requires fs >= 1")
        if (
            not isinstance(env.channels, int)
            or isinstance(env.channels, bool)
            or env.channels < 1
        ):
            raise InvalidEnvelope("DATA envelope requires channels >= 1")
        if not isinstance(env.seq, int) or isinstance(env.seq, bool) or env.seq < 0:
            raise InvalidEnvelope("DATA envelope requires seq >= 0")
        if env.msg is not None:
            raise InvalidEnvelope("DATA envelope must not carry msg")
        n = len(env.audio)
        if n % env.channels:
            raise InvalidEnvelope("sample count not divisible by channels")
        if env.audio.nframes * env.channels != n:
            raise InvalidEnvelope("nframes inconsistent with sample count")
        meta.update(
            fs=env.fs, channels=env.channels, nframes=env.audio.nframes, seq=env.seq
        )
    elif env.kind is MessageKind.REGISTER:
        if env.client_type != CLIENT_PROCESSOR:
            raise InvalidEnvelope("REGISTER envelope must come from a processor")
        if not env.name:
            raise InvalidEnvelope("REGISTER envelope requires a non-empty name")
        if env.audio is not None or env.msg is not None:
            raise InvalidEnvelope("REGISTER envelope carries no audio or msg")
        if any(v is not None for v in (env.fs, env.channels, env.seq)):
            raise InvalidEnvelope("REGISTER envelope carries no stream fields")
    else:  # CONTROL
        if env.msg is None:
            raise InvalidEnvelope("CONTROL envelope requires msg")
        _check_text(env.msg, "msg")
        if env.audio is not None:
            raise InvalidEnvelope("CONTROL envelope carries no audio")
        if any(v is not None for v in (env.fs, env.channels, env.seq)):
            raise InvalidEnvelope("CONTROL envelope carries no stream fields")
        meta["msg"] = env.msg

    return meta


def encode_envelope(env: Envelope) -> bytes:
    """Serialize an envelope. Deterministic: sorted keys, compact JSON."""
    meta = _validate_for_encode(env)
    meta_bytes = json.dumps(
        meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")
    prefix = (
        MAGIC
        + bytes([VERSION, int(env.kind)])
        + len(meta_bytes).to_bytes(4, "big")
    )
    audio_bytes = b""
    if env.kind is MessageKind.DATA and env.audio is not None:
        audio_bytes = env.audio.samples.tobytes()
    return prefix + meta_bytes + audio_bytes


def _meta_int(meta: dict, key: str) -> int:
    v = meta[key]
    if not isinstance(v, int) or isinstance(v, bool):
        raise MetadataError(f"{key} must be an integer")
    return v


def decode_envelope(buf: bytes) -> Envelope:
    """Parse envelope bytes. Exact inverse of encode_envelope.

    ``type`` is required to be a non-empty string but its value is not
    restricted here: the broker classifies clients by it and must be able
    to reject unknown types explicitly rather than choke on the decode.
    """
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic("missing ASKT magic")
    if len(buf) < _PREFIX_LEN:
        raise MetadataError("envelope truncated before metadata length")
    if buf[4] != VERSION:
        raise UnsupportedVersion(f"version {buf[4]} not supported")
    try:
        kind = MessageKind(buf[5])
    except ValueError as exc:
        raise MetadataError(f"unknown message kind {buf[5]}") from exc
    meta_len = int.from_bytes(buf[6:10], "big")
    if _PREFIX_LEN + meta_len > len(buf):
        raise MetadataError("declared metadata length exceeds buffer")
    try:
        meta = json.loads(buf[_PREFIX_LEN : _PREFIX_LEN + meta_len].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MetadataError(f"metadata is not valid JSON: {exc}") from exc
    if not isinstance(meta, dict):
        raise MetadataError("metadata must be a JSON object")

    keys = set(meta)
    if not keys <= _ALL_KEYS:
        raise MetadataError(f"unknown metadata keys {sorted(keys - _ALL_KEYS)}")
    missing = _REQUIRED[kind] - keys
    if missing:
        raise MetadataError(f"missing metadata keys {sorted(missing)}")

    client_type = meta["type"]
    if not isinstance(client_type, str) or not client_type:
        raise MetadataError("type must be a non-empty string")
    name = meta["name"]
    if not isinstance(name, str):
        raise MetadataError("name must be a string")
    timestamp = meta["timestamp"]
    if not isinstance(timestamp, (int, float)) or isinstance(timestamp, bool):
        raise MetadataError("timestamp must be a number")

    audio_bytes = buf[_PREFIX_LEN + meta_len :]

    if kind is MessageKind.DATA:
        fs = _meta_int(meta, "fs")
        channels = _meta_int(meta, "channels")
        nframes = _meta_int(meta, "nframes")
        seq = _meta_int(meta, "seq")
        if fs < 1 or channels < 1 or nframes < 0 or seq < 0:
            raise MetadataError("fs/channels/nframes/seq out of range")
        if "msg" in meta:
            raise MetadataError("DATA envelope must not carry msg")
        expected = 4 * nframes * channels
        if len(audio_bytes) != expected:
            raise LengthMismatch(
                f"audio is {len(audio_bytes)} bytes, expected {expected}"
            )
        samples = np.frombuffer(audio_bytes, dtype="<f4").copy()
        return Envelope(
            kind,
            client_type,
            name,
            float(timestamp),
            fs=fs,
            channels=channels,
            seq=seq,
            audio=AudioChunk(samples, nframes),
        )

    if audio_bytes:
        raise LengthMismatch(f"{kind.name} envelope carries {len(audio_bytes)} stray bytes")

    if kind is MessageKind.REGISTER:
        # Empty names decode fine; the broker rejects them with BAD_NAME so
        # the client learns why instead of seeing a generic decode failure.
        extra = keys - _REQUIRED[kind]
        if extra:
            raise MetadataError(f"REGISTER does not allow keys {sorted(extra)}")
        return Envelope(kind, client_type, name, float(timestamp))

    # CONTROL
    msg = meta["msg"]
    if not isinstance(msg, str):
        raise MetadataError("msg must be a string")
    extra = keys - _REQUIRED[kind]
    if extra:
        raise MetadataError(f"CONTROL does not allow keys {sorted(extra)}")
    return Envelope(kind, client_type, name, float(timestamp), msg=msg)
