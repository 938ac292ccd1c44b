"""Standalone codec for the audiosockets wire format.

Implemented directly from docs/protocol.md in the main repository, on the
standard library alone, as proof the protocol is language- and
library-neutral. For equal field values the bytes produced here are
bit-identical to any conforming implementation: metadata is JSON with
sorted keys and no insignificant whitespace, samples are float32
little-endian.
"""

from __future__ import annotations

import json
import struct

MAGIC = b"ASKT"
VERSION = 1

KIND_DATA = 1
KIND_REGISTER = 2
KIND_CONTROL = 3

_PREFIX = struct.Struct(">4sBBI")  # magic, version, kind, meta_len


class WireError(Exception):
    pass


class MalformedHeader(WireError):
    pass


class BadMagic(WireError):
    pass


class UnsupportedVersion(WireError):
    pass


class MetadataError(WireError):
    pass


class LengthMismatch(WireError):
    pass


def encode_header(payload_len: int, header_size: int = 64) -> bytes:
    text = str(payload_len)
    if payload_len < 0 or len(text) > header_size:
        raise OverflowError(f"{payload_len} does not fit a {header_size}-byte header")
    return text.ljust(header_size).encode("utf-8")


def decode_header(block: bytes) -> int:
    text = block.strip(b" ")
    if not text.isdigit():
        raise MalformedHeader(f"not a length header: {block[:12]!r}")
    return int(text)


def ack_frame(header_size: int = 64) -> bytes:
    return b"ACK".ljust(header_size)


def error_frame(code: str, header_size: int = 64) -> bytes:
    text = f"ERR {code}"
    if len(text) > header_size:
        raise OverflowError("error code too long")
    return text.ljust(header_size).encode("utf-8")


def _assemble(kind: int, meta: dict, audio: bytes = b"") -> bytes:
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    meta_bytes = blob.encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, kind, len(meta_bytes)) + meta_bytes + audio


def encode_data(
    name: str,
    timestamp: float,
    fs: int,
    channels: int,
    seq: int,
    samples,
    client_type: str = "recorder",
) -> bytes:
    samples = list(samples)
    if channels < 1 or len(samples) % channels:
        raise ValueError("sample count must divide by channels")
    meta = {
        "channels": channels,
        "fs": fs,
        "name": name,
        "nframes": len(samples) // channels,
        "seq": seq,
        "timestamp": float(timestamp),
        "type": client_type,
    }
    return _assemble(KIND_DATA, meta, struct.pack(f"<{len(samples)}f", *samples))


def encode_register(name: str, timestamp: float) -> bytes:
    if not name:
        raise ValueError("name must be non-empty")
    meta = {"name": name, "timestamp": float(timestamp), "type": "processor"}
    return _assemble(KIND_REGISTER, meta)


def encode_control(client_type: str, name: str, msg: str, timestamp: float) -> bytes:
    meta = {
        "msg": msg,
        "name": name,
        "timestamp": float(timestamp),
        "type": client_type,
    }
    return _assemble(KIND_CONTROL, meta)


def decode(buf: bytes) -> dict:
    """Parse envelope bytes into a flat dict.

    Keys always present: kind, type, name, timestamp. DATA adds fs,
    channels, nframes, seq, and samples (a list of floats); CONTROL adds
    msg.
    """
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic("missing ASKT magic")
    if len(buf) < _PREFIX.size:
        raise MetadataError("truncated before metadata length")
    _, version, kind, meta_len = _PREFIX.unpack_from(buf)
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    if kind not in (KIND_DATA, KIND_REGISTER, KIND_CONTROL):
        raise MetadataError(f"unknown kind {kind}")
    if _PREFIX.size + meta_len > len(buf):
        raise MetadataError("metadata length exceeds buffer")
    try:
        meta = json.loads(buf[_PREFIX.size : _PREFIX.size + meta_len].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MetadataError(f"bad metadata JSON: {exc}") from exc
    if not isinstance(meta, dict):
        raise MetadataError("metadata must be an object")
    for key in ("type", "name", "timestamp"):
        if key not in meta:
            raise MetadataError(f"missing {key}")

    out = {
        "kind": kind,
        "type": meta["type"],
        "name": meta["name"],
        "timestamp": meta["timestamp"],
    }
    audio = buf[_PREFIX.size + meta_len :]

    if kind == KIND_DATA:
        try:
            fs, channels = meta["fs"], meta["channels"]
            nframes, seq = meta["nframes"], meta["seq"]
        except KeyError as exc:
            raise MetadataError(f"missing {exc}") from exc
        expected = 4 * nframes * channels
        if len(audio) != expected:
            raise LengthMismatch(f"{len(audio)} audio bytes, expected {expected}")
        out.update(
            fs=fs,
            channels=channels,
            nframes=nframes,
            seq=seq,
            samples=list(struct.unpack(f"<{nframes * channels}f", audio)),
        )
        return out

    if audio:
        raise LengthMismatch("non-DATA envelope carries audio bytes")
    if kind == KIND_CONTROL:
        if "msg" not in meta:
            raise MetadataError("missing msg")
        out["msg"] = meta["msg"]
    return out
