import json
import pathlib
import socket
import struct
import subprocess
import sys
import wave

REPO_ROOT = pathlib.Path(__file__).resolve().parent.parent.parent
GOLDEN = REPO_ROOT / "golden" / "envelopes.jsonl"


def free_port() -> int:
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    return port


def write_network_config(path: pathlib.Path, port: int, send_period=0.05) -> str:
    doc = {
        "SERVER": "127.0.0.1",
        "PORT": port,
        "HEADER": 64,
        "FORMAT": "utf-8",
        "DISCONNECT_MSG": "DISCONNECT",
        "logging_format": "%(asctime)s %(levelname)s %(message)s",
        "logging_level": "info",
        "send_period": send_period,
    }
    path.write_text(json.dumps(doc))
    return str(path)


def write_pcm16_wav(path: pathlib.Path, fs: int, ints) -> str:
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(fs)
        fh.writeframes(struct.pack(f"<{len(ints)}h", *ints))
    return str(path)


def read_float32_wav(path: str) -> tuple[int, list[float]]:
    """Minimal RIFF parser for the broker's float32 dump files."""
    blob = pathlib.Path(path).read_bytes()
    assert blob[:4] == b"RIFF" and blob[8:12] == b"WAVE"
    fmt, fs = struct.unpack_from("<HxxI", blob, 20)
    assert fmt == 3, f"expected IEEE float wav, got format {fmt}"
    assert blob[36:40] == b"data"
    (data_len,) = struct.unpack_from("<I", blob, 40)
    samples = struct.unpack_from(f"<{data_len // 4}f", blob, 44)
    return fs, list(samples)


def spawn_primary(args, cwd) -> subprocess.Popen:
    """Launch one of the broker package's CLI roles as a subprocess."""
    return subprocess.Popen(
        [sys.executable, "-m", "audiosockets", *args],
        cwd=cwd,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
