"""WAV reading and incremental float32 writing.

Reading goes through scipy and accepts 16-bit PCM (converted to floats in
[-1, 1] by dividing by 32768) and 32-bit float files. Writing is a small
incremental RIFF writer so the dump hook can append one chunk at a time to
a single file without rewriting it.
"""

from __future__ import annotations

import struct

import numpy as np
from scipy.io import wavfile


def read_wav(path: str) -> tuple[int, int, np.ndarray]:
    """Returns (fs, channels, interleaved float32 samples)."""
    fs, data = wavfile.read(path)
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype}")
    channels = 1 if data.ndim == 1 else data.shape[1]
    return fs, channels, np.ascontiguousarray(samples, dtype="<f4").reshape(-1)


class FloatWavWriter:
    """Append-friendly writer for 32-bit float WAV files.

    Size fields in the RIFF header are patched on every flush, so the file
    on disk is valid after each append.
    """

    def __init__(self, path: str, fs: int, channels: int = 1):
        self.path = path
        self.fs = fs
        self.channels = channels
        self._frames_written = 0
        self._fh = open(path, "wb")
        self._write_header(0)

    def _write_header(self, data_bytes: int) -> None:
        block_align = 4 * self.channels
        self._fh.seek(0)
        self._fh.write(b"RIFF")
        self._fh.write(struct.pack("<I", 36 + data_bytes))
        self._fh.write(b"WAVE")
        self._fh.write(b"fmt ")
        # format 3 = IEEE float
        self._fh.write(
            struct.pack(
                "<IHHIIHH",
                16,
                3,
                self.channels,
                self.fs,
                self.fs * block_align,
                block_align,
                32,
            )
        )
        self._fh.write(b"data")
        self._fh.write(struct.pack("<I", data_bytes))

    def append(self, samples: np.ndarray) -> None:
        data = np.asarray(samples, dtype="<f4").reshape(-1)
        if data.size % self.channels:
            raise ValueError("sample count not divisible by channels")
        self._fh.seek(0, 2)
        self._fh.write(data.tobytes())
        self._frames_written += data.size // self.channels
        self._write_header(self._frames_written * 4 * self.channels)
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
