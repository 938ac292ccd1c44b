"""Log-mel spectrogram, the bundled example transform for processor hooks.

Pipeline: frame the signal (no padding, frames start at sample 0), apply a
periodic Hann window, take the one-sided power spectrum, project through a
triangular mel filterbank, and log10-compress with a fixed floor.

Conventions, pinned so independent implementations can agree:
mel(f) = 2595 * log10(1 + f/700); triangle peaks are 1.0 at their center
bin; no pre-emphasis; eps floor 1e-10.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class DomainError(ValueError):
    """Input outside the function's domain (negative frequency, ...)."""


class TooShort(ValueError):
    """Signal shorter than one analysis frame."""


class SpectrogramConfigError(ValueError):
    """Frame/filterbank parameters inconsistent (collapsed mel bins, ...)."""


@dataclass(frozen=True)
class SpectrogramConfig:
    fs: int
    n_fft: int = 512
    hop: int = 256
    n_mels: int = 40
    f_min: float = 0.0
    f_max: Optional[float] = None
    eps: float = 1e-10

    def __post_init__(self):
        if self.n_fft < 2 or self.n_fft & (self.n_fft - 1):
            raise SpectrogramConfigError("n_fft must be a power of two")
        if not 0 < self.hop <= self.n_fft:
            raise SpectrogramConfigError("hop must be in 1..n_fft")
        if self.n_mels < 1:
            raise SpectrogramConfigError("n_mels must be positive")
        if self.eps <= 0:
            raise SpectrogramConfigError("eps must be positive")
        fmax = self.fs / 2 if self.f_max is None else self.f_max
        if not 0 <= self.f_min < fmax <= self.fs / 2:
            raise SpectrogramConfigError("need 0 <= f_min < f_max <= fs/2")

    @property
    def nyquist_cap(self) -> float:
        return self.fs / 2 if self.f_max is None else self.f_max


def hz_to_mel(f):
    """HTK-style mel scale: 2595 * log10(1 + f/700)."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise DomainError("frequency must be non-negative")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    """Exact inverse of hz_to_mel."""
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise DomainError("mel value must be non-negative")
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


def frame_count(n_samples: int, cfg: SpectrogramConfig) -> int:
    if n_samples < cfg.n_fft:
        raise TooShort(f"need at least {cfg.n_fft} samples, got {n_samples}")
    return 1 + (n_samples - cfg.n_fft) // cfg.hop


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def power_spectrogram(signal, cfg: SpectrogramConfig) -> np.ndarray:
    """Windowed one-sided power spectrum per frame.

    Returns shape (n_frames, n_fft//2 + 1) with
    n_frames = 1 + floor((N - n_fft) / hop).
    """
    signal = np.asarray(signal, dtype=np.float64).reshape(-1)
    n_frames = frame_count(signal.size, cfg)
    window = _hann_periodic(cfg.n_fft)
    frames = np.stack(
        [signal[t * cfg.hop : t * cfg.hop + cfg.n_fft] for t in range(n_frames)]
    )
    spectrum = np.fft.rfft(frames * window, axis=1)
    return np.abs(spectrum) ** 2


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # (n_mels, n_fft//2 + 1), rows are unit-peak triangles
    center_bins: np.ndarray  # integer peak bin per row
    center_hz: np.ndarray  # peak bin frequency per row


def mel_filterbank(cfg: SpectrogramConfig) -> MelFilterbank:
    """Triangular filters with centers equally spaced on the mel axis.

    n_mels + 2 mel points between f_min and f_max are rounded to FFT bins;
    row m rises over (bin[m], bin[m+1]) and falls over (bin[m+1], bin[m+2])
    with peak exactly 1.0. Rounding two adjacent points onto the same bin
    means the resolution cannot support the band count: SpectrogramConfigError.
    """
    n_bins = cfg.n_fft // 2 + 1
    mels = np.linspace(
        hz_to_mel(cfg.f_min), hz_to_mel(cfg.nyquist_cap), cfg.n_mels + 2
    )
    hz = mel_to_hz(mels)
    bins = np.rint(hz * cfg.n_fft / cfg.fs).astype(int)
    if np.any(np.diff(bins) < 1):
        raise SpectrogramConfigError(
            f"{cfg.n_mels} mel bands collapse at n_fft={cfg.n_fft}, fs={cfg.fs}"
        )
    weights = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        left, center, right = bins[m], bins[m + 1], bins[m + 2]
        k = np.arange(left, center + 1)
        weights[m, k] = (k - left) / (center - left)
        k = np.arange(center, min(right, n_bins - 1) + 1)
        weights[m, k] = (right - k) / (right - center)
        weights[m, center] = 1.0
    return MelFilterbank(
        weights=weights,
        center_bins=bins[1:-1].copy(),
        center_hz=bins[1:-1] * cfg.fs / cfg.n_fft,
    )


def log_mel(signal, cfg: SpectrogramConfig, bank: Optional[MelFilterbank] = None):
    """log10 of the mel-projected power spectrum, floored at cfg.eps.

    Output shape (n_frames, n_mels).
    """
    if bank is None:
        bank = mel_filterbank(cfg)
    power = power_spectrogram(signal, cfg)
    mel_power = power @ bank.weights.T
    return np.log10(np.maximum(mel_power, cfg.eps))


class LogMelSpectrogram:
    """Callable wrapper: ``LogMelSpectrogram(fs)(audio)`` returns the matrix."""

    def __init__(self, fs: int, **kwargs):
        self.cfg = SpectrogramConfig(fs=fs, **kwargs)
        self.bank = mel_filterbank(self.cfg)

    def __call__(self, audio) -> np.ndarray:
        return log_mel(audio, self.cfg, self.bank)
