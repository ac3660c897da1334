"""STFT analysis/synthesis and the amplitude-compression transform pair."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._validation import check_waveform
from .errors import DimensionError, NormalizationError


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 512
    hop: int = 128

    def __post_init__(self):
        if self.n_fft < 2 or self.n_fft % 2:
            raise ValueError(f"n_fft must be even and >= 2, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft:
            raise ValueError(f"hop must lie in (0, n_fft], got {self.hop}")
        if not cola_holds(self.window(), self.hop):
            raise ValueError(f"periodic Hann window of length {self.n_fft} is not COLA at hop {self.hop}")

    @property
    def n_freq(self) -> int:
        return self.n_fft // 2 + 1

    def window(self) -> np.ndarray:
        n = np.arange(self.n_fft)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.n_fft)

    def n_frames(self, length: int) -> int:
        return length // self.hop + 1


@dataclass(frozen=True)
class TransformConfig:
    alpha: float = 0.5
    beta: float = 3.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")


def cola_holds(window, hop, rtol=1e-10) -> bool:
    """True when shifted copies of ``window`` sum to a constant."""
    n = len(window)
    acc = np.zeros(hop)
    for start in range(0, n, hop):
        seg = window[start:start + hop]
        acc[: len(seg)] += seg
    return bool(np.ptp(acc) <= rtol * np.max(np.abs(acc)))


def stft(x, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """One-sided STFT of shape ``(n_fft // 2 + 1, len(x) // hop + 1)``.

    Frames are centered: the signal is reflection-padded by ``n_fft // 2``
    on both sides.
    """
    x = check_waveform(x)
    half = cfg.n_fft // 2
    if x.size <= half:
        raise ValueError(f"signal of length {x.size} too short for reflection padding by {half}")
    padded = np.pad(x, half, mode="reflect")
    frames = sliding_window_view(padded, cfg.n_fft)[:: cfg.hop][: cfg.n_frames(x.size)]
    return np.fft.rfft(frames * cfg.window(), axis=-1).T


def istft(spec, length: int, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Inverse of :func:`stft` by windowed overlap-add, trimmed to ``length``."""
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[0] != cfg.n_freq:
        raise DimensionError(
            f"spectrogram shape {spec.shape} does not match n_fft={cfg.n_fft} "
            f"(expected {cfg.n_freq} frequency bins)"
        )
    n_frames = spec.shape[1]
    win = cfg.window()
    frames = np.fft.irfft(spec.T, n=cfg.n_fft, axis=-1) * win
    total = (n_frames - 1) * cfg.hop + cfg.n_fft
    out = np.zeros(total)
    norm = np.zeros(total)
    win_sq = win**2
    for k in range(n_frames):
        start = k * cfg.hop
        out[start:start + cfg.n_fft] += frames[k]
        norm[start:start + cfg.n_fft] += win_sq
    nonzero = norm > 1e-11
    out[nonzero] /= norm[nonzero]
    out[~nonzero] = 0.0
    half = cfg.n_fft // 2
    out = out[half:half + length]
    if out.size < length:
        out = np.pad(out, (0, length - out.size))
    return out


def amp_transform(spec, cfg: TransformConfig = TransformConfig()) -> np.ndarray:
    """Compress magnitudes, ``|c|**alpha / beta``, keeping the phase."""
    spec = np.asarray(spec, dtype=np.complex128)
    mag = np.abs(spec)
    scale = np.zeros_like(mag)
    nz = mag > 0
    scale[nz] = mag[nz] ** (cfg.alpha - 1.0) / cfg.beta
    return spec * scale


def amp_inverse(spec, cfg: TransformConfig = TransformConfig()) -> np.ndarray:
    """Undo :func:`amp_transform`: ``beta * |c|**(1/alpha)`` with the same phase."""
    spec = np.asarray(spec, dtype=np.complex128)
    mag = np.abs(spec)
    scale = np.zeros_like(mag)
    nz = mag > 0
    scale[nz] = cfg.beta ** (1.0 / cfg.alpha) * mag[nz] ** (1.0 / cfg.alpha - 1.0)
    return spec * scale


def normalize_pair(x0, y):
    """Scale a pair by the clean peak, or ``y`` alone by its own peak.

    Returns ``(x0', y', factor)``; ``x0'`` is ``None`` when ``x0`` is.
    Multiply by ``factor`` to undo.
    """
    y = check_waveform(y, "y")
    if x0 is None:
        factor = float(np.max(np.abs(y)))
        if factor == 0.0:
            raise NormalizationError("noisy signal is identically zero")
        return None, y / factor, factor
    x0 = check_waveform(x0, "x0")
    factor = float(np.max(np.abs(x0)))
    if factor == 0.0:
        raise NormalizationError("clean reference is identically zero")
    return x0 / factor, y / factor, factor


def denormalize(x, factor: float) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) * factor


def to_model_domain(y, stft_cfg=StftConfig(), transform_cfg=TransformConfig()):
    """Waveform -> transformed complex spectrogram."""
    return amp_transform(stft(y, stft_cfg), transform_cfg)


def from_model_domain(spec, length, stft_cfg=StftConfig(), transform_cfg=TransformConfig()):
    """Transformed complex spectrogram -> waveform of ``length`` samples."""
    return istft(amp_inverse(spec, transform_cfg), length, stft_cfg)
