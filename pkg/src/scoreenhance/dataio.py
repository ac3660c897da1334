"""Audio I/O, paired datasets, spectrogram cropping and synthetic toy data."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.io import wavfile

from .errors import DatasetError, FormatError

logger = logging.getLogger(__name__)

PCM16_SCALE = 32768.0


@dataclass
class UtterancePair:
    id: str
    noisy: np.ndarray
    sample_rate: int
    clean: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.clean is not None and len(self.clean) != len(self.noisy):
            raise DatasetError(
                f"{self.id}: clean has {len(self.clean)} samples, noisy has {len(self.noisy)}"
            )


def read_wav(path, *, return_rate=False):
    """Read a mono PCM-16 or float-32 WAV file as float64 samples.

    PCM-16 is scaled by 1/32768, so full-scale positive is 32767/32768.
    """
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise FormatError(f"{path}: channels={data.shape[1]}, only mono is supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: sample format {data.dtype} unsupported (need int16 or float32)")
    return (samples, int(rate)) if return_rate else samples


def write_wav(path, samples, rate: int, *, pcm16=False):
    """Write mono float-32 (default) or PCM-16 WAV.

    Float-32 output is bit-exact for inputs representable in float32.
    """
    samples = np.asarray(samples)
    if samples.ndim != 1:
        raise FormatError(f"expected mono samples, got shape {samples.shape}")
    if pcm16:
        ints = np.clip(np.round(samples * PCM16_SCALE), -32768, 32767).astype(np.int16)
        wavfile.write(path, int(rate), ints)
    else:
        wavfile.write(path, int(rate), samples.astype(np.float32))


def load_pairs(clean_dir, noisy_dir) -> list:
    """Pair ``*.wav`` files present under both directories by filename.

    Orphans and length/rate mismatches are logged and skipped.
    """
    clean_dir, noisy_dir = Path(clean_dir), Path(noisy_dir)
    for d in (clean_dir, noisy_dir):
        if not d.is_dir():
            raise DatasetError(f"not a directory: {d}")
    clean_names = {p.name for p in clean_dir.glob("*.wav")}
    noisy_names = {p.name for p in noisy_dir.glob("*.wav")}
    for name in sorted(clean_names ^ noisy_names):
        side = "clean" if name in clean_names else "noisy"
        logger.warning("unmatched file %s (only in %s dir); skipping", name, side)
    common = sorted(clean_names & noisy_names)
    if not common:
        raise DatasetError(f"no matching filenames between {clean_dir} and {noisy_dir}")
    pairs = []
    for name in common:
        clean, rate_c = read_wav(clean_dir / name, return_rate=True)
        noisy, rate_n = read_wav(noisy_dir / name, return_rate=True)
        if rate_c != rate_n:
            logger.warning("%s: sample rates differ (%d vs %d); skipping", name, rate_c, rate_n)
            continue
        if clean.size != noisy.size:
            logger.warning("%s: lengths differ (%d vs %d); skipping", name, clean.size, noisy.size)
            continue
        pairs.append(UtterancePair(Path(name).stem, noisy, rate_c, clean))
    if not pairs:
        raise DatasetError("every candidate pair was rejected")
    return pairs


def load_dataset(root) -> list:
    """Load ``<root>/clean/*.wav`` and ``<root>/noisy/*.wav``."""
    root = Path(root)
    return load_pairs(root / "clean", root / "noisy")


def crop_start(n_frames: int, frames: int, rng: np.random.Generator) -> int:
    if n_frames <= frames:
        return 0
    return int(rng.integers(0, n_frames - frames + 1))


def crop_or_pad(spec, frames: int = 256, rng=None, *, start=None):
    """Cut a random ``frames``-long window along the last axis, or zero-pad on the right.

    Pass the same ``start`` (see :func:`crop_start`) to crop a clean/noisy
    pair identically.
    """
    if frames < 1:
        raise ValueError(f"frames must be >= 1, got {frames}")
    spec = np.asarray(spec)
    n = spec.shape[-1]
    if n == frames:
        return spec
    if n < frames:
        pad = [(0, 0)] * (spec.ndim - 1) + [(0, frames - n)]
        return np.pad(spec, pad)
    if start is None:
        start = crop_start(n, frames, rng)
    return spec[..., start:start + frames]


def crop_pair(clean_spec, noisy_spec, frames, rng):
    """Crop both spectrograms with one shared start; returns ``(clean, noisy, start)``."""
    start = crop_start(noisy_spec.shape[-1], frames, rng)
    return (
        crop_or_pad(clean_spec, frames, start=start),
        crop_or_pad(noisy_spec, frames, start=start),
        start,
    )


def toy_gaussian_pairs(
    n, shape, rng, prior_mean=0.0, prior_var=1.0, noise="offset", noise_level=0.5
):
    """Draw ``n`` pairs with x0 ~ N(prior_mean, prior_var) per real coordinate.

    ``noise`` selects how y is derived from x0: ``"offset"`` adds the
    constant ``noise_level`` (so y is fixed when prior_var is 0),
    ``"gaussian"`` adds independent N(0, noise_level**2) per coordinate,
    and ``"fixed"`` ignores x0 and sets y = noise_level everywhere.
    Returns complex arrays ``(x0, y)`` of shape ``(n, *shape)``.
    """
    if prior_var < 0:
        raise ValueError("prior_var must be nonnegative")
    full = (n,) + tuple(shape)
    std = np.sqrt(prior_var)
    x0 = prior_mean + std * (rng.standard_normal(full) + 1j * rng.standard_normal(full))
    if noise == "offset":
        y = x0 + noise_level
    elif noise == "gaussian":
        y = x0 + noise_level * (rng.standard_normal(full) + 1j * rng.standard_normal(full))
    elif noise == "fixed":
        y = np.full(full, noise_level, dtype=np.complex128)
    else:
        raise ValueError(f"unknown noise law {noise!r}")
    return x0.astype(np.complex128), y.astype(np.complex128)


class ToyGaussianDataset:
    """Fresh per-epoch draws from :func:`toy_gaussian_pairs`.

    Implements the ``len()`` / ``epoch(epoch, seed)`` protocol used by the
    trainer; the same ``(seed, epoch)`` always yields the same arrays.
    """

    def __init__(self, n, shape, prior_mean=0.0, prior_var=1.0, noise="fixed", noise_level=0.5):
        self.n = n
        self.shape = tuple(shape)
        self.prior_mean = prior_mean
        self.prior_var = prior_var
        self.noise = noise
        self.noise_level = noise_level

    def __len__(self):
        return self.n

    def epoch(self, epoch, seed):
        rng = np.random.default_rng([int(seed), int(epoch), 0x7059])
        return toy_gaussian_pairs(
            self.n, self.shape, rng, self.prior_mean, self.prior_var, self.noise, self.noise_level
        )
