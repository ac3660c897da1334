"""Glue between waveforms, the transformed spectrogram domain, training and sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import crop_pair
from .dsp import (
    StftConfig,
    TransformConfig,
    denormalize,
    from_model_domain,
    normalize_pair,
    to_model_domain,
)
from .sampler import SamplerConfig, blend_output, pc_sample
from .sde import SdeParams, kernel_mean

CALIBRATION_THRESHOLD = 1e-3


def utterance_rng(seed, index) -> np.random.Generator:
    """Per-utterance generator derived from a master seed."""
    return np.random.default_rng([int(seed), int(index)])


class SpectrogramPairDataset:
    """Normalized, transformed clean/noisy spectrograms with per-epoch random crops."""

    def __init__(self, pairs, stft_cfg=StftConfig(), transform_cfg=TransformConfig(), frames=256):
        self.frames = frames
        self.ids = []
        self.clean = []
        self.noisy = []
        for pair in pairs:
            x0, y, _ = normalize_pair(pair.clean, pair.noisy)
            self.ids.append(pair.id)
            self.clean.append(to_model_domain(x0, stft_cfg, transform_cfg))
            self.noisy.append(to_model_domain(y, stft_cfg, transform_cfg))

    def __len__(self):
        return len(self.clean)

    def epoch(self, epoch, seed):
        x0s, ys = [], []
        for i, (c, n) in enumerate(zip(self.clean, self.noisy)):
            rng = np.random.default_rng([int(seed), int(epoch), i, 1])
            c_crop, n_crop, _ = crop_pair(c, n, self.frames, rng)
            x0s.append(c_crop)
            ys.append(n_crop)
        return np.stack(x0s), np.stack(ys)


def enhance_waveform(
    y,
    score_model,
    sde: SdeParams = SdeParams(),
    sampler_cfg: SamplerConfig = SamplerConfig(),
    stft_cfg: StftConfig = StftConfig(),
    transform_cfg: TransformConfig = TransformConfig(),
    rng=None,
    blend: float = 1.0,
    stats=None,
):
    """Enhance one noisy waveform; the output has the input's length.

    ``blend`` mixes the result with the input, ``blend * x_hat + (1 - blend) * y``.
    """
    _, y_norm, factor = normalize_pair(None, y)
    spec = to_model_domain(y_norm, stft_cfg, transform_cfg)
    x = pc_sample(spec, score_model, sde, sampler_cfg, rng, stats=stats)
    x_hat = denormalize(from_model_domain(x, len(y_norm), stft_cfg, transform_cfg), factor)
    if blend == 1.0:
        return x_hat
    return blend_output(x_hat, np.asarray(y, dtype=np.float64), blend)


@dataclass
class CalibrationReport:
    gamma: float
    n_pairs: int
    n_bins: int
    mean_sq_gap: float
    mean_sq_residual: float
    predicted_residual: float
    threshold: float = CALIBRATION_THRESHOLD

    @property
    def passed(self) -> bool:
        return self.mean_sq_residual < self.threshold

    @property
    def identity_rel_error(self) -> float:
        if self.predicted_residual == 0.0:
            return abs(self.mean_sq_residual)
        return abs(self.mean_sq_residual - self.predicted_residual) / abs(self.predicted_residual)

    @property
    def minimal_gamma(self) -> float:
        """Smallest stiffness meeting the threshold on this data."""
        if self.mean_sq_gap <= self.threshold:
            return 0.0
        return 0.5 * math.log(self.mean_sq_gap / self.threshold)


def calibrate_gamma(clean_specs, noisy_specs, sde: SdeParams) -> CalibrationReport:
    """Mean squared distance between the t=1 kernel mean and y over all complex bins."""
    gap_sum = resid_sum = 0.0
    n_bins = 0
    for x0, y in zip(clean_specs, noisy_specs):
        x0 = np.asarray(x0, dtype=np.complex128)
        y = np.asarray(y, dtype=np.complex128)
        mu1 = kernel_mean(x0, y, 1.0, sde)
        gap_sum += float(np.sum(np.abs(x0 - y) ** 2))
        resid_sum += float(np.sum(np.abs(mu1 - y) ** 2))
        n_bins += x0.size
    if n_bins == 0:
        raise ValueError("no spectrogram bins to calibrate on")
    gap = gap_sum / n_bins
    return CalibrationReport(
        gamma=sde.gamma,
        n_pairs=len(clean_specs),
        n_bins=n_bins,
        mean_sq_gap=gap,
        mean_sq_residual=resid_sum / n_bins,
        predicted_residual=math.exp(-2.0 * sde.gamma) * gap,
    )


def synthetic_calibration_pairs(n_pairs, shape, mean_sq_gap, rng):
    """Random pairs whose empirical mean |x0 - y|**2 equals ``mean_sq_gap`` exactly."""
    full = (n_pairs,) + tuple(shape)
    x0 = rng.standard_normal(full) + 1j * rng.standard_normal(full)
    d = rng.standard_normal(full) + 1j * rng.standard_normal(full)
    d *= math.sqrt(mean_sq_gap / np.mean(np.abs(d) ** 2))
    return list(x0), list(x0 + d)
