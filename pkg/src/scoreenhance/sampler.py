"""Reverse-process inference with a predictor-corrector loop.

A score model is any callable ``score(x, t, y) -> ndarray`` with the shape of
``x``. Grids may carry leading batch axes; corrector norms are taken per item
over the trailing ``(n_freq, n_frames)`` axes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_same_shape
from .errors import DimensionError, DivergenceError
from .sde import SdeParams, complex_normal, diffusion, drift, kernel_std

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 50
    t_eps: float = 0.03
    snr_r: float = 0.33
    corrector_steps_per_iter: int = 1

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not 0 < self.t_eps < 1:
            raise ValueError(f"t_eps must lie in (0, 1), got {self.t_eps}")
        if not self.snr_r > 0:
            raise ValueError(f"snr_r must be positive, got {self.snr_r}")
        if self.corrector_steps_per_iter < 0:
            raise ValueError("corrector_steps_per_iter must be >= 0")

    def time_grid(self) -> np.ndarray:
        k = np.arange(self.n_steps + 1)
        grid = 1.0 - k * (1.0 - self.t_eps) / self.n_steps
        grid[-1] = self.t_eps
        return grid


@dataclass
class SamplerStats:
    corrector_skips: int = 0
    score_evals: int = 0


def _item_norm(a):
    # 2-norm over all real coordinates of each grid, keeping dims for broadcast
    return np.sqrt(np.sum(a.real**2 + a.imag**2, axis=(-2, -1), keepdims=True))


def sample_prior(y, params: SdeParams, rng: np.random.Generator) -> np.ndarray:
    """Draw x_1 ~ N(y, sigma(1)**2) per real coordinate."""
    y = np.asarray(y, dtype=np.complex128)
    std = kernel_std(1.0, params)
    if std == 0.0:
        return y.copy()
    return y + std * complex_normal(rng, y.shape)


def predictor_step(x, t, dt, y, score_model, params: SdeParams, rng=None, *, z=None):
    """One reverse-diffusion step from ``t`` to ``t - dt``.

    ``z`` overrides the noise draw (pass zeros for a deterministic step).
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=np.complex128)
    score = np.asarray(score_model(x, t, y), dtype=np.complex128)
    if score.shape != x.shape:
        raise DimensionError(f"score shape {score.shape} != state shape {x.shape}")
    g = diffusion(t, params)
    x_mean = x - (drift(x, y, params) - g**2 * score) * dt
    if z is None:
        z = complex_normal(rng, x.shape) if g else 0.0
    return x_mean + g * math.sqrt(dt) * z


def corrector_step(x, t, y, score_model, snr_r, rng=None, *, z=None, stats=None):
    """One annealed Langevin step with step size set by the target SNR.

    Items whose score has zero norm are returned unchanged and counted in
    ``stats.corrector_skips``.
    """
    x = np.asarray(x, dtype=np.complex128)
    score = np.asarray(score_model(x, t, y), dtype=np.complex128)
    if score.shape != x.shape:
        raise DimensionError(f"score shape {score.shape} != state shape {x.shape}")
    if z is None:
        z = complex_normal(rng, x.shape)
    z = np.broadcast_to(np.asarray(z, dtype=np.complex128), x.shape)
    s_norm = _item_norm(score)
    z_norm = _item_norm(z)
    degenerate = s_norm == 0.0
    if np.any(degenerate):
        n_skip = int(np.count_nonzero(degenerate))
        if stats is not None:
            stats.corrector_skips += n_skip
        logger.debug("corrector skipped %d item(s) with zero score at t=%g", n_skip, t)
    safe_norm = np.where(degenerate, 1.0, s_norm)
    eps = np.where(degenerate, 0.0, 2.0 * (snr_r * z_norm / safe_norm) ** 2)
    return x + eps * score + np.sqrt(2.0 * eps) * z


def _check_finite(x, step, t):
    if not np.all(np.isfinite(x)):
        finite = x[np.isfinite(x)]
        max_abs = float(np.max(np.abs(finite))) if finite.size else float("nan")
        raise DivergenceError(
            f"sampler state became non-finite at step {step} (t={t:.6g})",
            step=step,
            t=float(t),
            max_abs=max_abs,
        )


def pc_sample(
    y, score_model, params: SdeParams, config: SamplerConfig, rng, stats=None, x_init=None
):
    """Run the predictor-corrector sampler from t=1 down to ``config.t_eps``.

    Each of the ``n_steps`` iterations applies the corrector step(s) at the
    current time, then one predictor step to the next grid point. The prior
    draw is not counted as an iteration. ``x_init`` replaces the prior draw
    (diagnostics only).
    """
    y = np.asarray(y, dtype=np.complex128)
    grid = config.time_grid()
    if x_init is None:
        x = sample_prior(y, params, rng)
    else:
        x = np.array(x_init, dtype=np.complex128)
        check_same_shape(x, y, ("x_init", "y"))
    _check_finite(x, 0, grid[0])
    for k in range(config.n_steps):
        t, t_next = grid[k], grid[k + 1]
        # non-finite states are reported by _check_finite, not as float warnings
        with np.errstate(invalid="ignore", over="ignore"):
            for _ in range(config.corrector_steps_per_iter):
                x = corrector_step(x, t, y, score_model, config.snr_r, rng, stats=stats)
            x = predictor_step(x, t, t - t_next, y, score_model, params, rng)
        _check_finite(x, k + 1, t_next)
    if stats is not None:
        stats.score_evals += config.n_steps * (config.corrector_steps_per_iter + 1)
    return x


def blend_output(x_hat, y, w: float = 0.8) -> np.ndarray:
    """Convex mix ``w * x_hat + (1 - w) * y`` of enhanced and noisy waveforms."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    check_same_shape(x_hat, y, ("x_hat", "y"))
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"blend weight must lie in [0, 1], got {w}")
    return w * x_hat + (1.0 - w) * y
