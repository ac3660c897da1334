"""Mean-reverting diffusion on complex spectrograms.

The forward process pulls a clean spectrogram ``x0`` toward the noisy
observation ``y`` while injecting Gaussian noise of geometrically growing
scale::

    dx = gamma * (y - x) dt + g(t) dw
    g(t) = sigma_min * (sigma_max / sigma_min)**t * sqrt(2 log(sigma_max / sigma_min))

Complex grids are treated as pairs of real coordinates that evolve as
independent real SDEs, so ``kernel_variance`` is the variance of each real
coordinate and a complex standard normal draw has unit variance in both the
real and the imaginary part.

Grids are complex ndarrays of shape ``(..., n_freq, n_frames)``; leading
axes are batch axes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_same_shape, check_unit_time
from .errors import DomainError


@dataclass(frozen=True)
class SdeParams:
    """Stiffness and noise-schedule bounds of the forward process.

    ``zero_diffusion`` switches the stochastic part off entirely
    (``g == 0`` and ``sigma == 0``); it exists for deterministic tests.
    """

    gamma: float = 1.5
    sigma_min: float = 0.05
    sigma_max: float = 0.5
    zero_diffusion: bool = False

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )

    @property
    def log_ratio(self) -> float:
        return math.log(self.sigma_max / self.sigma_min)

    def without_diffusion(self) -> "SdeParams":
        return SdeParams(self.gamma, self.sigma_min, self.sigma_max, zero_diffusion=True)


@dataclass(frozen=True)
class KernelMoments:
    mean: np.ndarray
    std: float


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Draw with independent N(0, 1) real and imaginary parts."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return re + 1j * im


def drift(x, y, params: SdeParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    check_same_shape(x, y)
    return params.gamma * (y - x)


def diffusion(t: float, params: SdeParams) -> float:
    t = check_unit_time(t)
    if params.zero_diffusion:
        return 0.0
    ratio = params.sigma_max / params.sigma_min
    return params.sigma_min * ratio**t * math.sqrt(2.0 * params.log_ratio)


def kernel_mean(x0, y, t: float, params: SdeParams) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    check_same_shape(x0, y, ("x0", "y"))
    if t < 0:
        raise DomainError(f"t={t} is negative")
    decay = math.exp(-params.gamma * t)
    return decay * x0 + (1.0 - decay) * y


def kernel_variance(t: float, params: SdeParams) -> float:
    """Per-real-coordinate variance sigma(t)**2 of the perturbation kernel."""
    t = check_unit_time(t)
    if params.zero_diffusion:
        return 0.0
    lr = params.log_ratio
    # ratio**(2t) - exp(-2 gamma t) == exp(-2 gamma t) * expm1(2t (lr + gamma)), exact near t=0
    growth = math.exp(-2.0 * params.gamma * t) * math.expm1(2.0 * t * (lr + params.gamma))
    return params.sigma_min**2 * growth * lr / (params.gamma + lr)


def kernel_std(t: float, params: SdeParams) -> float:
    return math.sqrt(kernel_variance(t, params))


def kernel_moments(x0, y, t: float, params: SdeParams) -> KernelMoments:
    return KernelMoments(kernel_mean(x0, y, t, params), kernel_std(t, params))


def sample_kernel(x0, y, t: float, params: SdeParams, rng: np.random.Generator):
    """Draw ``x_t ~ p(x_t | x0, y)``; returns ``(x_t, z)`` with ``x_t = mean + sigma z``.

    At ``t == 0`` the kernel is a point mass and ``(x0, 0)`` is returned.
    """
    t = check_unit_time(t)
    mean = kernel_mean(x0, y, t, params)
    if t == 0.0:
        return mean.copy(), np.zeros_like(mean)
    z = complex_normal(rng, mean.shape)
    return mean + kernel_std(t, params) * z, z


def _positive_variance(t, params):
    t = check_unit_time(t, allow_zero=False)
    var = kernel_variance(t, params)
    if var <= 0.0:
        raise DomainError(f"kernel variance vanishes at t={t}; score undefined")
    return var


def analytic_conditional_score(x_t, mean, t: float, params: SdeParams) -> np.ndarray:
    """Score of the perturbation kernel, ``-(x_t - mean) / sigma(t)**2``."""
    x_t = np.asarray(x_t, dtype=np.complex128)
    mean = np.asarray(mean, dtype=np.complex128)
    check_same_shape(x_t, mean, ("x_t", "mean"))
    return -(x_t - mean) / _positive_variance(t, params)


def gaussian_marginal_moments(y, t: float, params: SdeParams, prior_mean, prior_var):
    """Mean and per-coordinate variance of x_t when x0 ~ N(prior_mean, prior_var)."""
    if np.any(np.asarray(prior_var) < 0):
        raise DomainError("prior variance must be nonnegative")
    decay = math.exp(-params.gamma * t)
    y = np.asarray(y, dtype=np.complex128)
    mean = decay * np.asarray(prior_mean, dtype=np.complex128) + (1.0 - decay) * y
    var = decay**2 * np.asarray(prior_var, dtype=np.float64) + kernel_variance(t, params)
    return mean, var


def analytic_gaussian_marginal_score(
    x_t, y, t: float, params: SdeParams, prior_mean=0.0, prior_var=1.0
) -> np.ndarray:
    """Exact score of p_t(x_t | y) for a per-coordinate Gaussian prior on x0."""
    x_t = np.asarray(x_t, dtype=np.complex128)
    check_same_shape(x_t, y, ("x_t", "y"))
    t = check_unit_time(t, allow_zero=False)
    mean, var = gaussian_marginal_moments(y, t, params, prior_mean, prior_var)
    if np.any(var <= 0):
        raise DomainError(f"marginal variance vanishes at t={t}")
    return -(x_t - mean) / var


class GaussianMarginalScore:
    """Score model backed by :func:`analytic_gaussian_marginal_score`."""

    def __init__(self, params: SdeParams, prior_mean=0.0, prior_var=1.0):
        self.params = params
        self.prior_mean = prior_mean
        self.prior_var = prior_var

    def __call__(self, x, t, y):
        return analytic_gaussian_marginal_score(
            x, y, t, self.params, self.prior_mean, self.prior_var
        )


def reverse_drift(x, t: float, y, score, params: SdeParams) -> np.ndarray:
    """Drift of the reverse-time SDE, ``f(x, t) - g(t)**2 * score``."""
    t = check_unit_time(t, allow_zero=False)
    score = np.asarray(score, dtype=np.complex128)
    check_same_shape(x, score, ("x", "score"))
    return drift(x, y, params) - diffusion(t, params) ** 2 * score


def euler_maruyama_forward(x0, y, params: SdeParams, n_steps: int, rng: np.random.Generator):
    """Simulate the forward SDE on ``[0, 1]`` with uniform Euler-Maruyama steps.

    ``g`` is evaluated at the left end of each step. Returns the trajectory
    as a list of ``n_steps + 1`` grids starting at ``x0``.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    x = np.array(x0, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    check_same_shape(x, y, ("x0", "y"))
    dt = 1.0 / n_steps
    sqrt_dt = math.sqrt(dt)
    trajectory = [x.copy()]
    for k in range(n_steps):
        g = diffusion(k * dt, params)
        x = x + params.gamma * (y - x) * dt
        if g:
            x = x + g * sqrt_dt * complex_normal(rng, x.shape)
        trajectory.append(x.copy())
    return trajectory


def euler_maruyama_moments(x0, y, params, n_steps, n_paths, rng, times):
    """Ensemble mean and per-real-coordinate variance at the requested times.

    ``x0`` and ``y`` are complex scalars; paths are simulated jointly without
    storing full trajectories. Real and imaginary parts are pooled for the
    variance estimate since they are independent and identically scaled.
    """
    dt = 1.0 / n_steps
    sqrt_dt = math.sqrt(dt)
    wanted = {int(round(t * n_steps)): t for t in times}
    x = np.full(n_paths, complex(x0))
    y = complex(y)
    out = {}
    for k in range(n_steps + 1):
        if k in wanted:
            t = wanted[k]
            if n_paths > 1:
                var_re, var_im = np.var(x.real, ddof=1), np.var(x.imag, ddof=1)
            else:
                var_re = var_im = math.nan
            out[t] = {
                "mean": complex(x.mean()),
                "var": 0.5 * (var_re + var_im),
                "se_real": float(math.sqrt(var_re / n_paths)),
                "se_imag": float(math.sqrt(var_im / n_paths)),
            }
        if k == n_steps:
            break
        g = diffusion(k * dt, params)
        x = x + params.gamma * (y - x) * dt + g * sqrt_dt * complex_normal(rng, n_paths)
    return out


TRAJECTORY_COLUMNS = ("path_id", "step", "t", "coord_index", "value")


def write_trajectory_csv(path, trajectories) -> int:
    """Write trajectories as long-format CSV.

    ``trajectories`` is a list of paths, each a list of grids. Every complex
    grid is flattened row-major into real coordinates ``[re0, im0, re1, ...]``.
    Returns the number of data rows written.
    """
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for path_id, path_states in enumerate(trajectories):
            n_steps = len(path_states) - 1
            for step, state in enumerate(path_states):
                coords = np.stack(
                    [np.real(state).ravel(), np.imag(state).ravel()], axis=-1
                ).ravel()
                t = step / n_steps if n_steps else 0.0
                for idx, value in enumerate(coords):
                    writer.writerow((path_id, step, repr(t), idx, repr(float(value))))
                    rows += 1
    return rows


class DeltaPriorScore:
    """Score for a clean signal equal to the conditioning input (``x0 == y``).

    The marginal is then the perturbation kernel around ``y`` itself, so the
    sampler should return ``y`` up to the residual noise at ``t_eps``.
    """

    def __init__(self, params: SdeParams):
        self.params = params

    def __call__(self, x, t, y):
        return analytic_conditional_score(x, y, t, self.params)
