"""Denoising score-matching training with Adam and a parameter EMA."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import DimensionError, DivergenceError
from .scorenet import NetConfig, ScoreNet, load_checkpoint, save_checkpoint
from .sde import SdeParams, complex_normal, kernel_mean, kernel_std

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "epoch", "t_mean", "loss", "grad_norm", "wall_ms")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 1
    t_min: float = 0.03
    ema_decay: float = 0.999
    loss_weighting: str = "none"
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        if not 0 < self.t_min < 1:
            raise ValueError(f"t_min must lie in (0, 1), got {self.t_min}")
        if not 0 < self.ema_decay < 1:
            raise ValueError(f"ema_decay must lie in (0, 1), got {self.ema_decay}")
        if self.loss_weighting not in ("none", "sigma2"):
            raise ValueError(f"loss_weighting must be 'none' or 'sigma2', got {self.loss_weighting!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def item_rng(seed, epoch, index) -> np.random.Generator:
    """Generator for one training item; independent of batching and worker layout."""
    return np.random.default_rng([int(seed), int(epoch), int(index)])


@dataclass
class PerturbedBatch:
    x_t: np.ndarray
    t: np.ndarray
    sigma: np.ndarray
    target: np.ndarray


def perturb_batch(x0, y, params: SdeParams, rngs, t_min=0.03) -> PerturbedBatch:
    """Draw t ~ U[t_min, 1] and x_t from the perturbation kernel for every item.

    ``rngs`` holds one generator per item; each draws t first, then z.
    """
    x0 = np.asarray(x0, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if x0.shape != y.shape:
        raise DimensionError(f"x0 shape {x0.shape} != y shape {y.shape}")
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    if isinstance(rngs, np.random.Generator):
        rngs = [rngs] * x0.shape[0]
    if len(rngs) != x0.shape[0]:
        raise ValueError(f"{len(rngs)} generators for {x0.shape[0]} items")
    n = x0.shape[0]
    ts = np.empty(n)
    sig = np.empty(n)
    x_t = np.empty_like(x0)
    target = np.empty_like(x0)
    for i, rng in enumerate(rngs):
        t = rng.uniform(t_min, 1.0)
        z = complex_normal(rng, x0.shape[1:])
        s = kernel_std(t, params)
        ts[i], sig[i] = t, s
        x_t[i] = kernel_mean(x0[i], y[i], t, params) + s * z
        target[i] = -z / s
    return PerturbedBatch(x_t, ts, sig, target)


def _weights(batch, weighting):
    if weighting == "sigma2":
        return batch.sigma**2
    return np.ones_like(batch.sigma)


def dsm_loss(x0, y, score_model, params: SdeParams, rngs, t_min=0.03, weighting="none"):
    """Denoising score-matching loss for one batch.

    Returns ``(loss, grads)``. ``loss`` is the mean over items and real
    coordinates of ``w(t) * (s(x_t, t, y) + z / sigma(t))**2``. For a
    :class:`ScoreNet`, ``grads`` maps parameter names to gradients; for a
    plain numpy score callable it is ``None``.
    """
    batch = perturb_batch(x0, y, params, rngs, t_min)
    w = _weights(batch, weighting)
    if isinstance(score_model, ScoreNet):
        return _dsm_loss_torch(score_model, batch, y, w)
    per_item = []
    for i in range(batch.x_t.shape[0]):
        s = np.asarray(score_model(batch.x_t[i], batch.t[i], y[i]), dtype=np.complex128)
        diff = s - batch.target[i]
        per_item.append(w[i] * np.mean(np.concatenate([diff.real.ravel(), diff.imag.ravel()]) ** 2))
    loss = float(np.mean(per_item))
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite loss at t={batch.t.tolist()}", t=batch.t.tolist())
    return loss, None


def _dsm_loss_torch(model, batch, y, w, with_grads=True):
    dtype = model.fourier_freqs.dtype
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    x_t = torch.from_numpy(batch.x_t).to(cdtype)
    y_t = torch.from_numpy(np.asarray(y, dtype=np.complex128)).to(cdtype)
    tgt = torch.from_numpy(batch.target).to(cdtype)
    t = torch.from_numpy(batch.t).to(dtype)
    weights = torch.from_numpy(w).to(dtype)
    out = model(x_t, y_t, t)
    diff = out - tgt
    sq = (diff.real**2 + diff.imag**2).reshape(diff.shape[0], -1)
    # two real coordinates per complex bin
    per_item = sq.sum(dim=1) / (2 * sq.shape[1])
    loss = (weights * per_item).mean()
    if not torch.isfinite(loss):
        bad = batch.t[~np.isfinite(per_item.detach().numpy())].tolist()
        raise DivergenceError(f"non-finite loss (offending t={bad})", t=bad)
    if not with_grads:
        return float(loss.detach()), None
    names, tensors = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    grads = {n: torch.zeros_like(p) if g is None else g for n, p, g in zip(names, tensors, grads)}
    return float(loss.detach()), grads


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> AdamState:
    """In-place bias-corrected Adam update of every tensor in ``params``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise DimensionError(f"{name}: gradient shape {tuple(g.shape)} != {tuple(p.shape)}")
            m = state.m.setdefault(name, torch.zeros_like(p))
            v = state.v.setdefault(name, torch.zeros_like(p))
            if m.shape != p.shape or v.shape != p.shape:
                raise DimensionError(f"{name}: optimizer state shape mismatch")
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + state.eps))
    return state


def ema_update(shadow: dict, params: dict, decay: float) -> dict:
    """``shadow <- decay * shadow + (1 - decay) * params`` per tensor, in place."""
    with torch.no_grad():
        for name, p in params.items():
            s = shadow[name]
            if s.shape != p.shape:
                raise DimensionError(f"{name}: EMA shape {tuple(s.shape)} != {tuple(p.shape)}")
            # lerp form: exact when params == shadow or decay == 0
            s.lerp_(p.detach(), 1.0 - decay)
    return shadow


class ArrayDataset:
    """Fixed arrays of transformed spectrogram pairs, shape ``(n, freq, frames)``."""

    def __init__(self, x0, y):
        self.x0 = np.asarray(x0, dtype=np.complex128)
        self.y = np.asarray(y, dtype=np.complex128)
        if self.x0.shape != self.y.shape:
            raise DimensionError(f"x0 shape {self.x0.shape} != y shape {self.y.shape}")

    def __len__(self):
        return self.x0.shape[0]

    def epoch(self, epoch, seed):
        return self.x0, self.y


@dataclass
class TrainResult:
    model: ScoreNet
    ema: dict
    optimizer: AdamState
    losses: list
    epochs_done: int
    checkpoint: Path = None


def _grad_norm(grads):
    return math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))


def train(
    dataset,
    net_config: NetConfig,
    train_config: TrainConfig,
    sde_params: SdeParams,
    out_dir=None,
    resume=None,
    max_steps=None,
):
    """Run DSM training; returns a :class:`TrainResult`.

    ``dataset`` exposes ``len()`` and ``epoch(epoch, seed) -> (x0, y)``.
    With ``out_dir``, writes ``train_log.csv``, ``last.npz`` after every
    epoch and ``best.npz`` whenever the epoch-mean loss improves. A
    divergence leaves the previously written checkpoints untouched.
    ``max_steps`` stops early (used by tests and time-boxed runs).
    """
    cfg = train_config
    model = ScoreNet(net_config)
    opt = AdamState()
    start_epoch = 0
    if resume is not None:
        ckpt = load_checkpoint(resume) if not hasattr(resume, "params") else resume
        model = ckpt.build("raw")
        opt.step = ckpt.adam_step
        opt.m = {k: torch.from_numpy(v.copy()) for k, v in ckpt.adam_m.items()}
        opt.v = {k: torch.from_numpy(v.copy()) for k, v in ckpt.adam_v.items()}
        start_epoch = int(ckpt.extra.get("epochs_done", 0))
        ema = {k: torch.from_numpy(v.copy()) for k, v in ckpt.ema.items()}
    params = dict(model.named_parameters())
    if resume is None:
        ema = {k: p.detach().clone() for k, p in params.items()}

    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = writer = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.csv"
        new = not log_path.exists()
        log_fh = open(log_path, "a", newline="")
        writer = csv.writer(log_fh)
        if new:
            writer.writerow(LOG_COLUMNS)

    def checkpoint(name, epochs_done, best):
        if out_dir is None:
            return None
        path = out_dir / name
        extra = {
            "epochs_done": epochs_done,
            "best_loss": best,
            "train_config": asdict(cfg),
            "sde": {"gamma": sde_params.gamma, "sigma_min": sde_params.sigma_min, "sigma_max": sde_params.sigma_max},
        }
        save_checkpoint(path, model, ema, extra, optimizer=opt)
        return path

    losses = []
    best = math.inf
    last_path = None
    epochs_done = start_epoch
    if cfg.epochs == 0 or start_epoch >= cfg.epochs:
        last_path = checkpoint("last.npz", epochs_done, best)
    try:
        model.train()
        for epoch in range(start_epoch, cfg.epochs):
            x0_all, y_all = dataset.epoch(epoch, cfg.seed)
            n = x0_all.shape[0]
            order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
            epoch_losses = []
            for b in range(0, n, cfg.batch_size):
                t0 = time.perf_counter()
                idx = order[b:b + cfg.batch_size]
                rngs = [item_rng(cfg.seed, epoch, i) for i in idx]
                batch = perturb_batch(x0_all[idx], y_all[idx], sde_params, rngs, cfg.t_min)
                w = _weights(batch, cfg.loss_weighting)
                loss, grads = _dsm_loss_torch(model, batch, y_all[idx], w)
                gnorm = _grad_norm(grads)
                adam_step(params, grads, opt, cfg.learning_rate)
                ema_update(ema, params, cfg.ema_decay)
                losses.append(loss)
                epoch_losses.append(loss)
                if writer is not None and opt.step % cfg.log_every == 0:
                    wall = 1000.0 * (time.perf_counter() - t0)
                    writer.writerow((opt.step, epoch, float(batch.t.mean()), repr(loss), repr(gnorm), f"{wall:.3f}"))
                if max_steps is not None and len(losses) >= max_steps:
                    break
            epochs_done = epoch + 1
            mean_loss = float(np.mean(epoch_losses))
            logger.info("epoch %d: mean loss %.6g over %d steps", epoch, mean_loss, len(epoch_losses))
            last_path = checkpoint("last.npz", epochs_done, min(best, mean_loss))
            if mean_loss < best:
                best = mean_loss
                checkpoint("best.npz", epochs_done, best)
            if max_steps is not None and len(losses) >= max_steps:
                break
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(model, ema, opt, losses, epochs_done, last_path)


def ema_model(result: TrainResult) -> ScoreNet:
    """A copy of the trained network carrying the EMA weights."""
    model = ScoreNet(result.model.config)
    state = {k: v.detach().clone() for k, v in result.ema.items()}
    state["fourier_freqs"] = result.model.fourier_freqs.clone()
    model.load_state_dict(state)
    return model
