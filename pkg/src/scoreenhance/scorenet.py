"""Complex-valued U-Net score model.

Complex tensors are carried as ``(re, im)`` pairs of real tensors with
layout ``(batch, channels, freq, frames)``. Convolutions and affine layers
use complex multiplication; normalization and activations act on the real
and imaginary parts separately.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DimensionError, DivergenceError, FormatError, UsageError

CHECKPOINT_FORMAT = "scoreenhance-ckpt/1"


@dataclass(frozen=True)
class NetConfig:
    """U-Net layout. ``channels[0]`` is the number of complex input channels."""

    channels: tuple = (2, 16, 16, 32)
    kernel: tuple = (4, 4)
    strides: tuple = ((1, 1), (2, 1), (2, 2))
    dilations: tuple = ((1, 1), (2, 1), (4, 1))
    time_embed_dim: int = 128
    fourier_scale: float = 16.0
    norm_groups: int = 4
    leaky_slope: float = 0.01
    seed: int = 0

    def __post_init__(self):
        # normalize lists coming from JSON/TOML into tuples
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "strides", tuple(tuple(int(v) for v in s) for s in self.strides))
        object.__setattr__(self, "dilations", tuple(tuple(int(v) for v in d) for d in self.dilations))
        if self.depth < 1:
            raise ValueError("need at least one encoder level")
        if len(self.strides) != self.depth or len(self.dilations) != self.depth:
            raise ValueError(
                f"{self.depth} levels but {len(self.strides)} strides / {len(self.dilations)} dilations"
            )
        if any(c < 1 for c in self.channels):
            raise ValueError(f"channel counts must be positive: {self.channels}")
        for s in self.strides:
            if any(k % st for k, st in zip(self.kernel, s)):
                raise ValueError(f"kernel {self.kernel} not divisible by stride {s}")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        for c in self.channels[1:]:
            if c % self.norm_groups:
                raise ValueError(f"norm_groups={self.norm_groups} does not divide {c} channels")

    @property
    def depth(self) -> int:
        return len(self.channels) - 1

    @classmethod
    def mini(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def full(cls, **overrides):
        """The six-level layout with 32-256 complex channels."""
        base = dict(
            channels=(2, 32, 32, 32, 64, 128, 256),
            strides=((1, 1), (1, 1), (1, 1), (2, 1), (2, 2), (2, 2)),
            dilations=((1, 1), (1, 1), (1, 1), (2, 1), (4, 1), (8, 1)),
            norm_groups=8,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def tiny(cls, **overrides):
        """Two levels, few channels; used for golden values and gradient checks."""
        base = dict(
            channels=(2, 4, 8),
            strides=((1, 1), (2, 2)),
            dilations=((1, 1), (2, 1)),
            time_embed_dim=16,
            norm_groups=2,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["kernel"] = list(self.kernel)
        d["strides"] = [list(s) for s in self.strides]
        d["dilations"] = [list(s) for s in self.dilations]
        return d


def fourier_time_embedding(t, frequencies):
    """``[sin(2 pi f t), cos(2 pi f t)]`` for each frequency; works on numpy or torch."""
    if isinstance(t, torch.Tensor) or isinstance(frequencies, torch.Tensor):
        t = torch.as_tensor(t, dtype=frequencies.dtype).reshape(-1, 1)
        arg = 2.0 * math.pi * t * frequencies.reshape(1, -1)
        return torch.cat([torch.sin(arg), torch.cos(arg)], dim=-1)
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    arg = 2.0 * np.pi * t * np.asarray(frequencies, dtype=np.float64).reshape(1, -1)
    out = np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)
    return out[0] if out.shape[0] == 1 else out


def _same_padding(size, kernel, stride, dilation):
    k_eff = dilation * (kernel - 1) + 1
    out = -(-size // stride)
    total = max((out - 1) * stride + k_eff - size, 0)
    return total // 2, total - total // 2


def complex_conv(x_re, x_im, w_re, w_im, b_re=None, b_im=None, stride=1, dilation=1):
    """Complex cross-correlation of real-pair tensors (no padding applied here)."""
    def conv(inp, w):
        return F.conv2d(inp, w, stride=stride, dilation=dilation)

    out_re = conv(x_re, w_re) - conv(x_im, w_im)
    out_im = conv(x_im, w_re) + conv(x_re, w_im)
    if b_re is not None:
        out_re = out_re + b_re.reshape(1, -1, 1, 1)
        out_im = out_im + b_im.reshape(1, -1, 1, 1)
    return out_re, out_im


def _uniform(shape, bound, gen):
    return (torch.rand(shape, generator=gen, dtype=torch.float64) * 2.0 - 1.0) * bound


class ComplexConv2d(nn.Module):
    """Strided, dilated complex convolution with output extent ceil(n / stride)."""

    def __init__(self, c_in, c_out, kernel, stride=(1, 1), dilation=(1, 1), *, gen):
        super().__init__()
        self.kernel, self.stride, self.dilation = tuple(kernel), tuple(stride), tuple(dilation)
        shape = (c_out, c_in) + self.kernel
        bound = 1.0 / math.sqrt(c_in * self.kernel[0] * self.kernel[1])
        self.weight_re = nn.Parameter(_uniform(shape, bound, gen).float())
        self.weight_im = nn.Parameter(_uniform(shape, bound, gen).float())
        self.bias_re = nn.Parameter(torch.zeros(c_out))
        self.bias_im = nn.Parameter(torch.zeros(c_out))

    def padding_for(self, size):
        pf = _same_padding(size[0], self.kernel[0], self.stride[0], self.dilation[0])
        pt = _same_padding(size[1], self.kernel[1], self.stride[1], self.dilation[1])
        return pf, pt

    def forward(self, x_re, x_im):
        (pf0, pf1), (pt0, pt1) = self.padding_for(x_re.shape[-2:])
        pad = (pt0, pt1, pf0, pf1)
        x_re, x_im = F.pad(x_re, pad), F.pad(x_im, pad)
        return complex_conv(
            x_re, x_im, self.weight_re, self.weight_im, self.bias_re, self.bias_im,
            stride=self.stride, dilation=self.dilation,
        )


class ComplexConvTranspose2d(nn.Module):
    """Mirror of :class:`ComplexConv2d`; crops its output to a recorded extent."""

    def __init__(self, c_in, c_out, kernel, stride=(1, 1), dilation=(1, 1), *, gen):
        super().__init__()
        self.kernel, self.stride, self.dilation = tuple(kernel), tuple(stride), tuple(dilation)
        shape = (c_in, c_out) + self.kernel
        bound = 1.0 / math.sqrt(c_in * self.kernel[0] * self.kernel[1])
        self.weight_re = nn.Parameter(_uniform(shape, bound, gen).float())
        self.weight_im = nn.Parameter(_uniform(shape, bound, gen).float())
        self.bias_re = nn.Parameter(torch.zeros(c_out))
        self.bias_im = nn.Parameter(torch.zeros(c_out))

    def forward(self, x_re, x_im, out_size):
        def tconv(inp, w):
            return F.conv_transpose2d(inp, w, stride=self.stride, dilation=self.dilation)

        out_re = tconv(x_re, self.weight_re) - tconv(x_im, self.weight_im)
        out_im = tconv(x_im, self.weight_re) + tconv(x_re, self.weight_im)
        pf, _ = _same_padding(out_size[0], self.kernel[0], self.stride[0], self.dilation[0])
        pt, _ = _same_padding(out_size[1], self.kernel[1], self.stride[1], self.dilation[1])
        out_re = out_re[..., pf:pf + out_size[0], pt:pt + out_size[1]]
        out_im = out_im[..., pf:pf + out_size[0], pt:pt + out_size[1]]
        if out_re.shape[-2:] != tuple(out_size):
            raise DimensionError(f"decoder produced {tuple(out_re.shape[-2:])}, expected {tuple(out_size)}")
        return (
            out_re + self.bias_re.reshape(1, -1, 1, 1),
            out_im + self.bias_im.reshape(1, -1, 1, 1),
        )


class ComplexTimeAffine(nn.Module):
    """Complex affine map of the (real) time embedding to one value per channel."""

    def __init__(self, dim, channels, *, gen):
        super().__init__()
        bound = 1.0 / math.sqrt(dim)
        self.weight_re = nn.Parameter(_uniform((channels, dim), bound, gen).float())
        self.weight_im = nn.Parameter(_uniform((channels, dim), bound, gen).float())
        self.bias_re = nn.Parameter(torch.zeros(channels))
        self.bias_im = nn.Parameter(torch.zeros(channels))

    def forward(self, emb):
        # imaginary part of the embedding is zero
        return emb @ self.weight_re.T + self.bias_re, emb @ self.weight_im.T + self.bias_im


class Block(nn.Module):
    """conv -> add time embedding -> per-part group norm -> per-part leaky ReLU."""

    def __init__(self, conv, c_out, cfg: NetConfig, *, gen):
        super().__init__()
        self.conv = conv
        self.time = ComplexTimeAffine(cfg.time_embed_dim, c_out, gen=gen)
        self.norm_re = nn.GroupNorm(cfg.norm_groups, c_out)
        self.norm_im = nn.GroupNorm(cfg.norm_groups, c_out)
        self.slope = cfg.leaky_slope

    def forward(self, x_re, x_im, emb, *conv_args):
        h_re, h_im = self.conv(x_re, x_im, *conv_args)
        e_re, e_im = self.time(emb)
        e_re = F.leaky_relu(e_re, self.slope)
        e_im = F.leaky_relu(e_im, self.slope)
        h_re = h_re + e_re[:, :, None, None]
        h_im = h_im + e_im[:, :, None, None]
        h_re = F.leaky_relu(self.norm_re(h_re), self.slope)
        h_im = F.leaky_relu(self.norm_im(h_im), self.slope)
        return h_re, h_im


def _check(name, *tensors):
    for tensor in tensors:
        if not torch.isfinite(tensor).all():
            raise DivergenceError(f"non-finite activations after layer {name!r}", where=name)


class ScoreNet(nn.Module):
    """Score model ``s(x_t, t, y)`` over complex spectrograms.

    ``forward`` takes complex tensors ``x_t`` and ``y`` of shape
    ``(batch, freq, frames)`` and times ``t`` of shape ``(batch,)``, and
    returns a complex tensor shaped like ``x_t``.
    """

    def __init__(self, config: NetConfig = NetConfig()):
        super().__init__()
        self.config = config
        gen = torch.Generator().manual_seed(config.seed)
        freqs = torch.randn(config.time_embed_dim // 2, generator=gen, dtype=torch.float64)
        self.register_buffer("fourier_freqs", (freqs * config.fourier_scale).float())
        ch, k = config.channels, config.kernel
        self.encoders = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for level in range(config.depth):
            conv = ComplexConv2d(
                ch[level], ch[level + 1], k, config.strides[level], config.dilations[level], gen=gen
            )
            self.encoders.append(Block(conv, ch[level + 1], config, gen=gen))
        for level in range(config.depth):
            c_in = ch[level + 1] if level == config.depth - 1 else 2 * ch[level + 1]
            c_out = ch[max(level, 1)]
            conv = ComplexConvTranspose2d(
                c_in, c_out, k, config.strides[level], config.dilations[level], gen=gen
            )
            self.decoders.append(Block(conv, c_out, config, gen=gen))
        head_bound = 1.0 / math.sqrt(ch[1])
        self.head_re = nn.Parameter(_uniform((1, ch[1], 1, 1), head_bound, gen).float())
        self.head_im = nn.Parameter(_uniform((1, ch[1], 1, 1), head_bound, gen).float())
        self.head_bias_re = nn.Parameter(torch.zeros(1))
        self.head_bias_im = nn.Parameter(torch.zeros(1))

    def forward(self, x_t, y, t, check_finite=True):
        if x_t.shape != y.shape:
            raise DimensionError(f"x_t shape {tuple(x_t.shape)} != y shape {tuple(y.shape)}")
        dtype = self.fourier_freqs.dtype
        t = torch.as_tensor(t, dtype=dtype).reshape(-1)
        if t.numel() == 1 and x_t.shape[0] != 1:
            t = t.expand(x_t.shape[0])
        emb = fourier_time_embedding(t, self.fourier_freqs)
        h_re = torch.stack([x_t.real, y.real], dim=1).to(dtype)
        h_im = torch.stack([x_t.imag, y.imag], dim=1).to(dtype)
        skips, sizes = [], []
        for i, block in enumerate(self.encoders):
            sizes.append(tuple(h_re.shape[-2:]))
            h_re, h_im = block(h_re, h_im, emb)
            if check_finite:
                _check(f"encoders.{i}", h_re, h_im)
            skips.append((h_re, h_im))
        for i in reversed(range(self.config.depth)):
            if i < self.config.depth - 1:
                s_re, s_im = skips[i]
                h_re = torch.cat([h_re, s_re], dim=1)
                h_im = torch.cat([h_im, s_im], dim=1)
            h_re, h_im = self.decoders[i](h_re, h_im, emb, sizes[i])
            if check_finite:
                _check(f"decoders.{i}", h_re, h_im)
        out_re, out_im = complex_conv(
            h_re, h_im, self.head_re, self.head_im, self.head_bias_re, self.head_bias_im
        )
        return torch.complex(out_re[:, 0], out_im[:, 0])

    def trainable(self) -> dict:
        return dict(self.named_parameters())


def backward(output, grad_output, model: ScoreNet) -> dict:
    """Parameter gradients of ``<output, grad_output>``.

    ``output`` must come from a forward pass run with autograd enabled.
    """
    if not isinstance(output, torch.Tensor) or output.grad_fn is None:
        raise UsageError("no cached graph: run forward with gradients enabled before backward")
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(
        output, params, grad_outputs=grad_output, allow_unused=True, retain_graph=False
    )
    return {
        n: torch.zeros_like(p) if g is None else g for n, p, g in zip(names, params, grads)
    }


class NetScore:
    """Adapter exposing a :class:`ScoreNet` as a numpy score callable ``(x, t, y)``."""

    def __init__(self, model: ScoreNet, batch_size=64):
        self.model = model.eval()
        self.batch_size = batch_size

    def __call__(self, x, t, y):
        x = np.asarray(x, dtype=np.complex128)
        lead = x.shape[:-2]
        flat_x = x.reshape((-1,) + x.shape[-2:])
        flat_y = np.broadcast_to(np.asarray(y, dtype=np.complex128), x.shape).reshape(flat_x.shape)
        dtype = self.model.fourier_freqs.dtype
        cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
        outs = []
        with torch.no_grad():
            for start in range(0, flat_x.shape[0], self.batch_size):
                xb = torch.from_numpy(flat_x[start:start + self.batch_size]).to(cdtype)
                yb = torch.from_numpy(np.array(flat_y[start:start + self.batch_size])).to(cdtype)
                tb = torch.full((xb.shape[0],), float(t), dtype=dtype)
                outs.append(self.model(xb, yb, tb).numpy().astype(np.complex128))
        return np.concatenate(outs).reshape(lead + x.shape[-2:])


# -- checkpoint container -------------------------------------------------


def _to_f32(tensors: dict) -> dict:
    return {k: np.ascontiguousarray(v.detach().cpu().numpy(), dtype="<f4") for k, v in tensors.items()}


def save_checkpoint(path, model: ScoreNet, ema: dict = None, extra: dict = None, optimizer=None):
    """Write config, weights, frozen Fourier frequencies and EMA copy to one ``.npz``.

    All tensors are stored little-endian float32 with their shapes.
    """
    header = {
        "format": CHECKPOINT_FORMAT,
        "net_config": model.config.to_dict(),
        "extra": extra or {},
    }
    arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    params = {n: p for n, p in model.named_parameters()}
    for name, arr in _to_f32(params).items():
        arrays[f"params/{name}"] = arr
    arrays["fourier_freqs"] = _to_f32({"f": model.fourier_freqs})["f"]
    for name, arr in _to_f32(ema if ema is not None else params).items():
        arrays[f"ema/{name}"] = arr
    if optimizer is not None:
        arrays["adam/step"] = np.array([optimizer.step], dtype="<i8")
        for name, arr in _to_f32(optimizer.m).items():
            arrays[f"adam_m/{name}"] = arr
        for name, arr in _to_f32(optimizer.v).items():
            arrays[f"adam_v/{name}"] = arr
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


@dataclass
class Checkpoint:
    config: NetConfig
    params: dict
    fourier_freqs: np.ndarray
    ema: dict
    extra: dict = field(default_factory=dict)
    adam_step: int = 0
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)

    def build(self, weights="ema", dtype=torch.float32) -> ScoreNet:
        model = ScoreNet(self.config)
        source = self.ema if weights == "ema" else self.params
        state = {k: torch.from_numpy(v.copy()) for k, v in source.items()}
        state["fourier_freqs"] = torch.from_numpy(self.fourier_freqs.copy())
        model.load_state_dict(state)
        return model.to(dtype)


def load_checkpoint(path) -> Checkpoint:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: not a checkpoint ({exc})") from exc
    with data:
        if "header" not in data.files:
            raise FormatError(f"{path}: missing header")
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != CHECKPOINT_FORMAT:
            raise FormatError(f"{path}: format tag {header.get('format')!r} != {CHECKPOINT_FORMAT!r}")

        def group(prefix):
            return {k[len(prefix):]: data[k] for k in data.files if k.startswith(prefix)}

        step = int(data["adam/step"][0]) if "adam/step" in data.files else 0
        return Checkpoint(
            config=NetConfig(**header["net_config"]),
            params=group("params/"),
            fourier_freqs=data["fourier_freqs"],
            ema=group("ema/"),
            extra=header.get("extra", {}),
            adam_step=step,
            adam_m=group("adam_m/"),
            adam_v=group("adam_v/"),
        )
