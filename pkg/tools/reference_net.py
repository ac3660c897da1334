"""Direct-summation numpy forward pass of the complex U-Net.

Written against the layer definitions only (no torch), using native complex
arrays. It serves as the independent oracle for the network's golden output
and for forward-pass agreement tests. Slow; meant for tiny inputs.

``params`` maps the network's parameter names to float64 arrays.
"""
import numpy as np

GN_EPS = 1e-5


def same_pad(size, kernel, stride, dilation):
    out = -(-size // stride)
    total = max((out - 1) * stride + dilation * (kernel - 1) + 1 - size, 0)
    return total // 2, total - total // 2


def conv(x, w, b, stride, dilation):
    """x: (C_in, H, W) complex; w: (C_out, C_in, kh, kw) complex."""
    c_out, _, kh, kw = w.shape
    (p0, p1) = same_pad(x.shape[1], kh, stride[0], dilation[0])
    (q0, q1) = same_pad(x.shape[2], kw, stride[1], dilation[1])
    xp = np.pad(x, ((0, 0), (p0, p1), (q0, q1)))
    ho = -(-x.shape[1] // stride[0])
    wo = -(-x.shape[2] // stride[1])
    out = np.zeros((c_out, ho, wo), dtype=complex)
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = 0j
                for a in range(kh):
                    for bb in range(kw):
                        r = i * stride[0] + a * dilation[0]
                        c = j * stride[1] + bb * dilation[1]
                        acc += np.sum(w[o, :, a, bb] * xp[:, r, c])
                out[o, i, j] = acc + b[o]
    return out


def conv_transpose(x, w, b, stride, dilation, out_size):
    """x: (C_in, H, W); w: (C_in, C_out, kh, kw). Scatter, then crop to ``out_size``."""
    c_in, c_out, kh, kw = w.shape
    h_full = (x.shape[1] - 1) * stride[0] + dilation[0] * (kh - 1) + 1
    w_full = (x.shape[2] - 1) * stride[1] + dilation[1] * (kw - 1) + 1
    full = np.zeros((c_out, h_full, w_full), dtype=complex)
    for c in range(c_in):
        for i in range(x.shape[1]):
            for j in range(x.shape[2]):
                for a in range(kh):
                    for bb in range(kw):
                        full[:, i * stride[0] + a * dilation[0], j * stride[1] + bb * dilation[1]] += (
                            x[c, i, j] * w[c, :, a, bb]
                        )
    p0, _ = same_pad(out_size[0], kh, stride[0], dilation[0])
    q0, _ = same_pad(out_size[1], kw, stride[1], dilation[1])
    out = full[:, p0:p0 + out_size[0], q0:q0 + out_size[1]]
    return out + b[:, None, None]


def group_norm(x, groups, weight, bias):
    c = x.shape[0]
    g = x.reshape(groups, -1)
    mean = g.mean(axis=1, keepdims=True)
    var = g.var(axis=1, keepdims=True)
    g = (g - mean) / np.sqrt(var + GN_EPS)
    return g.reshape(x.shape) * weight.reshape(c, 1, 1) + bias.reshape(c, 1, 1)


def leaky(x, slope):
    return np.where(x >= 0, x, slope * x)


def cplx(params, prefix):
    return params[prefix + "weight_re"] + 1j * params[prefix + "weight_im"], \
        params[prefix + "bias_re"] + 1j * params[prefix + "bias_im"]


def block(params, name, h, emb, cfg, conv_fn):
    w, b = cplx(params, f"{name}.conv.")
    h = conv_fn(h, w, b)
    tw, tb = cplx(params, f"{name}.time.")
    e = tw @ emb + tb
    e = leaky(e.real, cfg["leaky_slope"]) + 1j * leaky(e.imag, cfg["leaky_slope"])
    h = h + e[:, None, None]
    g = cfg["norm_groups"]
    re = group_norm(h.real, g, params[f"{name}.norm_re.weight"], params[f"{name}.norm_re.bias"])
    im = group_norm(h.imag, g, params[f"{name}.norm_im.weight"], params[f"{name}.norm_im.bias"])
    return leaky(re, cfg["leaky_slope"]) + 1j * leaky(im, cfg["leaky_slope"])


def forward(params, freqs, cfg, x_t, y, t):
    """Score for one item; ``x_t``, ``y`` complex (F, T); ``cfg`` is a NetConfig dict."""
    arg = 2 * np.pi * t * np.asarray(freqs, dtype=float)
    emb = np.concatenate([np.sin(arg), np.cos(arg)])
    depth = len(cfg["channels"]) - 1
    h = np.stack([x_t, y]).astype(complex)
    skips, sizes = [], []
    for i in range(depth):
        sizes.append(h.shape[1:])
        s, d = tuple(cfg["strides"][i]), tuple(cfg["dilations"][i])
        h = block(params, f"encoders.{i}", h, emb, cfg, lambda v, w, b: conv(v, w, b, s, d))
        skips.append(h)
    for i in reversed(range(depth)):
        if i < depth - 1:
            h = np.concatenate([h, skips[i]])
        s, d, size = tuple(cfg["strides"][i]), tuple(cfg["dilations"][i]), sizes[i]
        h = block(
            params, f"decoders.{i}", h, emb, cfg,
            lambda v, w, b: conv_transpose(v, w, b, s, d, size),
        )
    head = (params["head_re"] + 1j * params["head_im"]).reshape(-1)
    bias = params["head_bias_re"][0] + 1j * params["head_bias_im"][0]
    return np.tensordot(head, h, axes=1) + bias


def golden_case():
    """Fixed inputs and weights for the golden-output regression.

    Tiny preset with seed 0, cast to float64; biases and norm affines are
    shifted by seeded noise so that every parameter group matters.
    """
    from scoreenhance.scorenet import NetConfig, ScoreNet

    config = NetConfig.tiny(seed=0)
    model = ScoreNet(config).double()
    rng = np.random.default_rng(7)
    params = {}
    for name, p in model.named_parameters():
        value = p.detach().numpy().astype(float)
        if "bias" in name or "norm" in name:
            value = value + 0.1 * rng.standard_normal(value.shape)
        params[name] = value
    freqs = model.fourier_freqs.numpy().astype(float)
    rng = np.random.default_rng(2024)
    x_t = rng.standard_normal((9, 6)) + 1j * rng.standard_normal((9, 6))
    y = rng.standard_normal((9, 6)) + 1j * rng.standard_normal((9, 6))
    return config, params, freqs, x_t, y, 0.37


# flat indices into the (9, 6) output reported by the oracle script
GOLDEN_INDICES = (0, 7, 20, 33, 53)
