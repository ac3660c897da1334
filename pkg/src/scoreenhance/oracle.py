"""Self-checks against closed forms, Monte-Carlo simulation and finite differences.

Each ``check_*`` function returns a list of :class:`CheckResult`. The
``oracle-check`` command and the acceptance tests share these routines.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
import torch
from torch.func import functional_call, vmap

from .dsp import StftConfig, amp_inverse, amp_transform, istft, stft
from .metrics import si_decompose, si_metrics, si_sdr
from .pipeline import calibrate_gamma, synthetic_calibration_pairs
from .sampler import SamplerConfig, pc_sample
from .scorenet import NetConfig, ScoreNet, backward
from .sde import (
    GaussianMarginalScore,
    SdeParams,
    analytic_gaussian_marginal_score,
    complex_normal,
    diffusion,
    euler_maruyama_moments,
    gaussian_marginal_moments,
    kernel_mean,
    kernel_variance,
)

# Frozen from tools/oracle_values.py (mpmath, 50 digits) at the default
# gamma=1.5, sigma_min=0.05, sigma_max=0.5.
REFERENCE = {
    "g(0)": 0.10729830131446736198,
    "g(1)": 1.0729830131446736198,
    "sigma(1)^2": 0.15130750838553109966,
    "sigma(0.5)^2": 0.014800506891260617869,
    "sigma(0.25)^2": 0.0040720648361379439413,
    "sigma(0.03)^2": 0.0003545726636674013581,
    "exp(-gamma)": 0.22313016014842982893,
}

# scalar toy used by the sampler check: x0 ~ N(0, 1) per real coordinate, y = 0.5
TOY_Y = 0.5
TOY_PRIOR_MEAN = 0.0
TOY_PRIOR_VAR = 1.0


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34} value={self.value:<12.4g} tol={self.tolerance:<8.3g} {self.detail}"


def check_kernel(
    params=SdeParams(),
    n_paths=10_000,
    n_steps=1_000,
    seed=0,
    times=(0.25, 0.5, 1.0),
    x0=1.0 + 0.5j,
    y=0.0,
    variance_fn=kernel_variance,
    var_rtol=0.03,
    mean_se=3.0,
):
    """Euler-Maruyama ensemble moments against the closed-form kernel.

    ``variance_fn`` replaces the closed-form variance (mutation testing).
    """
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    moments = euler_maruyama_moments(x0, y, params, n_steps, n_paths, rng, times)
    elapsed = time.perf_counter() - start
    out = []
    for t in times:
        m = moments[t]
        mu = complex(kernel_mean(np.array(x0), np.array(y), t, params))
        var = variance_fn(t, params)
        z_re = abs(m["mean"].real - mu.real) / m["se_real"]
        z_im = abs(m["mean"].imag - mu.imag) / m["se_imag"]
        z = max(z_re, z_im)
        out.append(CheckResult(f"kernel mean t={t}", z <= mean_se, z, mean_se, "max |d|/SE over re, im", elapsed))
        rel = abs(m["var"] - var) / var
        out.append(CheckResult(f"kernel variance t={t}", rel <= var_rtol, rel, var_rtol, f"empirical {m['var']:.6g} vs {var:.6g}", elapsed))
    return out


def check_closed_form(params=SdeParams(), rtol=1e-12):
    """Diffusion, kernel variance and decay against the frozen extended-precision values."""
    if params != SdeParams():
        return [CheckResult("closed-form vectors", True, 0.0, rtol, "skipped: non-default SDE")]
    got = {
        "g(0)": diffusion(0.0, params),
        "g(1)": diffusion(1.0, params),
        "sigma(1)^2": kernel_variance(1.0, params),
        "sigma(0.5)^2": kernel_variance(0.5, params),
        "sigma(0.25)^2": kernel_variance(0.25, params),
        "sigma(0.03)^2": kernel_variance(0.03, params),
        "exp(-gamma)": float(kernel_mean(np.array(1.0), np.array(0.0), 1.0, params).real),
    }
    out = []
    for key, ref in REFERENCE.items():
        rel = abs(got[key] - ref) / abs(ref)
        out.append(CheckResult(f"closed form {key}", rel <= rtol, rel, rtol, f"{got[key]!r}"))
    return out


def check_sampler(
    params=SdeParams(),
    config=SamplerConfig(),
    n_runs=10_000,
    seed=0,
    var_rtol=0.05,
    mean_se=3.0,
):
    """PC sampling with the exact Gaussian-marginal score on a 1x1 grid.

    Compares the ensemble at ``t_eps`` with the closed-form marginal there.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    y = np.full((n_runs, 1, 1), TOY_Y, dtype=np.complex128)
    score = GaussianMarginalScore(params, TOY_PRIOR_MEAN, TOY_PRIOR_VAR)
    x = pc_sample(y, score, params, config, rng)
    elapsed = time.perf_counter() - start
    mean, var = gaussian_marginal_moments(TOY_Y, config.t_eps, params, TOY_PRIOR_MEAN, TOY_PRIOR_VAR)
    mean = complex(mean)
    var = float(var)
    emp_var = 0.5 * (np.var(x.real, ddof=1) + np.var(x.imag, ddof=1))
    se_re = np.std(x.real, ddof=1) / math.sqrt(n_runs)
    se_im = np.std(x.imag, ddof=1) / math.sqrt(n_runs)
    z = max(abs(x.real.mean() - mean.real) / se_re, abs(x.imag.mean() - mean.imag) / se_im)
    rel = abs(emp_var - var) / var
    return [
        CheckResult("sampler mean at t_eps", bool(z <= mean_se), float(z), mean_se, f"empirical {x.real.mean():.5g} vs {mean.real:.5g}", elapsed),
        CheckResult("sampler variance at t_eps", bool(rel <= var_rtol), float(rel), var_rtol, f"empirical {emp_var:.5g} vs {var:.5g}", elapsed),
    ]


def check_calibration(params=SdeParams(), seed=0, rtol=1e-12):
    """Residual identity plus the threshold decision on two synthetic cases."""
    rng = np.random.default_rng(seed)
    clean, noisy = synthetic_calibration_pairs(16, (17, 9), 0.01, rng)
    out = []
    report = calibrate_gamma(clean, noisy, params)
    rel = report.identity_rel_error
    out.append(CheckResult("calibration identity", rel <= rtol, rel, rtol, f"gamma={params.gamma}"))
    for gamma, expect in ((1.5, True), (0.5, False)):
        r = calibrate_gamma(clean, noisy, SdeParams(gamma, params.sigma_min, params.sigma_max))
        ok = r.passed == expect
        want = 0.01 * math.exp(-2 * gamma)
        out.append(CheckResult(
            f"calibration decision gamma={gamma}", ok, r.mean_sq_residual, 1e-3,
            f"expected {'pass' if expect else 'fail'} (closed form {want:.4g})",
        ))
    return out


def check_dsp(seed=0):
    rng = np.random.default_rng(seed)
    cfg = StftConfig()
    x = rng.standard_normal(16000)
    err = float(np.max(np.abs(istft(stft(x, cfg), x.size, cfg) - x)))
    spec = stft(x, cfg)
    compressed = amp_transform(spec)
    back = amp_inverse(compressed)
    nz = np.abs(spec) > 0
    rel = float(np.max(np.abs(back[nz] - spec[nz]) / np.abs(spec[nz])))
    # phase difference wrapped to (-pi, pi]
    phase = float(np.max(np.abs(np.angle(compressed[nz] * np.conj(spec[nz])))))
    return [
        CheckResult("stft/istft round trip", err < 1e-6, err, 1e-6, "max abs error"),
        CheckResult("amplitude transform round trip", rel < 1e-9, rel, 1e-9, "max relative error"),
        CheckResult("amplitude transform phase", phase < 1e-12, phase, 1e-12, "max phase change (rad)"),
    ]


def check_metrics(seed=0, n_random=100):
    rng = np.random.default_rng(seed)
    n = 4096
    s = rng.standard_normal(n)
    noise = rng.standard_normal(n)
    noise -= (noise @ s) / (s @ s) * s
    noise *= math.sqrt((s @ s) / (noise @ noise))
    errs = [abs(si_sdr(s + noise, s) - 0.0)]
    scaled = noise * math.sqrt(0.1)
    m = si_metrics(s + scaled, s, scaled)
    errs += [abs(m["si_sdr"] - 10.0), abs(m["si_sir"] - 10.0)]
    inf_ok = si_sdr(s, s) == math.inf and si_sdr(0.5 * s, s) == math.inf and m["si_sar"] == math.inf
    worst = 0.0
    for _ in range(n_random):
        est, ref, nn = rng.standard_normal((3, 256))
        d = si_decompose(est, ref, nn)
        resid = np.max(np.abs(d.target + d.interference + d.artifacts - est))
        worst = max(worst, float(resid) / float(np.max(np.abs(est))))
    return [
        CheckResult("SI-SDR analytic cases", max(errs) < 1e-9 and inf_ok, max(errs), 1e-9, "0 dB, 10 dB, +inf"),
        CheckResult("decomposition identity", worst < 1e-12, worst, 1e-12, f"{n_random} random instances"),
    ]


def toy_score_error_ratio(model, params=SdeParams(), shape=(8, 8), n_times=20, n_samples=16, seed=123):
    """Score MSE of ``model`` against the exact toy marginal score, over the zero-score MSE.

    Points are drawn from the true marginal at ``n_times`` times evenly
    spaced on ``[t_eps, 1]``, with the toy prior and fixed ``y``.
    """
    from .scorenet import NetScore

    score = NetScore(model)
    rng = np.random.default_rng(seed)
    y = np.full((n_samples,) + tuple(shape), TOY_Y, dtype=np.complex128)
    err = base = 0.0
    for t in np.linspace(SamplerConfig().t_eps, 1.0, n_times):
        mean, var = gaussian_marginal_moments(y, t, params, TOY_PRIOR_MEAN, TOY_PRIOR_VAR)
        x = mean + np.sqrt(var) * complex_normal(rng, y.shape)
        true = analytic_gaussian_marginal_score(x, y, t, params, TOY_PRIOR_MEAN, TOY_PRIOR_VAR)
        err += float(np.mean(np.abs(score(x, t, y) - true) ** 2))
        base += float(np.mean(np.abs(true) ** 2))
    return err / base


def _perturb_nontrivial(model, gen):
    # zero-initialized biases and unit norm scales make some gradients degenerate
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "bias" in name or "norm" in name:
                p.add_(0.1 * torch.randn(p.shape, generator=gen, dtype=p.dtype))


def finite_difference_gradients(model, x, y, t, direction, chunk=1024):
    """Central differences of ``<model(x, y, t), direction>`` for every parameter entry.

    The step is ``1e-5 * max(1, max|theta|)`` per tensor. Perturbed
    parameter sets are evaluated in batches with ``vmap``.
    """
    params = {n: p.detach() for n, p in model.named_parameters()}
    buffers = dict(model.named_buffers())

    def objective(pdict):
        out = functional_call(model, (pdict, buffers), (x, y, t), {"check_finite": False})
        return (out.real * direction.real + out.imag * direction.imag).sum()

    result = {}
    for name, p in params.items():
        flat = p.reshape(-1)
        n = flat.numel()
        h = 1e-5 * max(float(p.abs().max()), 1.0)

        def shifted(delta, name=name, flat=flat, shape=p.shape):
            d = dict(params)
            d[name] = (flat + delta).reshape(shape)
            return objective(d)

        fd = torch.empty(n, dtype=torch.float64)
        for s in range(0, n, chunk):
            idx = torch.arange(s, min(s + chunk, n))
            e = torch.zeros(len(idx), n, dtype=torch.float64)
            e[torch.arange(len(idx)), idx] = h
            fd[idx] = (vmap(shifted)(e) - vmap(shifted)(-e)) / (2 * h)
        result[name] = fd.reshape(p.shape)
    return result


def gradient_errors(analytic: dict, numeric: dict) -> dict:
    """Per-tensor worst relative error ``|a - n| / max(|a|, |n|, 1e-3 * max|a|)``.

    The floor keeps entries that are zero up to round-off from dominating.
    """
    out = {}
    for name, a in analytic.items():
        a = a.reshape(-1).double()
        n = numeric[name].reshape(-1)
        floor = 1e-3 * max(float(a.abs().max()), 1e-12)
        denom = torch.clamp(torch.maximum(a.abs(), n.abs()), min=floor)
        out[name] = float(((a - n).abs() / denom).max())
    return out


def check_gradients(net_config=NetConfig.mini(), seed=0, shape=(8, 4), rtol=1e-4):
    """Autograd parameter gradients against central finite differences in float64."""
    start = time.perf_counter()
    gen = torch.Generator().manual_seed(seed)
    model = ScoreNet(net_config).double()
    _perturb_nontrivial(model, gen)

    def cn(*s):
        return torch.complex(
            torch.randn(*s, generator=gen, dtype=torch.float64),
            torch.randn(*s, generator=gen, dtype=torch.float64),
        )

    x, y, direction = cn(1, *shape), cn(1, *shape), cn(1, *shape)
    t = torch.tensor([0.4], dtype=torch.float64)
    analytic = backward(model(x, y, t, check_finite=False), direction, model)
    numeric = finite_difference_gradients(model, x, y, t, direction)
    errors = gradient_errors(analytic, numeric)
    worst_name = max(errors, key=errors.get)
    worst = errors[worst_name]
    n = sum(p.numel() for p in model.parameters())
    return [CheckResult(
        "parameter gradients vs FD", worst <= rtol, worst, rtol,
        f"{n} entries, worst in {worst_name}", time.perf_counter() - start,
    )]


CHECKS = ("closed-form", "kernel", "sampler", "calibration", "gradients", "dsp", "metrics")


def run_checks(
    names=CHECKS,
    seed=0,
    params=SdeParams(),
    sampler_config=SamplerConfig(),
    net_config=NetConfig.mini(),
    variance_fn=kernel_variance,
    kernel_paths=10_000,
    kernel_steps=1_000,
    sampler_runs=10_000,
):
    unknown = set(names) - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown check(s): {', '.join(sorted(unknown))}")
    results = []
    for name in names:
        if name == "closed-form":
            results += check_closed_form(params)
        elif name == "kernel":
            results += check_kernel(params, kernel_paths, kernel_steps, seed, variance_fn=variance_fn)
        elif name == "sampler":
            results += check_sampler(params, sampler_config, sampler_runs, seed)
        elif name == "calibration":
            results += check_calibration(params, seed)
        elif name == "gradients":
            results += check_gradients(net_config, seed)
        elif name == "dsp":
            results += check_dsp(seed)
        elif name == "metrics":
            results += check_metrics(seed)
    return results
