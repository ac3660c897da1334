"""Command-line interface.

Seeding: every command takes ``--seed`` (the master seed). Per-item
generators are derived from ``(seed, index)`` with numpy's ``SeedSequence``
so results do not depend on processing order or worker count.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from .dataio import load_dataset, load_pairs, read_wav, write_wav
from .dsp import normalize_pair, to_model_domain
from .errors import DatasetError, DivergenceError, FormatError, NormalizationError
from .metrics import EvalReport, si_metrics
from .oracle import CHECKS, run_checks
from .pipeline import (
    calibrate_gamma,
    enhance_waveform,
    synthetic_calibration_pairs,
    utterance_rng,
)
from .sampler import SamplerStats
from .scorenet import NetConfig, NetScore, load_checkpoint
from .sde import (
    DeltaPriorScore,
    euler_maruyama_forward,
    euler_maruyama_moments,
    kernel_mean,
    kernel_variance,
    write_trajectory_csv,
)
from .trainer import train

logger = logging.getLogger("scoreenhance")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

NET_PRESETS = {"tiny": NetConfig.tiny, "mini": NetConfig.mini, "full": NetConfig.full}


def _overrides(args):
    """Command-line flags that map onto config fields."""
    out = {"sde": {}, "train": {}, "sampler": {}, "net": {}}
    for flag, (section, key) in {
        "gamma": ("sde", "gamma"),
        "sigma_min": ("sde", "sigma_min"),
        "sigma_max": ("sde", "sigma_max"),
        "epochs": ("train", "epochs"),
        "batch_size": ("train", "batch_size"),
        "lr": ("train", "learning_rate"),
        "steps_reverse": ("sampler", "n_steps"),
    }.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[section][key] = value
    if getattr(args, "seed", None) is not None and hasattr(args, "epochs"):
        out["train"]["seed"] = args.seed
    return out


def _effective_config(args):
    cfg = config_mod.load(args.config, _overrides(args))
    preset = getattr(args, "net", None)
    if preset is not None:
        net = NET_PRESETS[preset](seed=cfg.net.seed)
        cfg = config_mod.from_dict({**cfg.to_dict(), "net": net.to_dict()})
    return cfg


def _echo_config(cfg, command, extra, beside=None):
    """Print the effective configuration and, when given, write it next to the outputs."""
    payload = {"command": command, **extra, "config": cfg.to_dict()}
    text = json.dumps(payload, indent=2, sort_keys=True, default=str)
    print(text)
    if beside is not None:
        beside = Path(beside)
        target = beside / "config.json" if beside.is_dir() else beside.with_name(beside.name + ".config.json")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text + "\n")
    return payload


def _atomic_write_wav(path, samples, rate):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(suffix=".wav", dir=path.parent)
    os.close(fd)
    try:
        write_wav(tmp, samples, rate)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


# -- simulate ---------------------------------------------------------------


def _bin_value(path, index, cfg):
    wave = read_wav(path)
    _, wave, _ = normalize_pair(None, wave)
    spec = to_model_domain(wave, cfg.stft, cfg.transform)
    f, t = index
    return complex(spec[f, t])


def cmd_simulate(args):
    cfg = _effective_config(args)
    sde = cfg.sde.without_diffusion() if args.zero_diffusion else cfg.sde
    if args.wav is not None:
        y = _bin_value(args.wav, args.bin, cfg)
        x0 = _bin_value(args.clean_wav, args.bin, cfg) if args.clean_wav else args.x0
    else:
        x0, y = args.x0, args.y
    n_export = min(args.paths, args.export_paths)
    _echo_config(cfg, "simulate", {
        "paths": args.paths, "steps": args.steps, "seed": args.seed, "x0": str(x0), "y": str(y),
        "zero_diffusion": args.zero_diffusion, "export_paths": n_export,
    }, args.out)

    # exported paths and the moment ensemble use separate streams of the master seed
    export_rng, moment_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(args.seed).spawn(2))
    start = np.full(n_export, complex(x0))
    traj = euler_maruyama_forward(start, np.full(n_export, complex(y)), sde, args.steps, export_rng)
    paths = [[state[i:i + 1] for state in traj] for i in range(n_export)]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    rows = write_trajectory_csv(args.out, paths)
    print(f"wrote {rows} rows for {n_export} path(s) to {args.out}")

    times = (0.25, 0.5, 1.0)
    moments = euler_maruyama_moments(x0, y, sde, args.steps, args.paths, moment_rng, times)
    print(f"{'t':>5} {'mean (closed)':>24} {'mean (EM)':>24} {'|d|/SE':>8} {'var (closed)':>13} {'var (EM)':>13} {'rel':>8}")
    for t in times:
        m = moments[t]
        mu = complex(kernel_mean(np.array(x0), np.array(y), t, sde))
        var = kernel_variance(t, sde)
        # no standard error without noise or with a single path
        z = math.nan
        if var > 0 and args.paths > 1:
            z = max(abs(m["mean"].real - mu.real) / m["se_real"], abs(m["mean"].imag - mu.imag) / m["se_imag"])
        rel = abs(m["var"] - var) / var if var > 0 else abs(m["var"])
        print(f"{t:5.2f} {mu.real:11.6f}{mu.imag:+11.6f}j {m['mean'].real:11.6f}{m['mean'].imag:+11.6f}j "
              f"{z:8.3f} {var:13.6g} {m['var']:13.6g} {rel:8.4f}")
    return EXIT_OK


# -- calibrate-gamma ----------------------------------------------------------


def cmd_calibrate_gamma(args):
    cfg = _effective_config(args)
    rng = np.random.default_rng(args.seed)
    if args.data is not None:
        pairs = load_dataset(args.data)
        if len(pairs) > args.pairs:
            idx = np.sort(rng.choice(len(pairs), size=args.pairs, replace=False))
            pairs = [pairs[i] for i in idx]
        clean, noisy = [], []
        for p in pairs:
            x0, y, _ = normalize_pair(p.clean, p.noisy)
            clean.append(to_model_domain(x0, cfg.stft, cfg.transform))
            noisy.append(to_model_domain(y, cfg.stft, cfg.transform))
        source = str(args.data)
    else:
        clean, noisy = synthetic_calibration_pairs(args.pairs, (cfg.stft.n_freq, 32), args.synthetic_mse, rng)
        source = f"synthetic (mean |x0-y|^2 = {args.synthetic_mse})"
    _echo_config(cfg, "calibrate-gamma", {"source": source, "pairs": len(clean), "seed": args.seed}, args.out)
    report = calibrate_gamma(clean, noisy, cfg.sde)
    print(f"pairs={report.n_pairs} bins={report.n_bins} gamma={report.gamma}")
    print(f"E|x0 - y|^2           = {report.mean_sq_gap:.10g}")
    print(f"E|mu(1) - y|^2        = {report.mean_sq_residual:.10g}")
    print(f"exp(-2 gamma) E|x0-y|^2 = {report.predicted_residual:.10g} (identity rel. error {report.identity_rel_error:.3g})")
    verdict = "PASS" if report.passed else "FAIL"
    print(f"threshold {report.threshold:g}: {verdict}; minimal gamma on this data = {report.minimal_gamma:.6g}")
    if args.out is not None:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps({
            "gamma": report.gamma, "n_pairs": report.n_pairs, "n_bins": report.n_bins,
            "mean_sq_gap": report.mean_sq_gap, "mean_sq_residual": report.mean_sq_residual,
            "predicted_residual": report.predicted_residual, "identity_rel_error": report.identity_rel_error,
            "threshold": report.threshold, "passed": report.passed, "minimal_gamma": report.minimal_gamma,
        }, indent=2) + "\n")
    if args.strict and not report.passed:
        return EXIT_FAIL
    return EXIT_OK


# -- train ----------------------------------------------------------------------


def cmd_train(args):
    from .dataio import ToyGaussianDataset
    from .pipeline import SpectrogramPairDataset

    cfg = _effective_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.toy:
        dataset = ToyGaussianDataset(args.toy_items, tuple(args.toy_shape))
        source = f"toy gaussian {args.toy_items}x{tuple(args.toy_shape)}"
    else:
        pairs = load_dataset(args.data)
        dataset = SpectrogramPairDataset(pairs, cfg.stft, cfg.transform, args.frames)
        source = str(args.data)
    _echo_config(cfg, "train", {"data": source, "resume": args.resume, "max_steps": args.max_steps}, out)
    result = train(dataset, cfg.net, cfg.train, cfg.sde, out_dir=out, resume=args.resume, max_steps=args.max_steps)
    if result.losses:
        print(f"steps={len(result.losses)} epochs_done={result.epochs_done} "
              f"first_loss={result.losses[0]:.6g} last_loss={result.losses[-1]:.6g}")
    else:
        print(f"no updates; epochs_done={result.epochs_done}")
    print(f"checkpoint: {result.checkpoint}")
    if args.toy:
        from .oracle import toy_score_error_ratio
        from .trainer import ema_model

        ratio = toy_score_error_ratio(ema_model(result), cfg.sde, tuple(args.toy_shape))
        print(f"toy score error (EMA weights) / zero-score baseline = {ratio:.4g} (criterion < 0.1)")
    return EXIT_OK


# -- enhance ---------------------------------------------------------------------


def _enhance_jobs(inp, out):
    inp, out = Path(inp), Path(out)
    if inp.is_dir():
        files = sorted(inp.glob("*.wav"))
        if not files:
            raise DatasetError(f"no .wav files in {inp}")
        return [(f, out / f.name) for f in files]
    return [(inp, out)]


def cmd_enhance(args):
    cfg = _effective_config(args)
    if args.oracle == "delta-prior":
        if len(args.paths) != 2:
            print("usage error: enhance --oracle delta-prior takes IN OUT (no checkpoint)", file=sys.stderr)
            return EXIT_USAGE
        ckpt_path = None
        inp, out = args.paths
        score = DeltaPriorScore(cfg.sde)
    else:
        if len(args.paths) != 3:
            print("usage error: enhance takes CHECKPOINT IN OUT", file=sys.stderr)
            return EXIT_USAGE
        ckpt_path, inp, out = args.paths
        ckpt = load_checkpoint(ckpt_path)
        score = NetScore(ckpt.build("ema"))
        net = ckpt.config.to_dict()
        cfg = config_mod.from_dict({**cfg.to_dict(), "net": net})
    jobs = _enhance_jobs(inp, out)
    beside = Path(out) if Path(inp).is_dir() else Path(out)
    if Path(inp).is_dir():
        beside.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, "enhance", {
        "checkpoint": ckpt_path, "oracle": args.oracle, "input": str(inp), "output": str(out),
        "blend": args.blend, "seed": args.seed, "utterances": len(jobs),
    }, beside)

    def run(item):
        index, (src, dst) = item
        y, rate = read_wav(src, return_rate=True)
        stats = SamplerStats()
        x = enhance_waveform(
            y, score, cfg.sde, cfg.sampler, cfg.stft, cfg.transform,
            rng=utterance_rng(args.seed, index), blend=args.blend, stats=stats,
        )
        _atomic_write_wav(dst, x, rate)
        return src, dst, stats

    failures = 0
    workers = max(1, args.jobs)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run, item) for item in enumerate(jobs)]
        for (src, dst), fut in zip(jobs, futures):
            try:
                _, _, stats = fut.result()
                skips = f" ({stats.corrector_skips} corrector skips)" if stats.corrector_skips else ""
                print(f"enhanced {src} -> {dst}{skips}")
            except DivergenceError as exc:
                failures += 1
                print(f"error: {src}: {exc} {json.dumps(exc.as_record())}; no output written", file=sys.stderr)
            except (FormatError, NormalizationError) as exc:
                failures += 1
                print(f"error: {src}: {exc}", file=sys.stderr)
    return EXIT_FAIL if failures else EXIT_OK


# -- evaluate ---------------------------------------------------------------------


def cmd_evaluate(args):
    cfg = _effective_config(args)
    est_dir = Path(args.est_dir)
    triples = load_pairs(args.clean_dir, args.noisy_dir)
    est_names = {p.name for p in est_dir.glob("*.wav")} if est_dir.is_dir() else set()
    matched = []
    for pair in triples:
        name = pair.id + ".wav"
        if name in est_names:
            matched.append(pair)
        else:
            logger.warning("no estimate for %s in %s", name, est_dir)
            print(f"unmatched: {name} has no estimate", file=sys.stderr)
    for name in sorted(est_names - {p.id + ".wav" for p in triples}):
        print(f"unmatched: estimate {name} has no clean/noisy pair", file=sys.stderr)
    if not matched:
        raise DatasetError(f"no estimates in {est_dir} match the clean/noisy pairs")
    _echo_config(cfg, "evaluate", {"est_dir": str(est_dir), "clean_dir": str(args.clean_dir),
                                   "noisy_dir": str(args.noisy_dir), "utterances": len(matched)}, args.out)

    def score(pair):
        est = read_wav(est_dir / (pair.id + ".wav"))
        if est.size != pair.clean.size:
            raise DatasetError(f"{pair.id}: estimate has {est.size} samples, clean has {pair.clean.size}")
        return si_metrics(est, pair.clean, pair.noisy - pair.clean)

    report = EvalReport()
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        for pair, values in zip(matched, pool.map(score, matched)):
            report.add(pair.id, values)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(args.out)
    for name, s in report.summary().items():
        print(f"{name}: mean {s.mean:.4f} dB  ci95 {s.ci95:.4f}  finite {s.n_finite}  infinite {s.n_infinite}")
    print(f"wrote {args.out}")
    return EXIT_OK


# -- oracle-check -------------------------------------------------------------------


def cmd_oracle_check(args):
    cfg = _effective_config(args)
    names = [c for c in (args.only or CHECKS) if c not in (args.skip or [])]
    variance_fn = kernel_variance
    if args.mutate_variance is not None:
        factor = args.mutate_variance

        def mutated(t, params):
            return factor * kernel_variance(t, params)

        variance_fn = mutated

    grad_net = NET_PRESETS[args.grad_net]()
    _echo_config(cfg, "oracle-check", {"checks": names, "seeds": args.seeds, "grad_net": args.grad_net,
                                       "mutate_variance": args.mutate_variance}, args.out)
    all_ok = True
    rows = []
    for seed in args.seeds:
        print(f"-- seed {seed}")
        results = run_checks(
            names, seed=seed, params=cfg.sde, sampler_config=cfg.sampler, net_config=grad_net,
            variance_fn=variance_fn, kernel_paths=args.kernel_paths, kernel_steps=args.kernel_steps,
            sampler_runs=args.sampler_runs,
        )
        for r in results:
            print(r.line())
            rows.append({"seed": seed, "name": r.name, "passed": bool(r.passed), "value": float(r.value),
                         "tolerance": float(r.tolerance), "detail": r.detail})
            all_ok &= r.passed
    n_fail = sum(not r["passed"] for r in rows)
    print(f"{len(rows) - n_fail}/{len(rows)} checks passed")
    if args.out is not None:
        Path(args.out).write_text(json.dumps(rows, indent=2) + "\n")
    return EXIT_OK if all_ok else EXIT_FAIL


# -- parser ---------------------------------------------------------------------------


def _bin_index(text):
    try:
        f, t = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected FREQ,FRAME") from None
    return f, t


def build_parser():
    parser = argparse.ArgumentParser(
        prog="scoreenhance",
        description="Score-based speech enhancement in the complex STFT domain.",
        epilog="Seeds: --seed is a master seed. Utterance i uses numpy default_rng([seed, i]); "
               "training item i of epoch e uses default_rng([seed, e, i]).",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=0):
        p.add_argument("--config", help="TOML or JSON run config (sections sde, net, train, sampler, stft, transform)")
        p.add_argument("--seed", type=int, default=seed, help="master seed")
        p.add_argument("--gamma", type=float, help="override sde.gamma")
        p.add_argument("--sigma-min", dest="sigma_min", type=float, help="override sde.sigma_min")
        p.add_argument("--sigma-max", dest="sigma_max", type=float, help="override sde.sigma_max")

    p = sub.add_parser("simulate", help="forward-SDE trajectories and moment comparison")
    common(p)
    p.add_argument("--paths", type=int, default=10_000, help="Monte-Carlo paths for the moment comparison")
    p.add_argument("--steps", type=int, default=1_000, help="Euler-Maruyama steps on [0, 1]")
    p.add_argument("--out", required=True, help="trajectory CSV")
    p.add_argument("--export-paths", type=int, default=16,
                   help="paths written to the CSV (the first min(paths, this) of a separate stream)")
    p.add_argument("--x0", type=complex, default=1 + 0j, help="scalar clean value")
    p.add_argument("--y", type=complex, default=0j, help="scalar noisy value")
    p.add_argument("--wav", help="take y from a bin of this (noisy) file's transformed spectrogram")
    p.add_argument("--clean-wav", help="take x0 from the same bin of this file")
    p.add_argument("--bin", type=_bin_index, default=(64, 10), help="FREQ,FRAME bin for --wav")
    p.add_argument("--zero-diffusion", action="store_true", help="switch the noise off (g = 0)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate-gamma", help="check E|mu(1) - y|^2 against the 1e-3 threshold")
    common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset root with clean/ and noisy/")
    src.add_argument("--synthetic-mse", type=float, help="use synthetic pairs with this mean |x0 - y|^2")
    p.add_argument("--pairs", type=int, default=256)
    p.add_argument("--out", help="write the report as JSON")
    p.add_argument("--strict", action="store_true", help="exit nonzero when the threshold is not met")
    p.set_defaults(func=cmd_calibrate_gamma)

    p = sub.add_parser("train", help="denoising score matching training")
    common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset root with clean/ and noisy/")
    src.add_argument("--toy", action="store_true", help="per-bin Gaussian toy task")
    p.add_argument("--toy-items", type=int, default=256)
    p.add_argument("--toy-shape", type=int, nargs=2, default=(8, 8))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--net", choices=sorted(NET_PRESETS), help="network preset (overrides [net])")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--frames", type=int, default=256, help="crop length in STFT frames")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--max-steps", type=int, help="stop after this many updates")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance a WAV file or a directory of them")
    common(p)
    p.add_argument("paths", nargs="+", metavar="PATH", help="CHECKPOINT IN OUT, or IN OUT with --oracle")
    p.add_argument("--blend", type=float, default=1.0, help="output w*x_hat + (1-w)*y")
    p.add_argument("--oracle", choices=["delta-prior"], help="use an analytic score instead of a checkpoint")
    p.add_argument("--steps", dest="steps_reverse", type=int, help="override sampler.n_steps")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="SI-SDR / SI-SIR / SI-SAR report")
    common(p)
    p.add_argument("est_dir")
    p.add_argument("clean_dir")
    p.add_argument("noisy_dir")
    p.add_argument("--out", required=True, help="report CSV")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle-check", help="run analytic, Monte-Carlo and gradient self-checks")
    common(p)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--only", nargs="+", choices=CHECKS)
    p.add_argument("--skip", nargs="+", choices=CHECKS)
    p.add_argument("--grad-net", choices=sorted(NET_PRESETS), default="mini")
    p.add_argument("--kernel-paths", type=int, default=10_000)
    p.add_argument("--kernel-steps", type=int, default=1_000)
    p.add_argument("--sampler-runs", type=int, default=10_000)
    p.add_argument("--mutate-variance", type=float,
                   help="testing hook: scale the closed-form kernel variance by this factor")
    p.add_argument("--out", help="write results as JSON")
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except config_mod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FormatError, NormalizationError, DivergenceError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
