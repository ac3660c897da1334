import csv
import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest
import torch

from conftest import RATE, harmonic_signal
from scoreenhance.cli import main
from scoreenhance.dataio import read_wav, write_wav
from scoreenhance.metrics import si_sdr
from scoreenhance.scorenet import NetConfig, ScoreNet, save_checkpoint

FAST = ["--steps", "4"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def tiny_ckpt(tmp_path):
    path = tmp_path / "ckpt" / "last.npz"
    assert run("train", "--toy", "--toy-items", 4, "--toy-shape", 4, 4, "--net", "tiny",
               "--epochs", 0, "--out", path.parent) == 0
    return path


@pytest.fixture
def noisy_wav(tmp_path):
    rng = np.random.default_rng(0)
    s = harmonic_signal(4000, 140, rng)
    path = tmp_path / "noisy.wav"
    write_wav(path, s + 0.02 * rng.standard_normal(s.size), RATE)
    return path


def test_all_subcommands_in_help(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for name in ("simulate", "calibrate-gamma", "train", "enhance", "evaluate", "oracle-check"):
        assert name in text
    assert "default_rng([seed, i])" in text


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "scoreenhance", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "oracle-check" in out.stdout


class TestSimulate:
    def test_moments_and_echo(self, tmp_path, capsys):
        out = tmp_path / "traj.csv"
        assert run("simulate", "--paths", 2000, "--steps", 200, "--out", out, "--export-paths", 2) == 0
        text = capsys.readouterr().out
        echo = json.loads((tmp_path / "traj.csv.config.json").read_text())
        assert echo["command"] == "simulate" and echo["config"]["sde"]["gamma"] == 1.5
        assert '"command": "simulate"' in text
        rows = list(csv.reader(out.open()))
        assert len(rows) == 1 + 2 * 201 * 2
        # moment table: one row per comparison time, |d|/SE column finite
        table = [line.split() for line in text.splitlines() if line.strip().startswith(("0.25", "0.50", "1.00"))]
        assert len(table) == 3

    def test_single_path_reproducible(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            assert run("simulate", "--paths", 1, "--steps", 50, "--seed", 9, "--out", path) == 0
        assert a.read_bytes() == b.read_bytes()
        run("simulate", "--paths", 1, "--steps", 50, "--seed", 10, "--out", b)
        assert a.read_bytes() != b.read_bytes()

    def test_zero_diffusion_monotone(self, tmp_path):
        out = tmp_path / "z.csv"
        assert run("simulate", "--paths", 1, "--steps", 100, "--zero-diffusion", "--x0", "1+0j", "--y", "0",
                   "--out", out) == 0
        re = [float(r[4]) for r in list(csv.reader(out.open()))[1:] if r[3] == "0"]
        assert re[0] == 1.0 and np.all(np.diff(re) < 0) and re[-1] > 0

    def test_from_wav_bin(self, tmp_path, noisy_wav):
        assert run("simulate", "--paths", 10, "--steps", 10, "--wav", noisy_wav, "--bin", "5,3",
                   "--out", tmp_path / "w.csv") == 0


class TestCalibrate:
    def test_pass_and_fail_cases(self, tmp_path, capsys):
        out = tmp_path / "cal.json"
        assert run("calibrate-gamma", "--synthetic-mse", 0.01, "--pairs", 8, "--out", out) == 0
        rep = json.loads(out.read_text())
        assert rep["passed"] and rep["mean_sq_residual"] == pytest.approx(0.01 * math.exp(-3), rel=1e-12)
        assert rep["identity_rel_error"] <= 1e-12
        assert run("calibrate-gamma", "--synthetic-mse", 0.01, "--pairs", 8, "--gamma", 0.5, "--out", out) == 0
        rep = json.loads(out.read_text())
        assert not rep["passed"] and rep["mean_sq_residual"] == pytest.approx(0.01 * math.exp(-1), rel=1e-12)
        assert run("calibrate-gamma", "--synthetic-mse", 0.01, "--pairs", 8, "--gamma", 0.5, "--strict") == 1
        assert "FAIL" in capsys.readouterr().out

    def test_on_dataset(self, wav_dataset, capsys):
        assert run("calibrate-gamma", "--data", wav_dataset) == 0
        assert "pairs=3" in capsys.readouterr().out


class TestTrain:
    def test_epochs_zero(self, tiny_ckpt):
        files = sorted(p.name for p in tiny_ckpt.parent.iterdir())
        assert files == ["config.json", "last.npz", "train_log.csv"]

    def test_resume_next_step_loss(self, tmp_path, capsys):
        common = ["--toy", "--toy-items", 8, "--toy-shape", 4, 4, "--net", "tiny", "--batch-size", 4, "--lr", 1e-3]
        assert run("train", *common, "--epochs", 2, "--out", tmp_path / "a") == 0
        assert run("train", *common, "--epochs", 1, "--out", tmp_path / "b") == 0
        assert run("train", *common, "--epochs", 2, "--out", tmp_path / "c", "--resume", tmp_path / "b" / "last.npz") == 0
        a = list(csv.reader((tmp_path / "a" / "train_log.csv").open()))
        c = list(csv.reader((tmp_path / "c" / "train_log.csv").open()))
        assert a[3][3] == c[1][3] and c[1][0] == "3"
        assert "toy score error" in capsys.readouterr().out

    def test_on_dataset(self, tmp_path, wav_dataset):
        assert run("train", "--data", wav_dataset, "--net", "tiny", "--frames", 8, "--batch-size", 2,
                   "--max-steps", 1, "--out", tmp_path / "t") == 0
        assert (tmp_path / "t" / "best.npz").exists()

    def test_bad_config_exit_code(self, tmp_path, capsys):
        (tmp_path / "bad.toml").write_text("[train]\nbogus = 1\n")
        assert run("train", "--toy", "--config", tmp_path / "bad.toml", "--out", tmp_path / "o") == 2
        assert "bogus" in capsys.readouterr().err


class TestEnhance:
    def test_blend_zero_is_input(self, tmp_path, tiny_ckpt, noisy_wav):
        out = tmp_path / "out.wav"
        assert run("enhance", tiny_ckpt, noisy_wav, out, "--blend", 0, *FAST) == 0
        x, y = read_wav(out), read_wav(noisy_wav)
        assert x.size == y.size and np.max(np.abs(x - y)) < 1e-6
        assert (tmp_path / "out.wav.config.json").exists()

    def test_bit_identical_with_fixed_seed(self, tmp_path, tiny_ckpt, noisy_wav):
        a, b = tmp_path / "a.wav", tmp_path / "b.wav"
        assert run("enhance", tiny_ckpt, noisy_wav, a, "--seed", 3, *FAST) == 0
        assert run("enhance", tiny_ckpt, noisy_wav, b, "--seed", 3, *FAST) == 0
        assert a.read_bytes() == b.read_bytes()
        assert read_wav(a).size == read_wav(noisy_wav).size

    def test_delta_prior_oracle_passes_clean_through(self, tmp_path):
        s = harmonic_signal(8000, 120, np.random.default_rng(1))
        write_wav(tmp_path / "clean.wav", s, RATE)
        assert run("enhance", tmp_path / "clean.wav", tmp_path / "o.wav", "--oracle", "delta-prior") == 0
        assert si_sdr(read_wav(tmp_path / "o.wav"), read_wav(tmp_path / "clean.wav")) > 30

    def test_directory_and_jobs(self, tmp_path, tiny_ckpt, wav_dataset):
        out = tmp_path / "enh"
        assert run("enhance", tiny_ckpt, wav_dataset / "noisy", out, "--jobs", 2, *FAST) == 0
        assert sorted(p.name for p in out.glob("*.wav")) == ["u0.wav", "u1.wav", "u2.wav"]
        assert (out / "config.json").exists()

    def test_divergence_writes_nothing(self, tmp_path, noisy_wav, capsys):
        model = ScoreNet(NetConfig.tiny())
        with torch.no_grad():
            model.head_bias_re.fill_(float("inf"))
        ema = {n: p.detach() for n, p in model.named_parameters()}
        save_checkpoint(tmp_path / "bad.npz", model, ema)
        out = tmp_path / "never.wav"
        assert run("enhance", tmp_path / "bad.npz", noisy_wav, out, *FAST) == 1
        assert not out.exists() and not list(tmp_path.glob("tmp*.wav"))
        assert "no output written" in capsys.readouterr().err

    def test_wrong_arity(self, noisy_wav, tmp_path):
        assert run("enhance", noisy_wav, tmp_path / "x.wav") == 2
        assert run("enhance", "a", noisy_wav, tmp_path / "x.wav", "--oracle", "delta-prior") == 2

    def test_missing_checkpoint(self, noisy_wav, tmp_path):
        assert run("enhance", tmp_path / "nope.npz", noisy_wav, tmp_path / "x.wav") == 1


def orthogonal_triples(root, n_utts=3, length=4096):
    """Clean/noisy pairs with noise orthogonal to speech and energy ratio 10."""
    rng = np.random.default_rng(5)
    for d in ("clean", "noisy"):
        (root / d).mkdir(parents=True)
    for i in range(n_utts):
        h1 = rng.choice([-1.0, 1.0], length)
        c = np.repeat([1.0, -1.0], length // 2)[rng.permutation(length)]
        s = 0.25 * h1
        noise = (0.25 / math.sqrt(10)) * h1 * c
        write_wav(root / "clean" / f"o{i}.wav", s, RATE)
        write_wav(root / "noisy" / f"o{i}.wav", s + noise, RATE)


class TestEvaluate:
    def test_clean_copies_are_infinite(self, tmp_path, wav_dataset):
        out = tmp_path / "r.csv"
        assert run("evaluate", wav_dataset / "clean", wav_dataset / "clean", wav_dataset / "noisy", "--out", out) == 0
        rows = list(csv.reader(out.open()))
        assert all(r[1] == "inf" for r in rows[1:4])
        assert rows[-1][0] == "n_infinite" and rows[-1][1] == "3"

    def test_noisy_copies_give_mixture_snr(self, tmp_path):
        orthogonal_triples(tmp_path / "o")
        out = tmp_path / "r.csv"
        assert run("evaluate", tmp_path / "o" / "noisy", tmp_path / "o" / "clean", tmp_path / "o" / "noisy",
                   "--out", out, "--jobs", 2) == 0
        rows = list(csv.reader(out.open()))
        for r in rows[1:4]:
            assert abs(float(r[1]) - 10.0) < 1e-5 and abs(float(r[2]) - 10.0) < 1e-5

    def test_unmatched_reported(self, tmp_path, wav_dataset, capsys):
        est = tmp_path / "est"
        shutil.copytree(wav_dataset / "clean", est)
        (est / "u1.wav").unlink()
        write_wav(est / "extra.wav", np.zeros(10), RATE)
        assert run("evaluate", est, wav_dataset / "clean", wav_dataset / "noisy", "--out", tmp_path / "r.csv") == 0
        err = capsys.readouterr().err
        assert "u1.wav" in err and "extra.wav" in err

    def test_empty_intersection_fails(self, tmp_path, wav_dataset):
        (tmp_path / "empty").mkdir()
        assert run("evaluate", tmp_path / "empty", wav_dataset / "clean", wav_dataset / "noisy",
                   "--out", tmp_path / "r.csv") == 1


class TestOracleCheck:
    def test_quick_subset_passes(self, tmp_path):
        out = tmp_path / "o.json"
        assert run("oracle-check", "--only", "closed-form", "calibration", "dsp", "metrics", "kernel",
                   "--kernel-paths", 4000, "--kernel-steps", 200, "--out", out) == 0
        rows = json.loads(out.read_text())
        assert rows and all(r["passed"] for r in rows)

    def test_mutated_variance_fails_kernel_check(self, capsys):
        assert run("oracle-check", "--only", "kernel", "--kernel-paths", 4000, "--kernel-steps", 200,
                   "--mutate-variance", 1.2) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_gradient_check_on_tiny(self):
        assert run("oracle-check", "--only", "gradients", "--grad-net", "tiny") == 0
