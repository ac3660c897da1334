import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scoreenhance.dataio import write_wav

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tools"))
sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

RATE = 16000


def harmonic_signal(n, f0, rng):
    """Voiced-speech stand-in: decaying harmonics under a slow envelope."""
    t = np.arange(n) / RATE
    s = sum(np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k for k in range(1, 15))
    s = s * (0.5 + 0.5 * np.sin(2 * np.pi * 3 * t)) ** 2
    return 0.3 * s / np.max(np.abs(s))


@pytest.fixture
def wav_dataset(tmp_path):
    """``root/clean`` and ``root/noisy`` with three float32 pairs of different lengths."""
    rng = np.random.default_rng(0)
    root = tmp_path / "data"
    (root / "clean").mkdir(parents=True)
    (root / "noisy").mkdir()
    for i in range(3):
        n = RATE // 2 + 700 * i
        s = harmonic_signal(n, 120 + 30 * i, rng)
        write_wav(root / "clean" / f"u{i}.wav", s, RATE)
        write_wav(root / "noisy" / f"u{i}.wav", s + 0.05 * rng.standard_normal(n), RATE)
    return root


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, summary):
    """Store and print the one-line verdict for an acceptance criterion."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {summary}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
