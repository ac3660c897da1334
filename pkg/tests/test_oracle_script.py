"""The frozen constants must match a fresh run of the mpmath oracle script."""
import subprocess
import sys
from pathlib import Path

import pytest

import _frozen as ref
from scoreenhance.oracle import REFERENCE

SCRIPT = Path(__file__).resolve().parents[1] / "tools" / "oracle_values.py"


@pytest.fixture(scope="module")
def script_values():
    out = subprocess.run([sys.executable, str(SCRIPT)], capture_output=True, text=True, check=True).stdout
    namespace = {}
    exec(out, namespace)
    return {k: v for k, v in namespace.items() if k.isupper()}


def test_script_reproduces_frozen_module(script_values):
    frozen = {k: getattr(ref, k) for k in dir(ref) if k.isupper()}
    assert set(script_values) == set(frozen)
    for name, value in frozen.items():
        if isinstance(value, dict):
            assert script_values[name] == value
        else:
            assert script_values[name] == pytest.approx(value, rel=1e-15), name


REFERENCE_NAMES = {
    "g(0)": "G0",
    "g(1)": "G1",
    "sigma(1)^2": "VAR1",
    "sigma(0.5)^2": "VAR_HALF",
    "sigma(0.25)^2": "VAR_QUARTER",
    "sigma(0.03)^2": "VAR_TEPS",
    "exp(-gamma)": "EXP_NEG_GAMMA",
}


def test_package_reference_table(script_values):
    assert set(REFERENCE) == set(REFERENCE_NAMES)
    for key, value in REFERENCE.items():
        assert value == pytest.approx(script_values[REFERENCE_NAMES[key]], rel=1e-15), key
