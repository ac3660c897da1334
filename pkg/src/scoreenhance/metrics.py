"""Scale-invariant SDR / SIR / SAR and aggregate reporting.

The estimate is split by orthogonal projection into a part along the clean
signal ``s``, a part in ``span{s, n}`` orthogonal to ``s`` (interference)
and a residual orthogonal to both (artifacts). All arithmetic is float64.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_same_shape
from .errors import DomainError

_DEPENDENCE_RTOL = 1e-12
# a residual whose amplitude is below this fraction of the estimate's is
# projection round-off, so its ratio is reported as +inf (cap near 260 dB)
_ROUNDOFF_RTOL = 1e-13


@dataclass(frozen=True)
class Decomposition:
    target: np.ndarray
    interference: np.ndarray
    artifacts: np.ndarray
    degenerate_noise: bool = False


def _as_signal(x):
    return np.asarray(x, dtype=np.float64).ravel()


def si_decompose(est, s, n) -> Decomposition:
    est = _as_signal(est)
    s = _as_signal(s)
    n = _as_signal(n)
    check_same_shape(est, s, ("est", "s"))
    check_same_shape(s, n, ("s", "n"))
    s_energy = float(np.dot(s, s))
    if s_energy == 0.0:
        raise DomainError("clean reference is identically zero")
    target = (np.dot(est, s) / s_energy) * s

    # Gram-Schmidt: component of n orthogonal to s
    n_perp = n - (np.dot(n, s) / s_energy) * s
    n_perp_energy = float(np.dot(n_perp, n_perp))
    degenerate = n_perp_energy <= _DEPENDENCE_RTOL * max(float(np.dot(n, n)), s_energy)
    if degenerate:
        warnings.warn("noise lies in span{s}; projecting onto span{s} only", RuntimeWarning)
        interference = np.zeros_like(est)
    else:
        interference = (np.dot(est, n_perp) / n_perp_energy) * n_perp
    artifacts = est - target - interference
    return Decomposition(target, interference, artifacts, degenerate)


def _ratio_db(num, den, scale_energy=0.0):
    num = float(np.dot(num, num))
    den = float(np.dot(den, den))
    if den <= _ROUNDOFF_RTOL**2 * scale_energy:
        return math.inf
    if num == 0.0:
        return -math.inf
    return 10.0 * math.log10(num / den)


def si_sdr(est, s) -> float:
    est = _as_signal(est)
    s = _as_signal(s)
    check_same_shape(est, s, ("est", "s"))
    s_energy = float(np.dot(s, s))
    if s_energy == 0.0:
        raise DomainError("clean reference is identically zero")
    target = (np.dot(est, s) / s_energy) * s
    return _ratio_db(target, est - target, float(np.dot(est, est)))


def si_sir(est, s, n) -> float:
    return si_metrics(est, s, n)["si_sir"]


def si_sar(est, s, n) -> float:
    return si_metrics(est, s, n)["si_sar"]


def si_metrics(est, s, n) -> dict:
    """All three metrics from a single decomposition."""
    d = si_decompose(est, s, n)
    energy = float(np.dot(_as_signal(est), _as_signal(est)))
    return {
        "si_sdr": _ratio_db(d.target, d.interference + d.artifacts, energy),
        "si_sir": _ratio_db(d.target, d.interference, energy),
        "si_sar": _ratio_db(d.target + d.interference, d.artifacts, energy),
    }


@dataclass
class MetricSummary:
    mean: float
    ci95: float
    n_finite: int
    n_infinite: int


@dataclass
class EvalReport:
    ids: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    METRICS = ("si_sdr", "si_sir", "si_sar")

    def add(self, utterance_id, values: dict):
        self.ids.append(utterance_id)
        self.rows.append({k: float(values[k]) for k in self.METRICS})

    def summary(self) -> dict:
        out = {}
        for name in self.METRICS:
            vals = np.array([r[name] for r in self.rows], dtype=np.float64)
            finite = vals[np.isfinite(vals)]
            n_inf = int(vals.size - finite.size)
            if finite.size == 0:
                out[name] = MetricSummary(math.nan, math.nan, 0, n_inf)
                continue
            mean = float(finite.mean())
            if finite.size > 1:
                ci = 1.96 * float(finite.std(ddof=1)) / math.sqrt(finite.size)
            else:
                ci = math.nan
            out[name] = MetricSummary(mean, ci, int(finite.size), n_inf)
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("utterance_id",) + self.METRICS)
            for uid, row in zip(self.ids, self.rows):
                writer.writerow((uid,) + tuple(repr(row[k]) for k in self.METRICS))
            summary = self.summary()
            writer.writerow(("mean",) + tuple(repr(summary[k].mean) for k in self.METRICS))
            writer.writerow(("ci95",) + tuple(repr(summary[k].ci95) for k in self.METRICS))
            writer.writerow(("n_infinite",) + tuple(summary[k].n_infinite for k in self.METRICS))
