import numpy as np

from .errors import DimensionError, DomainError


def as_grid(x, name="x"):
    """Return ``x`` as a complex128 array with at least two dimensions."""
    arr = np.asarray(x)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    arr = arr.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a, b, names=("x", "y")):
    if np.shape(a) != np.shape(b):
        raise DimensionError(
            f"{names[0]} has shape {np.shape(a)} but {names[1]} has shape {np.shape(b)}"
        )


def check_unit_time(t, *, allow_zero=True, name="t"):
    t = float(t)
    lo_ok = t >= 0.0 if allow_zero else t > 0.0
    if not (lo_ok and t <= 1.0):
        bound = "[0, 1]" if allow_zero else "(0, 1]"
        raise DomainError(f"{name}={t} outside {bound}")
    return t


def check_waveform(x, name="waveform"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite samples")
    return arr
