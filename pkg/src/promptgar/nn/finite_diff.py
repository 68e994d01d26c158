"""Central-difference gradient oracle, independent of the tape."""

from __future__ import annotations

from typing import Callable

import numpy as np


class NondeterministicError(RuntimeError):
    """The function under test returned different values for the same input."""


def _scalar(v) -> float:
    data = getattr(v, "data", v)
    arr = np.asarray(data, dtype=np.float64)
    if arr.size != 1:
        raise ValueError(f"fd_gradient: function must return a scalar, got shape {arr.shape}")
    return float(arr.reshape(()))


def fd_gradient(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    step: float = 1e-5,
    indices=None,
) -> np.ndarray:
    """Estimate df/dx by (f(x+h) - f(x-h)) / 2h, one element at a time.

    ``indices`` restricts the estimate to a subset of flat positions; the rest
    of the returned array is NaN.
    """
    if step <= 0:
        raise ValueError("fd_gradient: step must be positive")
    x = np.array(x, dtype=np.float64)
    first, second = _scalar(f(x.copy())), _scalar(f(x.copy()))
    if first != second:
        raise NondeterministicError(f"fd_gradient: repeated evaluation gave {first!r} then {second!r}")
    flat = x.reshape(-1)
    grad = np.full(flat.shape, np.nan) if indices is not None else np.empty(flat.shape)
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + step
        up = _scalar(f(x))
        flat[i] = orig - step
        down = _scalar(f(x))
        flat[i] = orig
        grad[i] = (up - down) / (2 * step)
    return grad.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3,
                   scale: float | None = None) -> float:
    """Largest elementwise relative error.

    Each element is scaled by max(|a|, |n|, floor * ref), where ``ref`` is the
    largest magnitude in either array unless ``scale`` supplies one. Entries
    that are tiny relative to the reference are judged on the reference scale.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    keep = ~np.isnan(n)
    a, n = a[keep], n[keep]
    if a.size == 0:
        return 0.0
    ref = max(float(np.abs(n).max()), float(np.abs(a).max())) if scale is None else float(scale)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), max(ref * floor, 1e-300))
    return float((np.abs(a - n) / denom).max())
