"""Input validation helpers shared by the estimators and pure functions."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_array


def check_rate(rate) -> float:
    if not isinstance(rate, numbers.Real) or not 0.0 < float(rate) <= 1.0:
        raise ValueError(f"rate must lie in (0, 1], got {rate!r}")
    return float(rate)


def check_k(k) -> int:
    if not isinstance(k, numbers.Integral) or k < 1 or k > 255:
        raise ValueError(f"grid size k must be an integer in [1, 255], got {k!r}")
    return int(k)


def check_unit_interval(value, name: str, *, open_low: bool = False) -> float:
    value = float(value)
    low_ok = value > 0.0 if open_low else value >= 0.0
    if not (low_ok and value <= 1.0):
        raise ValueError(f"{name} must lie in {'(' if open_low else '['}0, 1], got {value!r}")
    return value


def check_cell_vector(values, n_cells: int | None = None, *, name: str = "map") -> np.ndarray:
    """Return `values` as a finite, non-negative 1-D float array."""
    arr = check_array(
        np.asarray(values, dtype=float).reshape(1, -1),
        ensure_2d=True,
        dtype=np.float64,
        copy=True,
    ).ravel()
    if n_cells is not None and arr.size != n_cells:
        raise ValueError(f"{name} has {arr.size} entries, expected {n_cells}")
    if np.any(arr < 0):
        raise ValueError(f"{name} contains negative entries")
    return arr


def check_gray_frame(pixels) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale pixel array, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.integer) and arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("pixel values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr
