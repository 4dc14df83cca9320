"""Align-corners linear interpolation matrices."""
from __future__ import annotations

import numpy as np

from gkt.errors import DimensionError


def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix mapping nodal values on one uniform grid of [0, 1]
    (both endpoints included) to another."""
    if n_in < 2 or n_out < 2:
        raise DimensionError(f"interpolation needs at least 2 points, got {n_in} -> {n_out}")
    if n_in == n_out:
        return np.eye(n_in)
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    left = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - left
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    mat[rows, left] = 1.0 - frac
    mat[rows, left + 1] += frac
    return mat


def resize_array(field: np.ndarray, out_shape) -> np.ndarray:
    """Separable linear resize of a 1D or 2D numpy array."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 1:
        return interpolation_matrix(field.shape[0], out_shape[0]) @ field
    if field.ndim == 2:
        rows = interpolation_matrix(field.shape[0], out_shape[0])
        cols = interpolation_matrix(field.shape[1], out_shape[1])
        return rows @ field @ cols.T
    raise DimensionError(f"resize supports 1D or 2D fields, got {field.shape}")


__all__ = ["interpolation_matrix", "resize_array"]
