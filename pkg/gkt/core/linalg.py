"""Small direct linear-algebra kernels (not differentiable)."""
from __future__ import annotations

import logging
from typing import Tuple

import numpy as np
import scipy.linalg

from gkt.errors import DimensionError, NotSPDError, NumericalError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
MAX_SVD_EXTENT = 64


def as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class SPDSolver:
    """Cholesky factorization reused across right-hand sides."""

    def __init__(self, matrix) -> None:
        m = as_array(matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"SPD solve needs a square matrix, got {m.shape}")
        scale = max(1.0, float(np.max(np.abs(m), initial=0.0)))
        if not np.allclose(m, m.T, rtol=0.0, atol=SYMMETRY_TOL * scale):
            raise NotSPDError("matrix is not symmetric")
        try:
            self._factor = scipy.linalg.cho_factor(m, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NotSPDError(f"Cholesky failed: {exc}") from exc
        self.n = m.shape[0]

    def solve(self, rhs) -> np.ndarray:
        b = as_array(rhs)
        if b.shape[0] != self.n:
            raise DimensionError(f"right-hand side has {b.shape[0]} rows, matrix has {self.n}")
        return scipy.linalg.cho_solve(self._factor, b)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.n))


def solve_spd(matrix, rhs) -> np.ndarray:
    return SPDSolver(matrix).solve(rhs)


def svd_small(b) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD of an r x d matrix with r <= d <= 64; sigma sorted descending."""
    b = as_array(b)
    if b.ndim != 2:
        raise DimensionError(f"svd_small needs a matrix, got {b.shape}")
    r, d = b.shape
    if not r <= d <= MAX_SVD_EXTENT:
        raise DimensionError(f"svd_small supports r <= d <= {MAX_SVD_EXTENT}, got {b.shape}")
    try:
        u, sigma, vt = np.linalg.svd(b, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    return u, sigma, vt


__all__ = ["SPDSolver", "solve_spd", "svd_small", "as_array"]
