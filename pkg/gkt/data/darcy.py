"""Steady Darcy flow -div(a grad u) = f on the unit square, u = 0 on the boundary."""
from __future__ import annotations

import logging
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from gkt.config.constants import DARCY_CG_RTOL, DARCY_COEFF_HIGH, DARCY_COEFF_LOW, DARCY_FORCING
from gkt.errors import ConfigError, DimensionError, SolverError

logger = logging.getLogger(__name__)

Forcing = Union[float, np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def coeff_pushforward(rho) -> np.ndarray:
    """12 where rho >= 0, 3 where rho < 0."""
    rho = np.asarray(rho, dtype=np.float64)
    return np.where(rho >= 0.0, DARCY_COEFF_HIGH, DARCY_COEFF_LOW)


def darcy_matrix(a: np.ndarray) -> sp.csr_matrix:
    """Five-point flux-form operator on the (n-2)^2 interior nodes.

    Edge coefficients are arithmetic means of the two adjacent nodal values;
    boundary neighbours drop out of the stencil.
    """
    n = a.shape[0]
    h2 = (1.0 / (n - 1)) ** 2
    m = n - 2
    centre = a[1:-1, 1:-1]
    north = 0.5 * (centre + a[2:, 1:-1])
    south = 0.5 * (centre + a[:-2, 1:-1])
    east = 0.5 * (centre + a[1:-1, 2:])
    west = 0.5 * (centre + a[1:-1, :-2])
    idx = np.arange(m * m).reshape(m, m)

    rows = [idx.ravel(), idx[:-1, :].ravel(), idx[1:, :].ravel(), idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    cols = [idx.ravel(), idx[1:, :].ravel(), idx[:-1, :].ravel(), idx[:, 1:].ravel(), idx[:, :-1].ravel()]
    vals = [
        (north + south + east + west).ravel() / h2,
        -north[:-1, :].ravel() / h2,
        -south[1:, :].ravel() / h2,
        -east[:, :-1].ravel() / h2,
        -west[:, 1:].ravel() / h2,
    ]
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m * m, m * m)
    )


def _forcing_values(f: Optional[Forcing], n: int) -> np.ndarray:
    if f is None:
        f = DARCY_FORCING
    if callable(f):
        x = np.linspace(0.0, 1.0, n)
        gx, gy = np.meshgrid(x, x, indexing="ij")
        values = np.asarray(f(gx, gy), dtype=np.float64)
    else:
        values = np.broadcast_to(np.asarray(f, dtype=np.float64), (n, n))
    if values.shape != (n, n):
        raise DimensionError(f"forcing must evaluate to ({n}, {n}), got {values.shape}")
    return values


def darcy_solve_fd(a, n: Optional[int] = None, f: Optional[Forcing] = None,
                   rtol: float = DARCY_CG_RTOL) -> np.ndarray:
    """Nodal solution on the n x n grid with both endpoints; the boundary is exactly 0."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0] if n is None else n
    if a.shape != (n, n):
        raise DimensionError(f"coefficient must be ({n}, {n}), got {a.shape}")
    if n < 3:
        raise ConfigError(f"Darcy grid needs an interior, got n={n}")
    if not np.all(a > 0):
        raise ConfigError("Darcy coefficient must be strictly positive")

    matrix = darcy_matrix(a)
    rhs = _forcing_values(f, n)[1:-1, 1:-1].ravel()
    jacobi = sp.diags(1.0 / matrix.diagonal())
    maxiter = 10 * n * n
    solution, info = cg(matrix, rhs, rtol=rtol, atol=0.0, maxiter=maxiter, M=jacobi)
    if info != 0:
        raise SolverError(f"CG did not reach rtol={rtol} within {maxiter} iterations (info={info})")

    u = np.zeros((n, n))
    u[1:-1, 1:-1] = solution.reshape(n - 2, n - 2)
    logger.debug("Darcy solve n=%d done", n)
    return u


__all__ = ["coeff_pushforward", "darcy_matrix", "darcy_solve_fd"]
