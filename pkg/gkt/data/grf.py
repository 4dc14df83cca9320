"""Gaussian random fields with covariance sigma^2 (-Laplacian + tau^2 I)^(-alpha).

Samples are Karhunen-Loeve sums over Laplacian eigenfunctions: Fourier
modes on the periodic unit interval, cosine products on the unit square
with homogeneous Neumann conditions.
"""
from __future__ import annotations

import logging
from typing import Optional, Sequence, Union

import numpy as np

from gkt.config.settings import GRFSpec
from gkt.errors import ConfigError, UnsupportedSizeError

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator]


def _generator(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _periodic_eigenvalues(n: int, spec: GRFSpec) -> np.ndarray:
    k = np.arange(n // 2 + 1, dtype=np.float64)
    return spec.sigma ** 2 * (4.0 * np.pi ** 2 * k ** 2 + spec.tau2) ** (-spec.alpha)


def grf_sample_1d_periodic(n: int, spec: Optional[GRFSpec] = None, seed: SeedLike = 0) -> np.ndarray:
    """One sample on the points i/n, i = 0..n-1 (mode 0 included)."""
    spec = spec or GRFSpec.burgers()
    spec.validate()
    if spec.dim != 1:
        raise ConfigError(f"expected a 1D GRF spec, got dim={spec.dim}")
    if n < 2 or n & (n - 1):
        raise UnsupportedSizeError(f"periodic GRF needs a power-of-two n, got {n}")
    rng = _generator(seed)
    root = np.sqrt(_periodic_eigenvalues(n, spec))
    xi = rng.standard_normal(n // 2 + 1)
    eta = rng.standard_normal(n // 2 + 1)
    # irfft(c)_j = (1/n)(c_0 + 2 sum Re(c_k e^{2 pi i k j/n}) + c_{n/2}(-1)^j)
    coeffs = n * root * (xi - 1j * eta) / np.sqrt(2.0)
    coeffs[0] = n * root[0] * xi[0]
    coeffs[-1] = n * root[-1] * np.sqrt(2.0) * xi[-1]
    return np.fft.irfft(coeffs, n)


def grf_variance_1d(n: int, spec: Optional[GRFSpec] = None) -> float:
    """Point variance of :func:`grf_sample_1d_periodic` (same at every point)."""
    lam = _periodic_eigenvalues(n, spec or GRFSpec.burgers())
    return float(lam[0] + 2.0 * lam[1:].sum())


def _cosine_basis(x: np.ndarray, n_modes: int) -> np.ndarray:
    """C[i, j] = c_j cos(j pi x_i) with c_0 = 1 and c_j = sqrt(2)."""
    j = np.arange(n_modes, dtype=np.float64)
    scale = np.where(j == 0, 1.0, np.sqrt(2.0))
    return scale[None, :] * np.cos(np.pi * np.outer(x, j))


def _neumann_eigenvalues(n_modes: int, spec: GRFSpec) -> np.ndarray:
    j = np.arange(n_modes, dtype=np.float64)
    lap = np.pi ** 2 * (j[:, None] ** 2 + j[None, :] ** 2)
    return spec.sigma ** 2 * (lap + spec.tau2) ** (-spec.alpha)


def grf_sample_2d_neumann(n: int, spec: Optional[GRFSpec] = None, seed: SeedLike = 0,
                          n_modes: Optional[int] = None) -> np.ndarray:
    """One n x n sample on the grid with both endpoints, modes j, k < n_modes (default n)."""
    spec = spec or GRFSpec.darcy()
    spec.validate()
    if spec.dim != 2:
        raise ConfigError(f"expected a 2D GRF spec, got dim={spec.dim}")
    if n < 2:
        raise ConfigError(f"GRF grid needs at least 2 points, got {n}")
    n_modes = n if n_modes is None else n_modes
    if n_modes < 1:
        raise ConfigError(f"n_modes must be positive, got {n_modes}")
    rng = _generator(seed)
    basis = _cosine_basis(np.linspace(0.0, 1.0, n), n_modes)
    coeffs = rng.standard_normal((n_modes, n_modes)) * np.sqrt(_neumann_eigenvalues(n_modes, spec))
    return basis @ coeffs @ basis.T


def grf_variance_2d(point: Sequence[float], n_modes: int, spec: Optional[GRFSpec] = None) -> float:
    """sum_jk lambda_jk phi_jk(point)^2 over the truncated mode set."""
    spec = spec or GRFSpec.darcy()
    cx = _cosine_basis(np.array([point[0]]), n_modes)[0]
    cy = _cosine_basis(np.array([point[1]]), n_modes)[0]
    return float(np.sum(_neumann_eigenvalues(n_modes, spec) * np.outer(cx ** 2, cy ** 2)))


__all__ = [
    "grf_sample_1d_periodic",
    "grf_sample_2d_neumann",
    "grf_variance_1d",
    "grf_variance_2d",
]
