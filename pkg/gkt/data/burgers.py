"""Viscous Burgers equation u_t + (u^2/2)_x = nu u_xx on the periodic unit interval."""
from __future__ import annotations

import logging

import numpy as np

from gkt.config.constants import BURGERS_DT, BURGERS_T_END, BURGERS_VISCOSITY
from gkt.errors import ConfigError, InstabilityError, UnsupportedSizeError

logger = logging.getLogger(__name__)

_CHECK_EVERY = 100


def burgers_solve(u0, nu: float = BURGERS_VISCOSITY, t_end: float = BURGERS_T_END,
                  dt: float = BURGERS_DT) -> np.ndarray:
    """Pseudo-spectral solution at ``t_end``.

    Integrating-factor RK4 (diffusion handled exactly), nonlinear flux
    evaluated with the 2/3 dealiasing rule.
    """
    u0 = np.asarray(u0, dtype=np.float64)
    n = u0.shape[0]
    if u0.ndim != 1 or n < 2 or n & (n - 1):
        raise UnsupportedSizeError(f"Burgers solver needs a 1D power-of-two grid, got {u0.shape}")
    if dt <= 0 or t_end < 0 or nu < 0:
        raise ConfigError(f"invalid Burgers parameters nu={nu}, t_end={t_end}, dt={dt}")
    steps = int(round(t_end / dt))
    if abs(steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ConfigError(f"t_end={t_end} is not a multiple of dt={dt}")

    index = np.arange(n // 2 + 1, dtype=np.float64)
    k = 2.0 * np.pi * index
    keep = (index < n / 3.0).astype(np.float64)
    half = np.exp(-nu * k * k * dt / 2.0)
    full = half * half

    def nonlinear(v_hat: np.ndarray) -> np.ndarray:
        v = np.fft.irfft(keep * v_hat, n)
        return -0.5j * k * keep * np.fft.rfft(v * v)

    u_hat = np.fft.rfft(u0)
    for step in range(1, steps + 1):
        k1 = dt * nonlinear(u_hat)
        k2 = dt * nonlinear(half * (u_hat + k1 / 2.0))
        k3 = dt * nonlinear(half * u_hat + k2 / 2.0)
        k4 = dt * nonlinear(full * u_hat + half * k3)
        u_hat = full * u_hat + (full * k1 + 2.0 * half * (k2 + k3) + k4) / 6.0
        if step % _CHECK_EVERY == 0 and not np.all(np.isfinite(u_hat)):
            raise InstabilityError(
                f"Burgers solution blew up at t={step * dt:.4g}; retry with a smaller dt than {dt}"
            )
    u = np.fft.irfft(u_hat, n)
    if not np.all(np.isfinite(u)):
        raise InstabilityError(f"Burgers solution is not finite at t={t_end}; retry with a smaller dt than {dt}")
    logger.debug("Burgers solve n=%d steps=%d done", n, steps)
    return u


def burgers_energy(u) -> float:
    """Discrete L2 energy h * sum(u^2) on the periodic grid."""
    u = np.asarray(u, dtype=np.float64)
    return float(np.sum(u * u) / u.shape[0])


def energy_law_holds(u0, u1, slack: float = 1e-12) -> bool:
    """||u(., t)|| <= ||u0|| as the viscous energy law requires."""
    return burgers_energy(u1) <= burgers_energy(u0) * (1.0 + slack)


__all__ = ["burgers_solve", "burgers_energy", "energy_law_holds"]
