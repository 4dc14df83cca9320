"""Training objective and evaluation metric."""
from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from gkt.config.settings import Grid, LossConfig
from gkt.core.tensor import Tensor, as_tensor, roll, sum_
from gkt.errors import DimensionError, UndefinedMetricError

logger = logging.getLogger(__name__)


def squared_l2(e: Tensor, grid: Grid) -> Tensor:
    """h^m-weighted sum of squares."""
    return sum_(e * e) * (grid.h ** grid.dim)


def h1_seminorm_sq(e: Tensor, grid: Grid) -> Tensor:
    """Squared H1 seminorm by central differences (periodic wrap in 1D)."""
    h = grid.h
    if grid.dim == 1 and grid.boundary == "periodic":
        de = (roll(e, -1, axis=0) - roll(e, 1, axis=0)) * (0.5 / h)
        return sum_(de * de) * h
    if grid.dim == 1:
        de = (e[2:] - e[:-2]) * (0.5 / h)
        return sum_(de * de) * h
    dx, dy = _grad_2d(e, h)
    return sum_(dx * dx + dy * dy) * (h * h)


def _grad_2d(e: Tensor, h: float):
    """Central-difference gradient at interior nodes (5-point stencil)."""
    dx = (e[2:, 1:-1] - e[:-2, 1:-1]) * (0.5 / h)
    dy = (e[1:-1, 2:] - e[1:-1, :-2]) * (0.5 / h)
    return dx, dy


def darcy_flux_sq(e: Tensor, coeff, grid: Grid) -> Tensor:
    """Squared L2 norm of a * grad(e) over the interior."""
    if grid.dim != 2:
        raise DimensionError("the flux regularizer needs a 2D grid")
    a = np.asarray(coeff, dtype=np.float64)
    if a.shape != e.shape:
        raise DimensionError(f"coefficient shape {a.shape} != field shape {e.shape}")
    a2 = Tensor(a[1:-1, 1:-1] ** 2)
    dx, dy = _grad_2d(e, grid.h)
    return sum_(a2 * (dx * dx + dy * dy)) * (grid.h ** 2)


def regularizer_term(e: Tensor, coeff, grid: Grid, cfg: LossConfig) -> Optional[Tensor]:
    if cfg.regularizer == "none" or cfg.gamma == 0.0:
        return None
    if cfg.regularizer == "h1-seminorm":
        return h1_seminorm_sq(e, grid) * cfg.gamma
    if coeff is None:
        raise DimensionError("the darcy-flux regularizer needs the coefficient field")
    return darcy_flux_sq(e, coeff, grid) * cfg.gamma


def operator_loss(pred: Tensor, target, coeff, grid: Grid, cfg: LossConfig) -> Tensor:
    """h-weighted squared L2 error plus gamma times the regularizer, one sample."""
    cfg.validate()
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {target.shape}")
    e = pred - target
    loss = squared_l2(e, grid)
    reg = regularizer_term(e, coeff, grid, cfg)
    return loss if reg is None else loss + reg


def batch_operator_loss(preds: Sequence[Tensor], targets: Sequence, coeffs: Sequence,
                        grid: Grid, cfg: LossConfig) -> Tensor:
    if not preds or len(preds) != len(targets) or len(preds) != len(coeffs):
        raise DimensionError("batch components must be non-empty and of equal length")
    total = operator_loss(preds[0], targets[0], coeffs[0], grid, cfg)
    for p, t, c in zip(preds[1:], targets[1:], coeffs[1:]):
        total = total + operator_loss(p, t, c, grid, cfg)
    return total * (1.0 / len(preds))


def relative_l2(pred, target) -> float:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"prediction shape {p.shape} != target shape {t.shape}")
    denom = np.linalg.norm(t.ravel())
    if denom == 0.0:
        raise UndefinedMetricError("relative L2 error is undefined for a zero target")
    return float(np.linalg.norm((p - t).ravel()) / denom)


__all__ = [
    "squared_l2",
    "h1_seminorm_sq",
    "darcy_flux_sq",
    "regularizer_term",
    "operator_loss",
    "batch_operator_loss",
    "relative_l2",
]
