"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

import logging
from typing import Callable, Optional, Sequence

import numpy as np

from gkt.core.tensor import Tensor, Tape
from gkt.errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)


def _scalar(value: Tensor) -> float:
    if value.size != 1 or value.is_complex:
        raise DimensionError(f"grad_check needs a real scalar function, got {value!r}")
    return float(value.data.reshape(-1)[0])


def _check_step(step: float) -> None:
    if not 1e-7 <= step <= 1e-4:
        raise ConfigError(f"finite-difference step {step} outside [1e-7, 1e-4]")


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-6, floor: float = 1e-12) -> float:
    """Max over entries of |analytic - central difference| / (|analytic| + floor)."""
    _check_step(step)
    base = np.array(np.asarray(x), dtype=np.float64)
    leaf = Tensor(base, requires_grad=True)
    with Tape() as tape:
        out = f(leaf)
    _scalar(out)
    (analytic,) = tape.gradient(out, [leaf])

    numeric = np.empty_like(base)
    flat = base.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = _scalar(f(Tensor(base)))
        flat[i] = orig - step
        f_minus = _scalar(f(Tensor(base)))
        flat[i] = orig
        numeric.reshape(-1)[i] = (f_plus - f_minus) / (2.0 * step)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + floor)))


def grad_check_params(
    loss: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-6,
    floor: float = 1e-12,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Same check for parameters captured by ``loss``, perturbed in place.

    With ``max_entries`` set, only that many randomly chosen entries per
    parameter are checked.
    """
    _check_step(step)
    with Tape() as tape:
        out = loss()
    _scalar(out)
    analytic = tape.gradient(out, list(params))

    worst = 0.0
    for param, grad in zip(params, analytic):
        flat = param.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            chooser = rng if rng is not None else np.random.default_rng(0)
            indices = np.sort(chooser.choice(flat.size, size=max_entries, replace=False))
        for i in indices:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = _scalar(loss())
            flat[i] = orig - step
            f_minus = _scalar(loss())
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = grad.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / (abs(a) + floor))
    logger.debug("grad_check_params over %d tensors: worst %.3e", len(params), worst)
    return float(worst)


__all__ = ["grad_check", "grad_check_params"]
