"""ADAM, the cosine 1cycle learning-rate schedule and global-norm clipping."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from gkt.config.constants import ADAM_BETAS, ADAM_EPS
from gkt.config.settings import TrainConfig
from gkt.core.tensor import Parameter
from gkt.errors import ConfigError, DimensionError, NumericalError

logger = logging.getLogger(__name__)

SCHEDULE_SHAPE = "cosine"


def _cosine_ramp(start: float, stop: float, t: float) -> float:
    return stop + (start - stop) * 0.5 * (1.0 + math.cos(math.pi * t))


def onecycle_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Cosine warm-up from start_factor*lr_max to lr_max, then cosine anneal to end_factor*lr_max.

    The peak is the integer step nearest ``warmup_fraction * total_steps``, kept inside
    ``[1, total_steps - 1]`` so both ramps hit their endpoints exactly.
    """
    if total_steps < 1:
        raise ConfigError(f"schedule needs at least one step, got total_steps={total_steps}")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    lr_max = cfg.lr_max
    peak = peak_step(total_steps, cfg)
    if step <= peak:
        return _cosine_ramp(cfg.start_factor * lr_max, lr_max, step / peak)
    return _cosine_ramp(lr_max, cfg.end_factor * lr_max, (step - peak) / (total_steps - peak))


def peak_step(total_steps: int, cfg: TrainConfig) -> int:
    return min(max(1, int(round(cfg.warmup_fraction * total_steps))), max(1, total_steps - 1))


@dataclass
class AdamState:
    beta1: float = ADAM_BETAS[0]
    beta2: float = ADAM_BETAS[1]
    eps: float = ADAM_EPS
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "step": self.step}


def _check_grads(params: Sequence[Parameter], grads: Sequence[np.ndarray]) -> None:
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(g) != p.shape:
            raise DimensionError(f"gradient {i} has shape {np.shape(g)}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"gradient {i} (shape {p.shape}) is not finite")


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], state: AdamState,
              lr: float) -> AdamState:
    """One bias-corrected ADAM update, applied to ``params`` in place; no weight decay."""
    _check_grads(params, grads)
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    elif len(state.m) != len(params):
        raise DimensionError(f"optimizer state tracks {len(state.m)} parameters, got {len(params)}")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        p.data = p.data - update
    return state


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(math.sqrt(sum(float(np.vdot(g, g).real) for g in grads)))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float = 1.0,
                   norm: Optional[float] = None) -> Tuple[List[np.ndarray], float]:
    """Rescale all gradients together so the global L2 norm is at most ``max_norm``.

    Returns the (possibly rescaled) gradients and the norm before clipping.
    """
    if max_norm <= 0:
        raise ConfigError(f"max_norm must be positive, got {max_norm}")
    total = global_norm(grads) if norm is None else norm
    if not math.isfinite(total):
        raise NumericalError("gradient norm is not finite")
    if total <= max_norm:
        return list(grads), total
    scale = max_norm / total
    return [g * scale for g in grads], total


__all__ = [
    "SCHEDULE_SHAPE",
    "onecycle_lr",
    "peak_step",
    "AdamState",
    "adam_step",
    "global_norm",
    "clip_grad_norm",
]
