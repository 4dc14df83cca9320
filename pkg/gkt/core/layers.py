"""Parameter containers and the small building-block modules."""
from __future__ import annotations

import contextvars
import logging
import math
from contextlib import contextmanager
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from gkt.config.constants import LAYER_NORM_EPS
from gkt.core.tensor import Parameter, Tensor, activation, conv2d, dropout, layer_norm, matmul
from gkt.errors import DimensionError, FormatError

logger = logging.getLogger(__name__)

_DROPOUT_RNG: contextvars.ContextVar[Optional[np.random.Generator]] = contextvars.ContextVar(
    "gkt_dropout_rng", default=None
)


@contextmanager
def dropout_stream(rng: Optional[np.random.Generator]) -> Iterator[None]:
    """Route every Dropout in this context (and thread) through ``rng``."""
    token = _DROPOUT_RNG.set(rng)
    try:
        yield
    finally:
        _DROPOUT_RNG.reset(token)


def current_dropout_rng() -> Optional[np.random.Generator]:
    return _DROPOUT_RNG.get()


class Module:
    """Attribute-driven parameter tree.

    Parameters, child modules and lists of child modules assigned as
    attributes are discovered in assignment order, which fixes parameter
    names and their ordering for optimizers and checkpoints.
    """

    buffer_names: Tuple[str, ...] = ()

    def __init__(self) -> None:
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name in self.buffer_names:
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: np.array(b, copy=True) for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        expected = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(expected) | set(buffers)) - set(state)
        unexpected = set(state) - set(expected) - set(buffers)
        if missing or unexpected:
            raise FormatError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, param in expected.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise DimensionError(f"{name}: stored shape {value.shape} != {param.shape}")
            param.data = value.copy()
        for name, current in buffers.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != np.shape(current):
                raise DimensionError(f"{name}: stored shape {value.shape} != {np.shape(current)}")
            owner, attr = self._resolve(name)
            setattr(owner, attr, value.copy())

    def _resolve(self, dotted: str) -> Tuple["Module", str]:
        owner: Module = self
        parts = dotted.split(".")
        i = 0
        while i < len(parts) - 1:
            value = getattr(owner, parts[i])
            if isinstance(value, (list, tuple)):
                value = value[int(parts[i + 1])]
                i += 1
            owner = value
            i += 1
        return owner, parts[-1]


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True) -> None:
        super().__init__()
        self.weight = Parameter(xavier_uniform(rng, d_in, d_out, (d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise DimensionError(f"Linear expects width {self.weight.shape[0]}, got {x.shape}")
        out = matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = LAYER_NORM_EPS) -> None:
        super().__init__()
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class Dropout(Module):
    def __init__(self, rate: float) -> None:
        super().__init__()
        self.rate = rate

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        return dropout(x, self.rate, current_dropout_rng())


class FeedForward(Module):
    """Two-layer position-wise map d_in -> hidden -> d_out."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator,
                 act: str = "silu", rate: float = 0.0) -> None:
        super().__init__()
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)
        self.drop = Dropout(rate)
        self.act_name = act

    def forward(self, x: Tensor) -> Tensor:
        hidden = self.drop(activation(self.act_name)(self.fc1(x)))
        return self.fc2(hidden)


class Conv2d(Module):
    """3x3, padding 1, channels-first."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.kernel = Parameter(xavier_uniform(rng, 9 * c_in, 9 * c_out, (c_out, c_in, 3, 3)))
        self.bias = Parameter(np.zeros(c_out))

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.bias)


__all__ = [
    "Module",
    "Linear",
    "LayerNorm",
    "Dropout",
    "FeedForward",
    "Conv2d",
    "dropout_stream",
    "current_dropout_rng",
    "xavier_uniform",
]
