"""Per-grid-point Gaussian normalizer, frozen after fitting."""
from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from gkt.core.layers import Module
from gkt.core.tensor import Tensor
from gkt.errors import DimensionError, NumericalError

logger = logging.getLogger(__name__)

MIN_STD = 1e-12


class GaussianNormalizer(Module):
    buffer_names = ("mean", "std")

    def __init__(self, shape: Sequence[int]) -> None:
        super().__init__()
        self.shape = tuple(shape)
        self.mean = np.zeros(self.shape)
        self.std = np.ones(self.shape)

    def fit(self, samples: np.ndarray) -> "GaussianNormalizer":
        """Fit on a (count, *shape) stack; constant points keep unit scale."""
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != len(self.shape) + 1 or samples.shape[1:] != self.shape:
            raise DimensionError(f"expected samples of shape (N, {self.shape}), got {samples.shape}")
        if samples.shape[0] < 1:
            raise NumericalError("cannot fit a normalizer on zero samples")
        self.mean = samples.mean(axis=0)
        std = samples.std(axis=0)
        self.std = np.where(std > MIN_STD, std, 1.0)
        logger.debug("Normalizer fitted on %d samples of shape %s", samples.shape[0], self.shape)
        return self

    def _check(self, x) -> None:
        if tuple(np.shape(x)) != self.shape:
            raise DimensionError(f"normalizer built for {self.shape}, got {np.shape(x)}")

    def transform(self, x: Tensor) -> Tensor:
        self._check(x)
        return (x - Tensor(self.mean)) * Tensor(1.0 / self.std)

    def inverse(self, x: Tensor) -> Tensor:
        self._check(x)
        return x * Tensor(self.std) + Tensor(self.mean)

    def transform_array(self, x: np.ndarray) -> np.ndarray:
        self._check(x)
        return (np.asarray(x) - self.mean) / self.std

    def inverse_array(self, x: np.ndarray) -> np.ndarray:
        self._check(x)
        return np.asarray(x) * self.std + self.mean


__all__ = ["GaussianNormalizer"]
