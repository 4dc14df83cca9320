"""Top-level package for the gkt operator-learning toolkit."""
from __future__ import annotations

from typing import TYPE_CHECKING

__version__ = "0.1.0"

if TYPE_CHECKING:  # pragma: no cover - only for type checkers
    from .core.operator_model import OperatorModel as _OperatorModel
    from .services.trainer import train as _train

__all__ = ["OperatorModel", "train", "__version__"]


def __getattr__(name: str):  # pragma: no cover - simple delegation
    if name == "OperatorModel":
        from .core.operator_model import OperatorModel

        return OperatorModel
    if name == "train":
        from .services.trainer import train

        return train
    raise AttributeError(name)
