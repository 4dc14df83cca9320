"""GKTM model checkpoints: model config and seed as JSON, then named state blobs."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from gkt.config.constants import CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC
from gkt.config.settings import ModelConfig
from gkt.core.operator_model import OperatorModel
from gkt.errors import ConfigError, DimensionError, FormatError
from gkt.utils.binary_io import iter_blobs, read_header, write_blob, write_header

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def save_checkpoint(path: PathLike, model: OperatorModel,
                    extra: Optional[Mapping[str, Any]] = None) -> Path:
    """Write every parameter and buffer of ``model``; ``extra`` lands in the header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    header: Dict[str, Any] = {
        "model_config": model.cfg.to_dict(),
        "seed": model.seed,
        "names": list(state),
        "extra": dict(extra or {}),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        write_header(fh, CHECKPOINT_MAGIC, CHECKPOINT_FORMAT_VERSION, header)
        for name, array in state.items():
            write_blob(fh, name, array)
    tmp.replace(path)
    logger.debug("Checkpoint with %d arrays written to %s", len(state), path)
    return path


def read_checkpoint(path: PathLike) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """Raw (header, state) pair without building a model."""
    path = Path(path)
    with path.open("rb") as fh:
        _, header = read_header(fh, CHECKPOINT_MAGIC, CHECKPOINT_FORMAT_VERSION)
        state = dict(iter_blobs(fh))
    if "model_config" not in header or list(state) != header.get("names"):
        raise FormatError(f"{path}: blob layout does not match the checkpoint header")
    return header, state


def load_checkpoint(path: PathLike) -> Tuple[OperatorModel, Dict[str, Any]]:
    """Rebuild the model from the stored config and restore its state (eval mode)."""
    header, state = read_checkpoint(path)
    try:
        cfg = ModelConfig.from_dict(header["model_config"])
        model = OperatorModel(cfg, seed=int(header.get("seed", 0)))
        model.load_state_dict(state)
    except (ConfigError, DimensionError) as exc:
        raise FormatError(f"{path}: checkpoint does not describe a valid model: {exc}") from exc
    model.eval()
    logger.info("Loaded %s checkpoint from %s", cfg.problem, path)
    return model, header.get("extra", {})


__all__ = ["save_checkpoint", "read_checkpoint", "load_checkpoint"]
