"""Deterministic mini-batch training and evaluation of operator models.

Each sample of a batch gets its own tape and dropout stream on the shared
pool; per-sample gradients are summed in batch order, so a run is a pure
function of (model seed, train seed, config, dataset).
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from gkt.config.settings import LossConfig, TrainConfig
from gkt.core.cost_meter import CostMeter, metering
from gkt.core.layers import dropout_stream
from gkt.core.loss import operator_loss, relative_l2
from gkt.core.operator_model import OperatorModel, model_forward
from gkt.core.tensor import Parameter, Tape, Tensor
from gkt.data.dataset import DataSample, Dataset
from gkt.errors import ConfigError, NumericalError, TrainingDivergedError, UndefinedMetricError
from gkt.services.checkpoint import save_checkpoint
from gkt.services.optim import SCHEDULE_SHAPE, AdamState, adam_step, clip_grad_norm, onecycle_lr
from gkt.services.thread_pool import map_ordered
from gkt.utils.seeding import substream

logger = logging.getLogger(__name__)

CSV_FIELDS = ("epoch", "loss", "eval_rel_l2", "lr")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    eval_rel_l2: Optional[float]
    lr: float
    wall_time: float


@dataclass
class RunReport:
    config: Dict[str, Any]
    schedule: str = SCHEDULE_SHAPE
    epochs: List[EpochRecord] = field(default_factory=list)
    lr_trace: List[float] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_metric: Optional[float] = None
    cost: Dict[str, Any] = field(default_factory=dict)
    wall_time: float = 0.0
    diverged_epoch: Optional[int] = None
    checkpoint: Optional[str] = None
    manifest: Optional[str] = None

    @property
    def train_losses(self) -> List[float]:
        return [e.train_loss for e in self.epochs]

    @property
    def eval_errors(self) -> List[Optional[float]]:
        return [e.eval_rel_l2 for e in self.epochs]

    def to_dict(self, include_timing: bool = True) -> Dict[str, Any]:
        data = asdict(self)
        if not include_timing:
            data.pop("wall_time")
            for record in data["epochs"]:
                record.pop("wall_time")
        return data

    def write_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_FIELDS)
            for e in self.epochs:
                writer.writerow([e.epoch, repr(e.train_loss),
                                 "" if e.eval_rel_l2 is None else repr(e.eval_rel_l2), repr(e.lr)])
        return path


@dataclass(frozen=True)
class EvalResult:
    mean_rel_l2: float
    per_sample: Tuple[float, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {"mean_rel_l2": self.mean_rel_l2, "count": len(self.per_sample),
                "per_sample": list(self.per_sample)}


def sample_loss(model: OperatorModel, sample: DataSample, loss_cfg: LossConfig) -> Tensor:
    pred = model_forward(model, sample)
    return operator_loss(pred, sample.target, sample.coeff, model.target_grid, loss_cfg)


def sample_gradient(model: OperatorModel, params: Sequence[Parameter], sample: DataSample,
                    loss_cfg: LossConfig, rng: Optional[np.random.Generator]) -> Tuple[float, List[np.ndarray]]:
    with dropout_stream(rng), Tape() as tape:
        loss = sample_loss(model, sample, loss_cfg)
    return loss.item(), tape.gradient(loss, params)


def batch_gradients(model: OperatorModel, params: Sequence[Parameter], batch: Sequence[DataSample],
                    loss_cfg: LossConfig, seed: int, step: int) -> Tuple[float, List[np.ndarray]]:
    """Mean loss and mean gradient over ``batch``, reduced in batch order."""
    def task(item):
        k, sample = item
        return sample_gradient(model, params, sample, loss_cfg, substream(seed, "dropout", step, k))

    results = map_ordered(task, list(enumerate(batch)))
    scale = 1.0 / len(batch)
    total_loss = 0.0
    grads = [np.zeros(p.shape) for p in params]
    for loss, sample_grads in results:
        total_loss += loss
        for acc, g in zip(grads, sample_grads):
            acc += g
    return total_loss * scale, [g * scale for g in grads]


def evaluate(model: OperatorModel, dataset: Dataset) -> EvalResult:
    """Mean relative L2 error of eval-mode predictions over ``dataset``."""
    if len(dataset) == 0:
        raise UndefinedMetricError("cannot evaluate on an empty dataset")
    was_training = model.training
    model.eval()
    try:
        errors = map_ordered(lambda s: relative_l2(model_forward(model, s).numpy(), s.target), dataset.samples)
    finally:
        model.train(was_training)
    return EvalResult(float(np.mean(errors)), tuple(errors))


def profile_forward(model: OperatorModel, sample: DataSample) -> CostMeter:
    """Multiply-adds and buffers of one eval-mode forward pass."""
    was_training = model.training
    model.eval()
    try:
        with metering() as meter:
            model_forward(model, sample)
    finally:
        model.train(was_training)
    return meter


def _schedule_length(total_steps: int) -> int:
    # the trace runs over steps 0..total-1, so both endpoints land on the schedule ends
    return max(1, total_steps - 1)


def train(model: OperatorModel, train_set: Dataset, eval_set: Optional[Dataset], cfg: TrainConfig,
          checkpoint_path: Optional[Union[str, Path]] = None) -> RunReport:
    """Minimize the operator loss with ADAM + 1cycle + clipping; keep the best eval model.

    On return the model holds the best-epoch state. A non-finite value
    anywhere in a step aborts with :class:`TrainingDivergedError`, whose
    report covers the completed epochs; the checkpoint on disk is the last
    good one.
    """
    cfg.validate()
    loss_cfg = cfg.loss_config(model.cfg.problem, model.target_grid)
    report = RunReport(config={
        "model": model.cfg.to_dict(),
        "model_seed": model.seed,
        "train": cfg.to_dict(),
        "loss": loss_cfg.to_dict(),
        "train_count": len(train_set),
        "eval_count": 0 if eval_set is None else len(eval_set),
    })
    if cfg.epochs == 0:
        logger.info("Zero epochs requested; model left untouched")
        return report
    if len(train_set) == 0:
        raise ConfigError("cannot train on an empty dataset")

    model.fit_normalizers(train_set.inputs(), train_set.targets())
    report.cost = profile_forward(model, train_set[0]).to_dict()
    params = model.parameters()
    n = len(train_set)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    schedule_steps = _schedule_length(cfg.epochs * steps_per_epoch)
    state = AdamState()
    step = 0
    best_state = None
    start = time.perf_counter()
    logger.info("Training %s for %d epochs (%d steps/epoch, %d parameters)",
                model.cfg.problem, cfg.epochs, steps_per_epoch, model.num_parameters())

    for epoch in range(1, cfg.epochs + 1):
        epoch_start = time.perf_counter()
        model.train()
        order = substream(cfg.seed, "shuffle", epoch).permutation(n)
        losses = []
        lr = 0.0
        try:
            for b in range(steps_per_epoch):
                batch = [train_set[int(i)] for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
                lr = onecycle_lr(step, schedule_steps, cfg)
                loss, grads = batch_gradients(model, params, batch, loss_cfg, cfg.seed, step)
                if not math.isfinite(loss):
                    raise NumericalError(f"loss is {loss}")
                grads, norm = clip_grad_norm(grads, cfg.clip_norm)
                adam_step(params, grads, state, lr)
                logger.debug("step %d: loss=%.6e grad_norm=%.3e lr=%.3e", step, loss, norm, lr)
                report.lr_trace.append(lr)
                losses.append(loss)
                step += 1
            eval_err = evaluate(model, eval_set).mean_rel_l2 if eval_set is not None and len(eval_set) else None
        except NumericalError as exc:
            report.diverged_epoch = epoch
            report.wall_time = time.perf_counter() - start
            if best_state is not None:
                model.load_state_dict(best_state)
            logger.error("Training diverged at epoch %d (step %d): %s", epoch, step, exc)
            raise TrainingDivergedError(f"training diverged at epoch {epoch}, step {step}: {exc}",
                                        epoch, report) from exc

        train_loss = float(np.mean(losses))
        report.epochs.append(EpochRecord(epoch, train_loss, eval_err, lr, time.perf_counter() - epoch_start))
        metric = train_loss if eval_err is None else eval_err
        if report.best_metric is None or metric < report.best_metric:
            report.best_metric, report.best_epoch = metric, epoch
            best_state = model.state_dict()
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, model, extra={
                    "epoch": epoch, "metric": metric, "train_config": cfg.to_dict(),
                })
                report.checkpoint = str(checkpoint_path)
        logger.info("Epoch %d/%d: loss=%.6e eval_rel_l2=%s lr=%.3e", epoch, cfg.epochs, train_loss,
                    "n/a" if eval_err is None else f"{eval_err:.6e}", lr)

    model.load_state_dict(best_state)
    model.eval()
    report.wall_time = time.perf_counter() - start
    logger.info("Best epoch %d with metric %.6e", report.best_epoch, report.best_metric)
    return report


__all__ = [
    "EpochRecord",
    "RunReport",
    "EvalResult",
    "sample_loss",
    "sample_gradient",
    "batch_gradients",
    "evaluate",
    "profile_forward",
    "train",
]
