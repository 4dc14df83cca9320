import math

import numpy as np
import pytest

import gkt.services.trainer as trainer
from gkt.config import constants as C
from gkt.config.settings import DatasetSpec, LossConfig, ModelConfig, TrainConfig, preset_for
from gkt.core.operator_model import OperatorModel
from gkt.data.dataset import DataSample, Dataset, build_splits
from gkt.errors import ConfigError, TrainingDivergedError, UndefinedMetricError
from gkt.services.checkpoint import load_checkpoint
from gkt.services.trainer import (
    CSV_FIELDS,
    batch_gradients,
    evaluate,
    sample_gradient,
    train,
)

N = 16
SPEC = DatasetSpec(problem="burgers1d", n_f=N, n_c=N, generation_n=N)
MODEL = ModelConfig(problem="burgers1d", n_layers=1, d_model=4, n_modes=2, n_f=N, n_c=N, decoder_width=4)


def _dataset(count, split, seed):
    rng = np.random.default_rng(seed)
    grid = SPEC.input_grid()
    x = grid.axis()
    samples = []
    for _ in range(count):
        k = int(rng.integers(1, 4))
        u0 = np.sin(2 * np.pi * k * x + rng.uniform(0, 2 * np.pi)) + rng.uniform(-0.5, 0.5)
        samples.append(DataSample(u0, 0.5 * np.roll(u0, 1), grid, grid))
    return Dataset(SPEC, split, seed, samples)


@pytest.fixture
def data():
    return _dataset(5, "train", 1), _dataset(3, "test", 2)


def test_zero_epochs_leave_model_untouched(data):
    model = OperatorModel(MODEL, seed=0)
    before = model.state_dict()
    report = train(model, data[0], data[1], TrainConfig(epochs=0))
    assert report.epochs == [] and report.lr_trace == []
    assert report.best_epoch is None
    for name, value in model.state_dict().items():
        np.testing.assert_array_equal(value, before[name])


def test_training_is_deterministic(data):
    cfg = TrainConfig(epochs=2, batch_size=2, lr_max=1e-2, seed=3)
    reports = [train(OperatorModel(MODEL, seed=0), data[0], data[1], cfg) for _ in range(2)]
    assert reports[0].to_dict(include_timing=False) == reports[1].to_dict(include_timing=False)


def test_lr_trace_covers_the_whole_schedule(data):
    cfg = TrainConfig(epochs=3, batch_size=2, lr_max=1e-2)
    report = train(OperatorModel(MODEL, seed=0), data[0], data[1], cfg)
    steps = 3 * math.ceil(5 / 2)
    assert len(report.lr_trace) == steps
    assert report.lr_trace[0] == pytest.approx(1e-6, rel=1e-12)
    assert report.lr_trace[-1] == pytest.approx(1e-6, rel=1e-12)
    assert max(report.lr_trace) == 1e-2
    assert report.schedule == "cosine"
    assert [e.epoch for e in report.epochs] == [1, 2, 3]
    assert all(e.eval_rel_l2 is not None for e in report.epochs)
    assert report.cost["total_macs"] > 0


def test_best_checkpoint_round_trip(data, tmp_path):
    path = tmp_path / "model.gktm"
    model = OperatorModel(MODEL, seed=0)
    report = train(model, data[0], data[1], TrainConfig(epochs=3, batch_size=2, lr_max=1e-2), path)
    assert report.checkpoint == str(path)
    assert report.best_metric == min(report.eval_errors)
    restored, extra = load_checkpoint(path)
    assert extra["epoch"] == report.best_epoch
    assert evaluate(restored, data[1]).mean_rel_l2 == pytest.approx(report.best_metric, rel=1e-12)
    assert evaluate(model, data[1]).mean_rel_l2 == pytest.approx(report.best_metric, rel=1e-12)


def test_without_eval_set_best_metric_is_train_loss(data):
    report = train(OperatorModel(MODEL, seed=0), data[0], None, TrainConfig(epochs=2, batch_size=5))
    assert report.eval_errors == [None, None]
    assert report.best_metric == min(report.train_losses)


def test_report_files(data, tmp_path):
    report = train(OperatorModel(MODEL, seed=0), data[0], data[1], TrainConfig(epochs=1, batch_size=5))
    lines = report.write_csv(tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_FIELDS) == "epoch,loss,eval_rel_l2,lr"
    assert len(lines) == 2
    assert report.write_json(tmp_path / "report.json").exists()


def test_zero_decoder_gives_unit_error(data):
    model = OperatorModel(MODEL, seed=0)
    model.decoder.head.weight.data = np.zeros(model.decoder.head.weight.shape)
    model.decoder.head.bias.data = np.zeros(1)
    result = evaluate(model, data[1])
    assert result.mean_rel_l2 == pytest.approx(1.0)
    assert len(result.per_sample) == 3


def test_evaluate_restores_mode_and_rejects_empty(data):
    model = OperatorModel(MODEL, seed=0).train()
    evaluate(model, data[1])
    assert model.training
    with pytest.raises(UndefinedMetricError):
        evaluate(model, Dataset(SPEC, "test", 0))


def test_empty_training_set_is_rejected(data):
    with pytest.raises(ConfigError):
        train(OperatorModel(MODEL, seed=0), Dataset(SPEC, "train", 0), None, TrainConfig(epochs=1))


def test_batch_gradient_is_ordered_mean(data):
    model = OperatorModel(MODEL, seed=0)
    params = model.parameters()
    batch = list(data[0])[:3]
    loss_cfg = LossConfig.for_problem("burgers1d", model.target_grid)
    loss, grads = batch_gradients(model, params, batch, loss_cfg, seed=0, step=0)
    singles = [sample_gradient(model, params, s, loss_cfg, None) for s in batch]
    assert loss == pytest.approx(np.mean([value for value, _ in singles]), rel=1e-12)
    for i, g in enumerate(grads):
        np.testing.assert_allclose(g, sum(s[1][i] for s in singles) / 3, rtol=1e-12, atol=1e-15)


def test_nan_aborts_with_report(data, monkeypatch):
    real = trainer.batch_gradients
    calls = {"count": 0}

    def flaky(*args, **kwargs):
        calls["count"] += 1
        loss, grads = real(*args, **kwargs)
        return (float("nan"), grads) if calls["count"] > 1 else (loss, grads)

    monkeypatch.setattr(trainer, "batch_gradients", flaky)
    with pytest.raises(TrainingDivergedError) as info:
        train(OperatorModel(MODEL, seed=0), data[0], data[1], TrainConfig(epochs=3, batch_size=5))
    report = info.value.report
    assert info.value.epoch == 2
    assert report.diverged_epoch == 2
    assert len(report.epochs) == 1 and report.best_epoch == 1


# -- desk-scale training quality -------------------------------------------

def _desk_model(n, **overrides):
    fields = {"d_model": 32, "decoder_width": 32, "variant": "galerkin", "ln_scheme": "pre-dot-product",
              "init_eta": 1e-2, "init_delta": 1e-2}
    fields.update(overrides)
    return preset_for("burgers1d", n=n, **fields)


@pytest.fixture(scope="module")
def toy_burgers():
    spec = DatasetSpec(problem="burgers1d", n_f=128, n_c=128, generation_n=1024)
    return build_splits(spec, 64, 16, seed=11)


def _best_error(data, cfg):
    report = train(OperatorModel(cfg, seed=5), data[0], data[1], TrainConfig(epochs=10, batch_size=8, seed=5))
    assert all(np.isfinite(report.train_losses))
    return report.best_metric


@pytest.mark.slow
def test_desk_burgers_training_reaches_target_error():
    spec = DatasetSpec.for_problem("burgers1d", n_f=512)
    train_set, test_set = build_splits(spec, C.DEFAULT_TRAIN_COUNT, C.DEFAULT_TEST_COUNT, seed=C.DEFAULT_SEED)
    cfg = TrainConfig(epochs=20, batch_size=8, seed=C.DEFAULT_SEED)
    report = train(OperatorModel(_desk_model(512), seed=C.DEFAULT_SEED), train_set, test_set, cfg)
    assert report.diverged_epoch is None
    assert all(np.isfinite(report.train_losses))
    assert report.best_metric <= 3e-2
    assert report.eval_errors[0] / report.best_metric >= 10.0


@pytest.mark.slow
def test_layer_norm_and_attention_ablation(toy_burgers):
    new_ln = _best_error(toy_burgers, _desk_model(128, n_layers=2))
    regular_ln = _best_error(toy_burgers, _desk_model(128, n_layers=2, ln_scheme="regular"))
    fourier = _best_error(toy_burgers, _desk_model(128, n_layers=2, variant="fourier"))
    assert new_ln < regular_ln
    assert 0.5 <= new_ln / fourier <= 2.0


@pytest.mark.slow
def test_diagonal_init_beats_xavier(toy_burgers):
    diagonal = _best_error(toy_burgers, _desk_model(128, n_layers=2))
    xavier = _best_error(toy_burgers, _desk_model(128, n_layers=2, init_eta=1.0, init_delta=0.0))
    assert diagonal < xavier
