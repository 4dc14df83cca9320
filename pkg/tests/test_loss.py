import numpy as np
import pytest

from gkt.config.settings import Grid, LossConfig
from gkt.core.loss import (
    batch_operator_loss,
    darcy_flux_sq,
    h1_seminorm_sq,
    operator_loss,
    relative_l2,
    squared_l2,
)
from gkt.core.tensor import Tensor
from gkt.errors import ConfigError, DimensionError, UndefinedMetricError


def test_squared_l2_of_constant_is_constant_squared():
    grid = Grid(dim=1, n=64)
    assert squared_l2(Tensor(np.full(64, 3.0)), grid).item() == pytest.approx(9.0, rel=1e-14)


def test_h1_seminorm_of_sine():
    grid = Grid(dim=1, n=256)
    e = Tensor(np.sin(2 * np.pi * grid.axis()))
    assert h1_seminorm_sq(e, grid).item() == pytest.approx(2 * np.pi ** 2, rel=1e-3)


def test_darcy_flux_of_linear_field():
    grid = Grid(dim=2, n=11, boundary="dirichlet")
    x = np.linspace(0.0, 1.0, 11)
    e = Tensor(np.repeat(x[:, None], 11, axis=1))
    interior = 9 * 9 * grid.h ** 2
    assert darcy_flux_sq(e, np.ones((11, 11)), grid).item() == pytest.approx(interior, rel=1e-12)
    assert darcy_flux_sq(e, np.full((11, 11), 2.0), grid).item() == pytest.approx(4 * interior, rel=1e-12)
    with pytest.raises(DimensionError):
        darcy_flux_sq(e, np.ones((10, 10)), grid)


def test_operator_loss_adds_weighted_regularizer():
    grid = Grid(dim=1, n=32)
    target = np.zeros(32)
    pred = Tensor(np.sin(2 * np.pi * grid.axis()))
    plain = operator_loss(pred, target, None, grid, LossConfig()).item()
    assert plain == pytest.approx(0.5, rel=1e-12)
    reg = operator_loss(pred, target, None, grid, LossConfig(gamma=0.5, regularizer="h1-seminorm")).item()
    assert reg == pytest.approx(plain + 0.5 * h1_seminorm_sq(pred, grid).item(), rel=1e-12)


def test_operator_loss_errors():
    grid = Grid(dim=2, n=5, boundary="dirichlet")
    with pytest.raises(DimensionError):
        operator_loss(Tensor(np.zeros((5, 5))), np.zeros((4, 4)), None, grid, LossConfig())
    with pytest.raises(DimensionError):
        operator_loss(Tensor(np.zeros((5, 5))), np.ones((5, 5)), None, grid,
                      LossConfig(gamma=1.0, regularizer="darcy-flux"))
    with pytest.raises(ConfigError):
        operator_loss(Tensor(np.zeros((5, 5))), np.ones((5, 5)), None, grid, LossConfig(gamma=-1.0))
    with pytest.raises(DimensionError):
        batch_operator_loss([], [], [], grid, LossConfig())


def test_batch_loss_is_sample_mean(rng):
    grid = Grid(dim=1, n=16)
    preds = [Tensor(rng.standard_normal(16)) for _ in range(3)]
    targets = [rng.standard_normal(16) for _ in range(3)]
    total = batch_operator_loss(preds, targets, [None] * 3, grid, LossConfig()).item()
    each = [operator_loss(p, t, None, grid, LossConfig()).item() for p, t in zip(preds, targets)]
    assert total == pytest.approx(np.mean(each), rel=1e-12)


def test_default_regularizers_per_problem():
    grid = Grid(dim=2, n=11, boundary="dirichlet")
    assert LossConfig.for_problem("darcy2d", grid) == LossConfig(gamma=0.5 * grid.h, regularizer="darcy-flux")
    assert LossConfig.for_problem("darcy-inverse", grid).regularizer == "none"
    line = Grid(dim=1, n=512)
    assert LossConfig.for_problem("burgers1d", line).gamma == pytest.approx(0.1 / 512)


def test_relative_l2():
    t = np.linspace(1.0, 2.0, 10)
    assert relative_l2(1.01 * t, t) == pytest.approx(0.01, rel=1e-10)
    assert relative_l2(t, t) == 0.0
    with pytest.raises(UndefinedMetricError):
        relative_l2(np.ones(3), np.zeros(3))
    with pytest.raises(DimensionError):
        relative_l2(np.ones(3), np.ones(4))
