import json

import numpy as np
import pytest

from gkt.config.settings import DatasetSpec, GRFSpec
from gkt.data.burgers import burgers_energy, burgers_solve, energy_law_holds
from gkt.data.darcy import coeff_pushforward, darcy_solve_fd
from gkt.data.dataset import (
    Dataset,
    add_noise,
    build_burgers_sweep,
    build_splits,
    dataset_build,
    downsample,
    write_manifest,
)
from gkt.data.grf import grf_sample_1d_periodic, grf_sample_2d_neumann, grf_variance_1d, grf_variance_2d
from gkt.errors import ConfigError, DimensionError, FormatError, UnsupportedSizeError
from gkt.utils.binary_io import git_blob_hash

TINY_BURGERS = DatasetSpec(problem="burgers1d", n_f=32, n_c=32, generation_n=128, t_end=0.05, dt=1e-3)
TINY_INVERSE = DatasetSpec(problem="darcy-inverse", n_f=9, n_c=5, generation_n=17, noise=0.1)


# -- Gaussian random fields ------------------------------------------------

def test_grf_1d_point_variance():
    rng = np.random.default_rng(11)
    draws = np.stack([grf_sample_1d_periodic(64, seed=rng) for _ in range(2000)])
    empirical = draws.var(axis=0).mean()
    assert empirical == pytest.approx(grf_variance_1d(64), rel=0.1)


def test_grf_2d_point_variance():
    rng = np.random.default_rng(12)
    draws = np.stack([grf_sample_2d_neumann(17, seed=rng) for _ in range(4000)])
    empirical = draws[:, 8, 8].var()
    assert empirical == pytest.approx(grf_variance_2d((0.5, 0.5), 17), rel=0.1)


def test_grf_seeded_samples_repeat():
    np.testing.assert_array_equal(grf_sample_1d_periodic(32, seed=4), grf_sample_1d_periodic(32, seed=4))
    assert not np.array_equal(grf_sample_1d_periodic(32, seed=4), grf_sample_1d_periodic(32, seed=5))
    np.testing.assert_array_equal(grf_sample_2d_neumann(9, seed=4), grf_sample_2d_neumann(9, seed=4))


def test_grf_rejects_bad_inputs():
    with pytest.raises(UnsupportedSizeError):
        grf_sample_1d_periodic(48)
    with pytest.raises(ConfigError):
        grf_sample_1d_periodic(32, GRFSpec.darcy())
    with pytest.raises(ConfigError):
        grf_sample_1d_periodic(32, GRFSpec(dim=1, alpha=0.4))


# -- Burgers -------------------------------------------------------------

def test_burgers_constant_is_fixed_point():
    u = burgers_solve(np.full(64, 0.7), t_end=0.1, dt=1e-2)
    np.testing.assert_allclose(u, 0.7, atol=1e-12)


def test_burgers_energy_decays():
    u0 = grf_sample_1d_periodic(256, seed=3)
    u1 = burgers_solve(u0, t_end=0.1, dt=5e-4)
    assert energy_law_holds(u0, u1)
    assert burgers_energy(u1) < burgers_energy(u0)


def test_burgers_time_stepping_self_convergence():
    x = np.arange(64) / 64
    u0 = 0.5 * np.sin(2 * np.pi * x)
    coarse, mid, fine = (burgers_solve(u0, t_end=0.2, dt=dt) for dt in (1e-2, 5e-3, 2.5e-3))
    first = np.max(np.abs(coarse - mid))
    second = np.max(np.abs(mid - fine))
    assert second < first / 6.0


def test_burgers_rejects_bad_grids_and_steps():
    with pytest.raises(UnsupportedSizeError):
        burgers_solve(np.zeros(12))
    with pytest.raises(ConfigError):
        burgers_solve(np.zeros(16), t_end=0.1, dt=0.03)
    with pytest.raises(ConfigError):
        burgers_solve(np.zeros(16), nu=-1.0)


# -- Darcy ----------------------------------------------------------------

def _manufactured(n):
    x = np.linspace(0.0, 1.0, n)
    gx, gy = np.meshgrid(x, x, indexing="ij")
    exact = np.sin(np.pi * gx) * np.sin(np.pi * gy)
    a = 1.0 + gx

    def forcing(px, py):
        return (-np.pi * np.cos(np.pi * px) * np.sin(np.pi * py)
                + 2.0 * (1.0 + px) * np.pi ** 2 * np.sin(np.pi * px) * np.sin(np.pi * py))

    return np.max(np.abs(darcy_solve_fd(a, f=forcing) - exact))


def test_darcy_second_order_on_manufactured_solution():
    errors = [_manufactured(n) for n in (17, 33, 65)]
    rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all((rates >= 1.8) & (rates <= 2.2)), rates


def test_darcy_solution_positive_inside_zero_on_boundary():
    a = coeff_pushforward(grf_sample_2d_neumann(21, seed=8))
    assert set(np.unique(a)) <= {3.0, 12.0}
    u = darcy_solve_fd(a)
    assert np.all(u[1:-1, 1:-1] > 0)
    for edge in (u[0], u[-1], u[:, 0], u[:, -1]):
        np.testing.assert_array_equal(edge, 0.0)


def test_darcy_rejects_bad_coefficients():
    with pytest.raises(ConfigError):
        darcy_solve_fd(np.zeros((5, 5)))
    with pytest.raises(DimensionError):
        darcy_solve_fd(np.ones((5, 4)))
    with pytest.raises(DimensionError):
        darcy_solve_fd(np.ones((5, 5)), f=lambda x, y: np.ones((4, 4)))


# -- grid transfer and noise ----------------------------------------------

def test_downsample_stride_cases(rng):
    fine = rng.standard_normal(8192)
    np.testing.assert_array_equal(downsample(fine, 512), fine[::16])
    np.testing.assert_array_equal(downsample(fine, factor=16), fine[::16])
    field = rng.standard_normal((421, 421))
    np.testing.assert_array_equal(downsample(field, 141), field[::3, ::3])


def test_downsample_interpolates_unaligned_grids():
    x = np.linspace(0.0, 1.0, 141)
    field = x[:, None] + 2.0 * x[None, :]
    coarse = np.linspace(0.0, 1.0, 43)
    np.testing.assert_allclose(downsample(field, 43), coarse[:, None] + 2.0 * coarse[None, :], atol=1e-12)
    with pytest.raises(DimensionError):
        downsample(np.ones((4, 5)), 2)


def test_add_noise(rng):
    u = rng.standard_normal((9, 9))
    std = np.linspace(0.5, 2.0, 81).reshape(9, 9)
    np.testing.assert_array_equal(add_noise(u, 0.0, std, 1), u)
    noisy = np.stack([add_noise(u, 0.1, std, seed) for seed in range(2000)])
    np.testing.assert_allclose(((noisy - u) / 0.1).std(axis=0).mean() / std.mean(), 1.0, rtol=0.05)
    with pytest.raises(DimensionError):
        add_noise(u, 0.1, np.ones(4), 0)
    with pytest.raises(ConfigError):
        add_noise(u, -0.1, std, 0)


# -- datasets -------------------------------------------------------------

def test_dataset_build_is_deterministic_and_splits_differ():
    a = dataset_build(TINY_BURGERS, 2, seed=9)
    b = dataset_build(TINY_BURGERS, 2, seed=9)
    test = dataset_build(TINY_BURGERS, 2, seed=9, split="test")
    np.testing.assert_array_equal(a.inputs(), b.inputs())
    np.testing.assert_array_equal(a.targets(), b.targets())
    assert not np.array_equal(a.inputs(), test.inputs())
    assert a.energy_pass_rate == 1.0
    with pytest.raises(ConfigError):
        dataset_build(TINY_BURGERS, 1, seed=9, split="valid")


def test_dataset_file_round_trip(tmp_path):
    data = dataset_build(TINY_BURGERS, 2, seed=1)
    path = data.save(tmp_path / "train.gktd")
    loaded = Dataset.load(path)
    assert loaded.spec == data.spec
    assert (loaded.split, loaded.seed, len(loaded)) == ("train", 1, 2)
    np.testing.assert_array_equal(loaded.inputs(), data.inputs())
    np.testing.assert_array_equal(loaded.targets(), data.targets())
    assert loaded.energy_law == data.energy_law


def test_empty_dataset(tmp_path):
    data = dataset_build(TINY_BURGERS, 0, seed=1)
    assert len(data) == 0
    assert data.inputs().shape == (0, 32)
    loaded = Dataset.load(data.save(tmp_path / "empty.gktd"))
    assert len(loaded) == 0


def test_corrupt_dataset_files(tmp_path):
    bad = tmp_path / "bad.gktd"
    bad.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(FormatError):
        Dataset.load(bad)
    good = dataset_build(TINY_BURGERS, 1, seed=1).save(tmp_path / "good.gktd")
    truncated = tmp_path / "truncated.gktd"
    truncated.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(FormatError):
        Dataset.load(truncated)
    with pytest.raises(FormatError):
        Dataset.load(tmp_path / "missing.gktd")


def test_inverse_noise_uses_training_std():
    train, test = build_splits(TINY_INVERSE, 3, 2, seed=5)
    clean = dataset_build(DatasetSpec(problem="darcy-inverse", n_f=9, n_c=5, generation_n=17), 3, seed=5)
    assert test.noise_std is train.noise_std
    np.testing.assert_allclose(train.noise_std, clean.inputs().std(axis=0))
    np.testing.assert_array_equal(train.targets(), clean.targets())
    assert not np.array_equal(train.inputs(), clean.inputs())
    assert train[0].target.shape == (5, 5)
    with pytest.raises(ConfigError):
        dataset_build(TINY_INVERSE, 2, seed=5, split="test")


def test_inverse_noise_without_training_samples_uses_test_std():
    train, test = build_splits(TINY_INVERSE, 0, 2, seed=5)
    clean = dataset_build(DatasetSpec(problem="darcy-inverse", n_f=9, n_c=5, generation_n=17), 2, seed=5,
                          split="test")
    assert len(train) == 0 and train.noise_std is None
    np.testing.assert_allclose(test.noise_std, clean.inputs().std(axis=0))
    np.testing.assert_array_equal(test.targets(), clean.targets())
    assert not np.array_equal(test.inputs(), clean.inputs())


def test_darcy_samples_carry_coefficient():
    spec = DatasetSpec(problem="darcy2d", n_f=9, n_c=5, generation_n=17)
    data = dataset_build(spec, 1, seed=2)
    np.testing.assert_array_equal(data[0].coeff, data[0].input)
    assert data.energy_pass_rate is None


def test_burgers_sweep_shares_fine_solutions():
    sweep = build_burgers_sweep(TINY_BURGERS, (32, 64), 2, seed=3)
    np.testing.assert_array_equal(sweep[64].inputs()[:, ::2], sweep[32].inputs())
    np.testing.assert_array_equal(sweep[64].targets()[:, ::2], sweep[32].targets())


def test_manifest_records_content_hashes(tmp_path):
    data = dataset_build(TINY_BURGERS, 1, seed=1)
    path = data.save(tmp_path / "train.gktd")
    manifest = write_manifest(tmp_path / "manifest.json", {"train": (data, path)})
    entry = manifest["datasets"]["train"]
    assert entry["hash"] == git_blob_hash(path)
    assert entry["count"] == 1
    assert json.loads((tmp_path / "manifest.json").read_text())["datasets"]["train"]["seed"] == 1


@pytest.mark.parametrize("noise", [0.0, 0.01, 0.1])
def test_inverse_noise_levels_accepted(noise):
    DatasetSpec(problem="darcy-inverse", n_f=9, n_c=5, generation_n=17, noise=noise).validate()


@pytest.mark.parametrize("noise", [0.05, 0.5, -0.01])
def test_inverse_noise_levels_outside_the_set_rejected(noise):
    with pytest.raises(ConfigError):
        DatasetSpec(problem="darcy-inverse", n_f=9, n_c=5, generation_n=17, noise=noise).validate()
