"""Benchmark dataset generation, grid transfer and the GKTD file format."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from gkt.config.constants import DATASET_FORMAT_VERSION, DATASET_MAGIC
from gkt.config.settings import DatasetSpec, Grid, GRFSpec
from gkt.data.burgers import burgers_solve, energy_law_holds
from gkt.data.darcy import coeff_pushforward, darcy_solve_fd
from gkt.data.grf import grf_sample_1d_periodic, grf_sample_2d_neumann
from gkt.errors import ConfigError, DimensionError, FormatError, NumericalError
from gkt.services.thread_pool import map_ordered
from gkt.utils.binary_io import git_blob_hash, iter_blobs, read_header, write_blob, write_header
from gkt.utils.interp import interpolation_matrix, resize_array
from gkt.utils.seeding import substream

logger = logging.getLogger(__name__)

SPLITS = ("train", "test")


@dataclass(frozen=True, eq=False)
class DataSample:
    input: np.ndarray
    target: np.ndarray
    input_grid: Grid
    target_grid: Grid
    coeff: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.input.shape != self.input_grid.shape:
            raise DimensionError(f"input shape {self.input.shape} does not match {self.input_grid}")
        if self.target.shape != self.target_grid.shape:
            raise DimensionError(f"target shape {self.target.shape} does not match {self.target_grid}")
        if self.coeff is not None and self.coeff.shape != self.target.shape:
            raise DimensionError(f"coefficient shape {self.coeff.shape} != target shape {self.target.shape}")
        for name in ("input", "target"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericalError(f"sample {name} contains non-finite values")


# -- grid transfer -----------------------------------------------------

def _periodic_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation between periodic grids i/n_in -> i/n_out."""
    extended = interpolation_matrix(n_in + 1, n_out + 1)[:n_out]
    mat = extended[:, :n_in].copy()
    mat[:, 0] += extended[:, n_in]
    return mat


def _apply_axes(field: np.ndarray, mat: np.ndarray) -> np.ndarray:
    out = field
    for axis in range(field.ndim):
        out = np.moveaxis(np.tensordot(mat, np.moveaxis(out, axis, 0), axes=1), 0, axis)
    return out


def downsample(field, n_out: Union[int, Grid, None] = None, *, factor: Optional[int] = None,
               periodic: Optional[bool] = None) -> np.ndarray:
    """Restrict a 1D or square 2D field to ``n_out`` points per axis.

    Uses stride sampling when the coarse points are a subset of the fine
    ones (n_in = s * n_out periodic, n_in - 1 = s * (n_out - 1) otherwise)
    and linear interpolation when they are not. ``periodic`` defaults to
    True for 1D fields and False for 2D fields.
    """
    field = np.asarray(field, dtype=np.float64)
    if field.ndim not in (1, 2) or len(set(field.shape)) != 1:
        raise DimensionError(f"downsample expects a 1D or square 2D field, got {field.shape}")
    if isinstance(n_out, Grid):
        periodic = n_out.boundary == "periodic"
        n_out = n_out.n
    periodic = field.ndim == 1 if periodic is None else periodic
    n_in = field.shape[0]
    if factor is not None:
        if factor < 1:
            raise ConfigError(f"downsample factor must be positive, got {factor}")
        n_out = n_in // factor if periodic else (n_in - 1) // factor + 1
    if n_out is None or n_out < 2:
        raise ConfigError(f"downsample needs a target size of at least 2, got {n_out}")
    if n_out == n_in:
        return field.copy()

    span_in, span_out = (n_in, n_out) if periodic else (n_in - 1, n_out - 1)
    if span_in % span_out == 0:
        step = span_in // span_out
        return field[(slice(None, None, step),) * field.ndim].copy()
    logger.debug("Grid %d -> %d is not stride aligned, interpolating", n_in, n_out)
    if periodic:
        return _apply_axes(field, _periodic_matrix(n_in, n_out))
    return resize_array(field, (n_out,) * field.ndim)


def add_noise(u, eps: float, std, seed: Union[int, np.random.Generator]) -> np.ndarray:
    """u + eps * eta with eta_i ~ N(0, std_i^2) independent."""
    u = np.asarray(u, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if eps < 0:
        raise ConfigError(f"noise level must be non-negative, got {eps}")
    try:
        std = np.broadcast_to(std, u.shape)
    except ValueError as exc:
        raise DimensionError(f"noise std shape {std.shape} does not match field {u.shape}") from exc
    if eps == 0.0:
        return u.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return u + eps * std * rng.standard_normal(u.shape)


# -- generation --------------------------------------------------------

def burgers_pair(spec: DatasetSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Initial condition and solution at t_end on the generation grid."""
    u0 = grf_sample_1d_periodic(spec.generation_n, GRFSpec.burgers(), rng)
    return u0, burgers_solve(u0, nu=spec.nu, t_end=spec.t_end, dt=spec.dt)


def darcy_pair(spec: DatasetSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Coefficient in {3, 12} and FD solution on the generation grid."""
    a = coeff_pushforward(grf_sample_2d_neumann(spec.generation_n, GRFSpec.darcy(), rng))
    return a, darcy_solve_fd(a)


def _split_index(split: str) -> int:
    try:
        return SPLITS.index(split)
    except ValueError as exc:
        raise ConfigError(f"Unknown split {split!r}; expected one of {SPLITS}") from exc


def generate_sample(spec: DatasetSpec, seed: int, split: str, index: int) -> Tuple[DataSample, bool]:
    """Clean sample ``index`` of ``split`` plus its energy-law flag (always True for 2D)."""
    rng = substream(seed, "datagen", _split_index(split), index)
    in_grid, out_grid = spec.input_grid(), spec.target_grid()
    if spec.problem == "burgers1d":
        u0, u1 = burgers_pair(spec, rng)
        holds = energy_law_holds(u0, u1)
        if not holds:
            logger.warning("Burgers sample %s/%d violates the energy law", split, index)
        sample = DataSample(downsample(u0, in_grid), downsample(u1, out_grid), in_grid, out_grid)
        return sample, holds
    a, u = darcy_pair(spec, rng)
    if spec.problem == "darcy2d":
        a_f = downsample(a, in_grid)
        return DataSample(a_f, downsample(u, out_grid), in_grid, out_grid, coeff=a_f), True
    return DataSample(downsample(u, in_grid), downsample(a, out_grid), in_grid, out_grid), True


@dataclass
class Dataset:
    spec: DatasetSpec
    split: str
    seed: int
    samples: List[DataSample] = field(default_factory=list)
    energy_law: List[bool] = field(default_factory=list)
    noise_std: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, index: int) -> DataSample:
        return self.samples[index]

    def inputs(self) -> np.ndarray:
        return np.stack([s.input for s in self.samples]) if self.samples else np.zeros((0,) + self.spec.input_grid().shape)

    def targets(self) -> np.ndarray:
        return np.stack([s.target for s in self.samples]) if self.samples else np.zeros((0,) + self.spec.target_grid().shape)

    @property
    def energy_pass_rate(self) -> Optional[float]:
        if self.spec.problem != "burgers1d" or not self.energy_law:
            return None
        return sum(self.energy_law) / len(self.energy_law)

    def header(self) -> Dict:
        return {
            "problem": self.spec.problem,
            "split": self.split,
            "seed": self.seed,
            "count": len(self.samples),
            "spec": self.spec.to_dict(),
            "input_grid": self.spec.input_grid().to_dict(),
            "target_grid": self.spec.target_grid().to_dict(),
            "has_coeff": self.spec.problem == "darcy2d",
            "has_noise_std": self.noise_std is not None,
            "energy_law": list(self.energy_law),
        }

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = self.header()
        with path.open("wb") as fh:
            write_header(fh, DATASET_MAGIC, DATASET_FORMAT_VERSION, header)
            for i, sample in enumerate(self.samples):
                write_blob(fh, f"input/{i}", sample.input)
                write_blob(fh, f"target/{i}", sample.target)
                if header["has_coeff"]:
                    write_blob(fh, f"coeff/{i}", sample.coeff)
            if self.noise_std is not None:
                write_blob(fh, "noise_std", self.noise_std)
        logger.info("Wrote %d %s samples to %s", len(self.samples), self.split, path)
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Dataset":
        path = Path(path)
        try:
            with path.open("rb") as fh:
                _, header = read_header(fh, DATASET_MAGIC, DATASET_FORMAT_VERSION)
                blobs = list(iter_blobs(fh))
        except OSError as exc:
            raise FormatError(f"cannot read dataset {path}: {exc}") from exc
        try:
            spec = DatasetSpec.from_dict(header["spec"])
            count = int(header["count"])
            has_coeff = bool(header["has_coeff"])
            names = []
            for i in range(count):
                names += [f"input/{i}", f"target/{i}"] + ([f"coeff/{i}"] if has_coeff else [])
            if header.get("has_noise_std"):
                names.append("noise_std")
            if [name for name, _ in blobs] != names:
                raise FormatError(f"dataset {path} blobs do not match the declared layout")
            arrays = dict(blobs)
            in_grid, out_grid = spec.input_grid(), spec.target_grid()
            samples = [
                DataSample(arrays[f"input/{i}"], arrays[f"target/{i}"], in_grid, out_grid,
                           coeff=arrays.get(f"coeff/{i}"))
                for i in range(count)
            ]
            return cls(spec=spec, split=str(header["split"]), seed=int(header["seed"]),
                       samples=samples, energy_law=[bool(v) for v in header.get("energy_law", [])],
                       noise_std=arrays.get("noise_std"))
        except FormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed dataset header in {path}: {exc}") from exc


def _noisy(dataset: Dataset, std: np.ndarray) -> Dataset:
    split_index = _split_index(dataset.split)
    eps = dataset.spec.noise
    samples = [
        DataSample(add_noise(s.input, eps, std, substream(dataset.seed, "noise", split_index, i)),
                   s.target, s.input_grid, s.target_grid, s.coeff)
        for i, s in enumerate(dataset.samples)
    ]
    return Dataset(dataset.spec, dataset.split, dataset.seed, samples, dataset.energy_law, std)


def dataset_build(spec: DatasetSpec, count: int, seed: int, split: str = "train",
                  noise_std: Optional[np.ndarray] = None, own_std: bool = False) -> Dataset:
    """Generate ``count`` independent samples; train and test use disjoint seed streams.

    For the noisy inverse problem the per-point standard deviation comes from
    the clean inputs of the training split; other splits must pass it in, or set
    ``own_std`` to scale by their own clean inputs.
    """
    spec.validate()
    if count < 0:
        raise ConfigError(f"sample count must be non-negative, got {count}")
    _split_index(split)
    logger.info("Generating %d %s samples for %s", count, split, spec.problem)
    results = map_ordered(lambda i: generate_sample(spec, seed, split, i), range(count))
    dataset = Dataset(spec=spec, split=split, seed=seed,
                      samples=[s for s, _ in results], energy_law=[ok for _, ok in results])
    if spec.problem != "darcy-inverse" or spec.noise == 0.0 or count == 0:
        return dataset
    if noise_std is None:
        if split != "train" and not own_std:
            raise ConfigError("noise for a non-training split needs the training per-point std")
        noise_std = dataset.inputs().std(axis=0)
    return _noisy(dataset, np.asarray(noise_std, dtype=np.float64))


def build_splits(spec: DatasetSpec, train_count: int, test_count: int, seed: int) -> Tuple[Dataset, Dataset]:
    train = dataset_build(spec, train_count, seed, "train")
    own_std = train.noise_std is None and spec.problem == "darcy-inverse" and spec.noise > 0.0
    if own_std and test_count > 0:
        logger.warning("Empty training split: scaling %s test noise by the test inputs' own std", spec.problem)
    test = dataset_build(spec, test_count, seed, "test", noise_std=train.noise_std, own_std=own_std)
    return train, test


def build_burgers_sweep(spec: DatasetSpec, resolutions: Sequence[int], count: int, seed: int,
                        split: str = "train") -> Dict[int, Dataset]:
    """One Burgers dataset per resolution, all restricted from the same fine solutions."""
    if spec.problem != "burgers1d":
        raise ConfigError("the resolution sweep applies to burgers1d only")
    split_index = _split_index(split)
    pairs = map_ordered(lambda i: burgers_pair(spec, substream(seed, "datagen", split_index, i)), range(count))
    flags = [energy_law_holds(u0, u1) for u0, u1 in pairs]
    sweep = {}
    for n in resolutions:
        sub = DatasetSpec.from_dict({**spec.to_dict(), "n_f": n, "n_c": n})
        grid = sub.input_grid()
        samples = [DataSample(downsample(u0, grid), downsample(u1, grid), grid, grid) for u0, u1 in pairs]
        sweep[n] = Dataset(spec=sub, split=split, seed=seed, samples=samples, energy_law=list(flags))
    return sweep


def write_manifest(path: Union[str, Path], files: Mapping[str, Tuple[Dataset, Path]],
                   run_manifest: Optional[Union[str, Path]] = None) -> Dict:
    """JSON manifest: counts, spec, seeds and git-style content hashes per split file."""
    entries = {}
    for name, (dataset, file_path) in files.items():
        entries[name] = {
            "path": str(file_path),
            "split": dataset.split,
            "count": len(dataset),
            "seed": dataset.seed,
            "spec": dataset.spec.to_dict(),
            "hash": git_blob_hash(file_path),
            "energy_pass_rate": dataset.energy_pass_rate,
            "noise_std_hash": (
                None if dataset.noise_std is None
                else hashlib.sha1(np.ascontiguousarray(dataset.noise_std).tobytes()).hexdigest()
            ),
        }
    manifest = {"format_version": DATASET_FORMAT_VERSION, "datasets": entries,
                "run_manifest": None if run_manifest is None else str(run_manifest)}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return manifest


__all__ = [
    "DataSample",
    "Dataset",
    "SPLITS",
    "downsample",
    "add_noise",
    "burgers_pair",
    "darcy_pair",
    "generate_sample",
    "dataset_build",
    "build_splits",
    "build_burgers_sweep",
    "write_manifest",
]
