"""Typed, validated configuration objects and the reference presets."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Tuple, Type, TypeVar

import numpy as np

from gkt.config import constants as C
from gkt.errors import ConfigError

logger = logging.getLogger(__name__)

T = TypeVar("T")


class _DictMixin:
    """JSON-friendly round trip shared by every config dataclass."""

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls: Type[T], data: Mapping[str, Any]) -> T:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"Unknown {cls.__name__} fields: {sorted(unknown)}")
        obj = cls(**{k: v for k, v in data.items() if k in names})
        obj.validate()
        return obj

    def validate(self) -> None:  # pragma: no cover - overridden
        pass


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class Grid(_DictMixin):
    """Uniform grid on [0, 1]^dim."""

    dim: int
    n: int
    boundary: str = "periodic"

    def validate(self) -> None:
        _require(self.dim in (1, 2), f"Grid dim must be 1 or 2, got {self.dim}")
        _require(self.n >= 2, f"Grid needs at least 2 points per axis, got {self.n}")
        _require(self.boundary in ("periodic", "dirichlet", "neumann"),
                 f"Unknown boundary type {self.boundary!r}")

    @property
    def h(self) -> float:
        if self.boundary == "periodic":
            return 1.0 / self.n
        return 1.0 / (self.n - 1)

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def num_points(self) -> int:
        return self.n ** self.dim

    def axis(self) -> np.ndarray:
        if self.boundary == "periodic":
            return np.arange(self.n, dtype=np.float64) / self.n
        return np.linspace(0.0, 1.0, self.n)

    def points(self) -> np.ndarray:
        """Coordinates as a (num_points, dim) array, row-major over axes."""
        x = self.axis()
        if self.dim == 1:
            return x[:, None]
        gx, gy = np.meshgrid(x, x, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


@dataclass(frozen=True)
class GRFSpec(_DictMixin):
    """Covariance sigma^2 (-Laplacian + tau^2 I)^(-alpha)."""

    dim: int = 1
    sigma: float = C.BURGERS_GRF[0]
    tau2: float = C.BURGERS_GRF[1]
    alpha: float = C.BURGERS_GRF[2]
    boundary: str = "periodic"

    def validate(self) -> None:
        _require(self.dim in (1, 2), f"GRF dim must be 1 or 2, got {self.dim}")
        _require(self.sigma > 0, "GRF sigma must be positive")
        _require(self.tau2 > 0, "GRF tau^2 must be positive")
        _require(self.alpha > self.dim / 2.0,
                 f"GRF alpha={self.alpha} must exceed dim/2 for continuous samples")

    @classmethod
    def burgers(cls) -> "GRFSpec":
        sigma, tau2, alpha = C.BURGERS_GRF
        return cls(dim=1, sigma=sigma, tau2=tau2, alpha=alpha, boundary="periodic")

    @classmethod
    def darcy(cls) -> "GRFSpec":
        sigma, tau2, alpha = C.DARCY_GRF
        return cls(dim=2, sigma=sigma, tau2=tau2, alpha=alpha, boundary="neumann")


@dataclass(frozen=True)
class AttentionConfig(_DictMixin):
    variant: str = "galerkin"
    ln_scheme: str = "pre-dot-product"
    d_model: int = 96
    n_head: int = 1
    coord_dim: int = 1
    init_eta: float = 1e-2
    init_delta: float = 1e-2
    attn_dropout: float = 0.0
    ffn_dropout: float = 0.0
    ffn_ratio: int = C.DEFAULT_FFN_RATIO
    activation: str = "silu"

    def validate(self) -> None:
        _require(self.variant in C.ATTENTION_VARIANTS, f"Unknown attention variant {self.variant!r}")
        _require(self.ln_scheme in C.LN_SCHEMES, f"Unknown LN scheme {self.ln_scheme!r}")
        _require(self.d_model >= 1 and self.n_head >= 1, "d_model and n_head must be positive")
        _require(self.d_model % self.n_head == 0,
                 f"n_head={self.n_head} does not divide d_model={self.d_model}")
        _require(self.coord_dim >= 1, "coord_dim must be positive")
        _require(self.init_eta >= 0 and self.init_delta >= 0, "init_eta/init_delta must be non-negative")
        for rate in (self.attn_dropout, self.ffn_dropout):
            _require(0.0 <= rate < 1.0, f"Dropout rate {rate} outside [0, 1)")
        _require(self.ffn_ratio >= 1, "ffn_ratio must be positive")
        _require(self.activation in C.ACTIVATIONS, f"Unknown activation {self.activation!r}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_head

    @property
    def head_width(self) -> int:
        """Per-head width after the coordinates are concatenated."""
        return self.head_dim + self.coord_dim


@dataclass(frozen=True)
class ModelConfig(_DictMixin):
    problem: str = "burgers1d"
    n_layers: int = 4
    d_model: int = 96
    n_head: int = 1
    decoder: str = "spectral-conv"
    n_modes: int = 16
    activation: str = "silu"
    n_f: int = 512
    n_c: int = 512
    variant: str = "galerkin"
    ln_scheme: str = "pre-dot-product"
    init_eta: float = 1e-2
    init_delta: float = 1e-2
    ffn_ratio: int = C.DEFAULT_FFN_RATIO
    decoder_width: int = 48
    attn_dropout: float = 0.0
    ffn_dropout: float = 0.0
    downsample_dropout: float = 0.0
    upsample_dropout: float = 0.0
    decoder_dropout: float = 0.0

    def validate(self) -> None:
        _require(self.problem in C.PROBLEMS, f"Unknown problem {self.problem!r}")
        _require(self.n_layers >= 0, "n_layers must be non-negative")
        _require(self.decoder in C.DECODERS, f"Unknown decoder {self.decoder!r}")
        _require(self.activation in C.ACTIVATIONS, f"Unknown activation {self.activation!r}")
        if self.problem == "darcy-inverse":
            _require(self.decoder == "pointwise-ffn", "darcy-inverse requires the pointwise-ffn decoder")
        if self.problem == "burgers1d":
            _require(self.n_f == self.n_c, "burgers1d uses a single grid (n_f == n_c)")
        else:
            _require(self.n_f >= self.n_c >= 2, "need n_f >= n_c >= 2 for 2D problems")
        if self.decoder == "spectral-conv":
            _require(self.n_modes >= 1, "n_modes must be positive")
            _require(self.n_modes <= self.n_f // 2,
                     f"n_modes={self.n_modes} exceeds half the grid size {self.n_f}")
            _require(self.decoder_width >= 1, "decoder_width must be positive")
        for rate in (self.downsample_dropout, self.upsample_dropout, self.decoder_dropout):
            _require(0.0 <= rate < 1.0, f"Dropout rate {rate} outside [0, 1)")
        self.attention_config().validate()

    @property
    def coord_dim(self) -> int:
        return 1 if self.problem == "burgers1d" else 2

    @property
    def decoder_activation(self) -> str:
        """ReLU next to rough (piecewise-constant) targets, the model activation otherwise."""
        return "relu" if self.problem == "darcy-inverse" else self.activation

    @property
    def n_m(self) -> int:
        """Intermediate CiNN size: nearest even integer to sqrt(n_f * n_c)."""
        mid = math.sqrt(self.n_f * self.n_c)
        return max(2, 2 * int(round(mid / 2.0)))

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(
            variant=self.variant,
            ln_scheme=self.ln_scheme,
            d_model=self.d_model,
            n_head=self.n_head,
            coord_dim=self.coord_dim,
            init_eta=self.init_eta,
            init_delta=self.init_delta,
            attn_dropout=self.attn_dropout,
            ffn_dropout=self.ffn_dropout,
            ffn_ratio=self.ffn_ratio,
            activation=self.activation,
        )

    def input_grid(self) -> Grid:
        if self.problem == "burgers1d":
            return Grid(dim=1, n=self.n_f, boundary="periodic")
        return Grid(dim=2, n=self.n_f, boundary="dirichlet")

    def target_grid(self) -> Grid:
        if self.problem == "darcy-inverse":
            return Grid(dim=2, n=self.n_c, boundary="dirichlet")
        return self.input_grid()


@dataclass(frozen=True)
class DatasetSpec(_DictMixin):
    """What to generate: fields on ``generation_n`` grids, stride-sampled to n_f / n_c."""

    problem: str = "burgers1d"
    n_f: int = 512
    n_c: int = 512
    generation_n: int = C.BURGERS_FINE_N
    noise: float = 0.0
    nu: float = C.BURGERS_VISCOSITY
    t_end: float = C.BURGERS_T_END
    dt: float = C.BURGERS_DT

    def validate(self) -> None:
        _require(self.problem in C.PROBLEMS, f"Unknown problem {self.problem!r}")
        _require(self.noise >= 0.0, f"noise level {self.noise} must be non-negative")
        if self.problem == "burgers1d":
            _require(self.n_f == self.n_c, "burgers1d uses a single grid (n_f == n_c)")
            _require(self.generation_n >= self.n_f >= 2, "need generation_n >= n >= 2")
            _require(self.generation_n & (self.generation_n - 1) == 0,
                     f"Burgers generation grid must be a power of two, got {self.generation_n}")
            _require(self.dt > 0 and self.t_end >= 0 and self.nu >= 0, "invalid Burgers time stepping")
        else:
            _require(self.generation_n >= self.n_f >= self.n_c >= 3,
                     "need generation_n >= n_f >= n_c >= 3 for 2D problems")
        if self.noise > 0:
            _require(self.problem == "darcy-inverse", "noise applies to the darcy-inverse problem only")
            _require(self.noise in C.INVERSE_NOISE_LEVELS,
                     f"noise level {self.noise} must be one of {C.INVERSE_NOISE_LEVELS}")

    def input_grid(self) -> Grid:
        if self.problem == "burgers1d":
            return Grid(dim=1, n=self.n_f, boundary="periodic")
        return Grid(dim=2, n=self.n_f, boundary="dirichlet")

    def target_grid(self) -> Grid:
        if self.problem == "darcy-inverse":
            return Grid(dim=2, n=self.n_c, boundary="dirichlet")
        return self.input_grid()

    @classmethod
    def for_problem(cls, problem: str, n_f: Optional[int] = None, n_c: Optional[int] = None,
                    **overrides: Any) -> "DatasetSpec":
        """Reference generation settings for a problem, grid sizes overridable."""
        if problem == "burgers1d":
            n = n_f or n_c or 512
            base = cls(problem=problem, n_f=n, n_c=n, generation_n=C.BURGERS_FINE_N)
        elif problem == "darcy2d":
            n = n_f or 141
            base = cls(problem=problem, n_f=n, n_c=n_c or 43, generation_n=C.DARCY_GENERATION_N)
        else:
            base = cls(problem=problem, n_f=n_f or 141, n_c=n_c or 36,
                       generation_n=C.DARCY_GENERATION_N)
        try:
            spec = dataclasses.replace(base, **overrides)
        except TypeError as exc:
            raise ConfigError(f"Invalid dataset override: {exc}") from exc
        spec.validate()
        return spec


@dataclass(frozen=True)
class LossConfig(_DictMixin):
    gamma: float = 0.0
    regularizer: str = "none"

    def validate(self) -> None:
        _require(self.gamma >= 0.0, f"Regularizer strength gamma={self.gamma} must be non-negative")
        _require(self.regularizer in C.REGULARIZERS, f"Unknown regularizer {self.regularizer!r}")

    @classmethod
    def for_problem(cls, problem: str, grid: Grid, gamma: Optional[float] = None) -> "LossConfig":
        """Default regularizer per problem; gamma defaults to a multiple of h."""
        if problem == "burgers1d":
            kind, factor = "h1-seminorm", C.BURGERS_GAMMA_FACTOR
        elif problem == "darcy2d":
            kind, factor = "darcy-flux", C.DARCY_GAMMA_FACTOR
        else:
            kind, factor = "none", 0.0
        cfg = cls(gamma=factor * grid.h if gamma is None else gamma, regularizer=kind)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class TrainConfig(_DictMixin):
    epochs: int = 100
    batch_size: int = 8
    lr_max: float = C.LR_MAX
    warmup_fraction: float = C.WARMUP_FRACTION
    start_factor: float = C.LR_START_FACTOR
    end_factor: float = C.LR_END_FACTOR
    clip_norm: float = C.GRAD_CLIP_NORM
    gamma: Optional[float] = None
    regularizer: Optional[str] = None
    seed: int = C.DEFAULT_SEED

    def validate(self) -> None:
        _require(self.epochs >= 0, "epochs must be non-negative")
        _require(self.batch_size >= 1, "batch_size must be positive")
        _require(self.lr_max > 0, "lr_max must be positive")
        _require(0.0 < self.warmup_fraction < 1.0, "warmup_fraction must lie in (0, 1)")
        _require(0.0 < self.start_factor <= 1.0 and 0.0 < self.end_factor <= 1.0,
                 "lr start/end factors must lie in (0, 1]")
        _require(self.clip_norm > 0, "clip_norm must be positive")
        if self.gamma is not None:
            _require(self.gamma >= 0, f"gamma={self.gamma} must be non-negative")
        if self.regularizer is not None:
            _require(self.regularizer in C.REGULARIZERS, f"Unknown regularizer {self.regularizer!r}")

    def loss_config(self, problem: str, grid: Grid) -> LossConfig:
        base = LossConfig.for_problem(problem, grid, self.gamma)
        if self.regularizer is not None:
            base = dataclasses.replace(base, regularizer=self.regularizer)
        base.validate()
        return base


@dataclass(frozen=True)
class VerifyConfig(_DictMixin):
    trials: int = 100
    sizes: Tuple[int, ...] = (16, 64, 256)
    dims: Tuple[int, ...] = (4, 8)
    families: Tuple[str, ...] = ("fourier", "gaussian")
    lbb_sizes: Tuple[int, ...] = (32, 128, 512)
    mc_points: int = 50
    mc_samples: int = 500
    restarts: int = 20
    inject_fault: bool = False
    seed: int = C.DEFAULT_SEED

    def validate(self) -> None:
        _require(self.trials >= 0, "trials must be non-negative")
        _require(len(self.sizes) > 0 and len(self.dims) > 0, "sizes and dims must be non-empty")
        _require(all(d >= 1 for d in self.dims), "basis dimensions must be positive")
        _require(all(n > max(self.dims) for n in self.sizes + self.lbb_sizes),
                 f"every size must exceed the largest basis dimension {max(self.dims)}")
        _require(len(self.families) > 0 and all(f in ("fourier", "gaussian") for f in self.families),
                 f"basis families must be fourier/gaussian, got {self.families}")
        _require(self.mc_points >= 1 and self.mc_samples >= 1 and self.restarts >= 1,
                 "Monte-Carlo counts and restarts must be positive")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "VerifyConfig":
        data = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return super().from_dict(data)


def burgers_preset(n: int = 512, **overrides: Any) -> ModelConfig:
    """4 layers, d_model 96, one head, 2-layer spectral decoder with 16 modes."""
    attn, ffn, down, up, dec = C.BURGERS_DROPOUTS
    cfg = ModelConfig(
        problem="burgers1d", n_layers=4, d_model=96, n_head=1,
        decoder="spectral-conv", n_modes=16, activation="silu",
        n_f=n, n_c=n, decoder_width=48,
        attn_dropout=attn, ffn_dropout=ffn,
        downsample_dropout=down, upsample_dropout=up, decoder_dropout=dec,
    )
    return _finish(cfg, overrides)


def darcy_preset(n_f: int = 141, n_c: int = 43, **overrides: Any) -> ModelConfig:
    """6 layers, d_model 128, four heads, 2D spectral decoder (width 32, 12 modes)."""
    attn, ffn, down, up, dec = C.DARCY_DROPOUTS
    cfg = ModelConfig(
        problem="darcy2d", n_layers=6, d_model=128, n_head=4,
        decoder="spectral-conv", n_modes=12, activation="silu",
        n_f=n_f, n_c=n_c, decoder_width=32,
        attn_dropout=attn, ffn_dropout=ffn,
        downsample_dropout=down, upsample_dropout=up, decoder_dropout=dec,
    )
    return _finish(cfg, overrides)


def darcy_inverse_preset(n_f: int = 141, n_c: int = 36, **overrides: Any) -> ModelConfig:
    """6 layers, d_model 192, four heads, pointwise ReLU decoder on the coarse grid."""
    attn, ffn, down, up, dec = C.INVERSE_DROPOUTS
    cfg = ModelConfig(
        problem="darcy-inverse", n_layers=6, d_model=192, n_head=4,
        decoder="pointwise-ffn", n_modes=0, activation="silu",
        n_f=n_f, n_c=n_c, decoder_width=192,
        attn_dropout=attn, ffn_dropout=ffn,
        downsample_dropout=down, upsample_dropout=up, decoder_dropout=dec,
    )
    return _finish(cfg, overrides)


def preset_for(problem: str, **overrides: Any) -> ModelConfig:
    builders = {
        "burgers1d": burgers_preset,
        "darcy2d": darcy_preset,
        "darcy-inverse": darcy_inverse_preset,
    }
    try:
        builder = builders[problem]
    except KeyError as exc:
        raise ConfigError(f"Unknown problem {problem!r}") from exc
    return builder(**overrides)


def _finish(cfg: ModelConfig, overrides: Mapping[str, Any]) -> ModelConfig:
    try:
        cfg = dataclasses.replace(cfg, **overrides)
    except TypeError as exc:
        raise ConfigError(f"Invalid preset override: {exc}") from exc
    cfg.validate()
    logger.debug("Resolved model config: %s", cfg)
    return cfg


__all__ = [
    "Grid",
    "GRFSpec",
    "DatasetSpec",
    "AttentionConfig",
    "ModelConfig",
    "LossConfig",
    "TrainConfig",
    "VerifyConfig",
    "burgers_preset",
    "darcy_preset",
    "darcy_inverse_preset",
    "preset_for",
]
