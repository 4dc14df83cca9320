"""End-to-end operator learners built from the encoder stack.

burgers1d:     (u0, x) -> FFN extractor -> encoder -> 1D spectral decoder
darcy2d:       a -> normalize -> CiNN down -> encoder -> CiNN up -> (+ fine coords)
               -> 2D spectral decoder -> denormalize -> zero boundary ring
darcy-inverse: noisy u -> normalize -> CiNN down -> encoder -> (+ coarse coords)
               -> pointwise FFN decoder on the coarse grid
"""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from gkt.config.constants import DEFAULT_SEED
from gkt.config.settings import Grid, ModelConfig
from gkt.core.attention import Encoder, LatentRep
from gkt.core.cost_meter import cost_scope
from gkt.core.layers import Conv2d, Dropout, FeedForward, Linear, Module
from gkt.core.normalizer import GaussianNormalizer
from gkt.core.tensor import (
    Parameter,
    Tensor,
    activation,
    complex_from_pair,
    concat,
    fft,
    matmul,
    pad,
    real,
    reshape,
    transpose,
)
from gkt.errors import ConfigError, DimensionError
from gkt.utils.interp import interpolation_matrix
from gkt.utils.seeding import substream

logger = logging.getLogger(__name__)


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def bilinear_resize(field: Tensor, out_h: int, out_w: int) -> Tensor:
    """Align-corners bilinear resize of a (c, H, W) field."""
    if field.ndim != 3:
        raise DimensionError(f"bilinear_resize expects (c, H, W), got {field.shape}")
    _, height, width = field.shape
    if (height, width) == (out_h, out_w):
        return field
    rows = Tensor(interpolation_matrix(height, out_h))
    cols = Tensor(interpolation_matrix(width, out_w).T)
    return matmul(matmul(rows, field), cols)


class FeedForwardExtractor(Module):
    """Shared two-layer map applied at every position."""

    def __init__(self, c_in: int, d_model: int, rng: np.random.Generator, act: str = "silu") -> None:
        super().__init__()
        self.fc1 = Linear(c_in, d_model, rng)
        self.fc2 = Linear(d_model, d_model, rng)
        self.act_name = act

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(activation(self.act_name)(self.fc1(x)))


def ffn_extractor(x: Tensor, params: FeedForwardExtractor) -> Tensor:
    return params(x)


class CiNNDownsample(Module):
    """conv -> resize to n_m -> three conv blocks with skips -> resize to n_c."""

    def __init__(self, c_in: int, d_model: int, n_m: int, n_c: int, rng: np.random.Generator,
                 act: str = "silu", rate: float = 0.0) -> None:
        super().__init__()
        self.conv_in = Conv2d(c_in, d_model, rng)
        self.blocks = [Conv2d(d_model, d_model, rng) for _ in range(3)]
        self.drop = Dropout(rate)
        self.n_m = n_m
        self.n_c = n_c
        self.act_name = act

    def forward(self, x: Tensor) -> Tensor:
        act = activation(self.act_name)
        h = bilinear_resize(self.conv_in(x), self.n_m, self.n_m)
        for conv in self.blocks:
            h = h + act(conv(h))
        return bilinear_resize(self.drop(h), self.n_c, self.n_c)


def cinn_downsample(x: Tensor, params: CiNNDownsample) -> Tensor:
    return params(x)


class CiNNUpsample(Module):
    """resize to n_m -> one channel-preserving conv -> resize to n_f."""

    def __init__(self, d_model: int, n_m: int, n_f: int, rng: np.random.Generator, rate: float = 0.0) -> None:
        super().__init__()
        self.conv = Conv2d(d_model, d_model, rng)
        self.drop = Dropout(rate)
        self.n_m = n_m
        self.n_f = n_f

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv(bilinear_resize(x, self.n_m, self.n_m))
        return bilinear_resize(self.drop(h), self.n_f, self.n_f)


def cinn_upsample(x: Tensor, params: CiNNUpsample) -> Tensor:
    return params(x)


class SpectralLayer(Module):
    """Learned complex weights on the retained low modes plus a pointwise bypass.

    Acts on channels-last fields whose spatial extents are powers of two.
    """

    def __init__(self, width: int, modes: int, dim: int, rng: np.random.Generator) -> None:
        super().__init__()
        scale = 1.0 / (width * width)
        shape = (modes, width, width, 2) if dim == 1 else (2, modes, modes, width, width, 2)
        self.weight = Parameter(scale * rng.random(shape))
        self.bypass = Linear(width, width, rng)
        self.modes = modes
        self.dim = dim

    def _mix(self, block: Tensor, weights: Tensor) -> Tensor:
        """Per-mode channel mixing: (..., w) x (..., w, w) -> (..., w)."""
        lead = block.shape[:-1]
        width = block.shape[-1]
        count = int(np.prod(lead))
        out = matmul(reshape(block, (count, 1, width)), reshape(weights, (count, width, width)))
        return reshape(out, lead + (width,))

    def spectral(self, x: Tensor) -> Tensor:
        m = self.modes
        weights = complex_from_pair(self.weight)
        if self.dim == 1:
            n = x.shape[0]
            low = self._mix(fft(x, axis=0)[:m], weights)
            full = pad(low, ((0, n - m), (0, 0)))
            return real(fft(full, axis=0, inverse=True))
        rows, cols, width = x.shape
        spectrum = fft(fft(x, axis=0), axis=1)
        top = self._mix(spectrum[:m, :m], weights[0])
        bottom = self._mix(spectrum[rows - m:, :m], weights[1])
        parts = [top]
        if rows > 2 * m:
            parts.append(Tensor(np.zeros((rows - 2 * m, m, width), dtype=np.complex128)))
        parts.append(bottom)
        full = pad(concat(parts, axis=0), ((0, 0), (0, cols - m), (0, 0)))
        return real(fft(fft(full, axis=1, inverse=True), axis=0, inverse=True))

    def forward(self, x: Tensor) -> Tensor:
        return self.spectral(x) + self.bypass(x)


class SpectralDecoder(Module):
    """lift -> two spectral layers with activation -> linear head to one channel."""

    def __init__(self, d_in: int, width: int, modes: int, dim: int, rng: np.random.Generator,
                 act: str = "silu", rate: float = 0.0, n_layers: int = 2) -> None:
        super().__init__()
        self.lift = Linear(d_in, width, rng)
        self.layers = [SpectralLayer(width, modes, dim, rng) for _ in range(n_layers)]
        self.head = Linear(width, 1, rng)
        self.drop = Dropout(rate)
        self.modes = modes
        self.dim = dim
        self.act_name = act

    def forward(self, x: Tensor) -> Tensor:
        """(n, d_in) in 1D or channels-first (d_in, H, W) in 2D."""
        if self.dim == 2:
            if x.ndim != 3:
                raise DimensionError(f"2D decoder expects (c, H, W), got {x.shape}")
            x = transpose(x, (1, 2, 0))
        elif x.ndim != 2:
            raise DimensionError(f"1D decoder expects (n, c), got {x.shape}")
        spatial = x.shape[:-1]
        if self.modes > min(spatial) // 2:
            raise ConfigError(f"n_modes={self.modes} exceeds half the grid extent {min(spatial)}")
        act = activation(self.act_name)
        h = self.lift(x)
        padded = tuple(_next_pow2(s) for s in spatial)
        if padded != spatial:
            h = pad(h, tuple((0, p - s) for p, s in zip(padded, spatial)) + ((0, 0),))
        for layer in self.layers:
            h = act(layer(h))
        if padded != spatial:
            h = h[tuple(slice(0, s) for s in spatial)]
        out = self.head(self.drop(h))
        return reshape(out, spatial)


def spectral_conv_decoder(x: Tensor, params: SpectralDecoder) -> Tensor:
    return params(x)


class PointwiseDecoder(Module):
    def __init__(self, d_in: int, width: int, rng: np.random.Generator, act: str = "relu",
                 rate: float = 0.0) -> None:
        super().__init__()
        self.ffn = FeedForward(d_in, width, 1, rng, act=act, rate=rate)

    def forward(self, x: Tensor) -> Tensor:
        out = self.ffn(x)
        return reshape(out, out.shape[:-1])


class OperatorModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int = DEFAULT_SEED) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        rng = substream(seed, "init")
        d = cfg.d_model
        if cfg.problem == "burgers1d":
            self.extractor = FeedForwardExtractor(2, d, rng, cfg.activation)
        else:
            self.input_normalizer = GaussianNormalizer((cfg.n_f, cfg.n_f))
            self.downsample = CiNNDownsample(1, d, cfg.n_m, cfg.n_c, rng, cfg.activation,
                                             cfg.downsample_dropout)
        self.encoder = Encoder(cfg.attention_config(), cfg.n_layers, rng)
        if cfg.problem == "darcy2d":
            self.upsample = CiNNUpsample(d, cfg.n_m, cfg.n_f, rng, cfg.upsample_dropout)
            self.target_normalizer = GaussianNormalizer((cfg.n_f, cfg.n_f))
        if cfg.decoder == "spectral-conv":
            d_in = d if cfg.problem == "burgers1d" else d + cfg.coord_dim
            self.decoder = SpectralDecoder(d_in, cfg.decoder_width, cfg.n_modes, cfg.coord_dim, rng,
                                           act=cfg.decoder_activation, rate=cfg.decoder_dropout)
        else:
            self.decoder = PointwiseDecoder(d + cfg.coord_dim, cfg.decoder_width, rng,
                                            act=cfg.decoder_activation, rate=cfg.decoder_dropout)
        self.input_grid = cfg.input_grid()
        self.target_grid = cfg.target_grid()
        logger.info("Built %s model with %d parameters", cfg.problem, self.num_parameters())

    def _coarse_coords(self) -> Tensor:
        return Tensor(Grid(dim=2, n=self.cfg.n_c, boundary="dirichlet").points())

    def _fine_coords_channels(self) -> Tensor:
        n = self.cfg.n_f
        pts = self.input_grid.points().reshape(n, n, 2)
        return Tensor(np.transpose(pts, (2, 0, 1)))

    def boundary_mask(self) -> np.ndarray:
        mask = np.ones(self.target_grid.shape)
        mask[0, :] = mask[-1, :] = 0.0
        mask[:, 0] = mask[:, -1] = 0.0
        return mask

    def fit_normalizers(self, inputs: np.ndarray, targets: Optional[np.ndarray] = None) -> None:
        if self.cfg.problem == "burgers1d":
            return
        self.input_normalizer.fit(inputs)
        if self.cfg.problem == "darcy2d" and targets is not None:
            self.target_normalizer.fit(targets)

    def _encode_coarse(self, x: np.ndarray) -> LatentRep:
        n_c, d = self.cfg.n_c, self.cfg.d_model
        field = Tensor(self.input_normalizer.transform_array(x)[None])
        with cost_scope("downsample"):
            h = self.downsample(field)
        feats = reshape(transpose(h, (1, 2, 0)), (n_c * n_c, d))
        with cost_scope("encoder"):
            return self.encoder(LatentRep(feats, self._coarse_coords()))

    def forward(self, x) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.input_grid.shape:
            raise DimensionError(f"model expects input of shape {self.input_grid.shape}, got {x.shape}")
        cfg = self.cfg
        if cfg.problem == "burgers1d":
            coords = self.input_grid.points()
            with cost_scope("extractor"):
                feats = self.extractor(Tensor(np.stack([x, coords[:, 0]], axis=1)))
            with cost_scope("encoder"):
                rep = self.encoder(LatentRep(feats, Tensor(coords)))
            with cost_scope("decoder"):
                return self.decoder(rep.features)

        rep = self._encode_coarse(x)
        n_c, d = cfg.n_c, cfg.d_model
        if cfg.problem == "darcy-inverse":
            with cost_scope("decoder"):
                out = self.decoder(concat([rep.features, rep.coords], axis=1))
            return reshape(out, (n_c, n_c))

        h = transpose(reshape(rep.features, (n_c, n_c, d)), (2, 0, 1))
        with cost_scope("upsample"):
            h = self.upsample(h)
        with cost_scope("decoder"):
            out = self.decoder(concat([h, self._fine_coords_channels()], axis=0))
        return self.target_normalizer.inverse(out) * Tensor(self.boundary_mask())


def model_forward(model: OperatorModel, sample) -> Tensor:
    """Prediction for a DataSample whose grids must match the model's."""
    if sample.input_grid != model.input_grid or sample.target_grid != model.target_grid:
        raise DimensionError(
            f"sample grids {sample.input_grid}/{sample.target_grid} do not match "
            f"model grids {model.input_grid}/{model.target_grid}"
        )
    return model(sample.input)


__all__ = [
    "bilinear_resize",
    "FeedForwardExtractor",
    "ffn_extractor",
    "CiNNDownsample",
    "cinn_downsample",
    "CiNNUpsample",
    "cinn_upsample",
    "SpectralLayer",
    "SpectralDecoder",
    "spectral_conv_decoder",
    "PointwiseDecoder",
    "OperatorModel",
    "model_forward",
]
