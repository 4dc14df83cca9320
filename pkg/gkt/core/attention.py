"""Scaled dot-product attentions and the simple-attention encoder layer.

Four variants share one calling convention ``attn(Q, K, V, ...) -> z``:

* ``fourier``        z = (Q~ K~^T) V / n        (n x n kernel, O(n^2 d))
* ``galerkin``       z = Q (K~^T V~) / n        (d x d product, O(n d^2))
* ``softmax``        z = softmax_rows(Q K^T / sqrt(d)) V
* ``linear-softmax`` z = softmax_feat(Q) (softmax_seq(K)^T V)

A tilde marks the optional head-wise layer normalization applied before the
products.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np

from gkt.config.settings import AttentionConfig
from gkt.core.cost_meter import cost_scope
from gkt.core.layers import FeedForward, LayerNorm, Linear, Module, current_dropout_rng
from gkt.core.tensor import (
    Parameter,
    Tensor,
    concat,
    dropout,
    layer_norm,
    matmul,
    softmax,
    transpose,
)
from gkt.errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator, None]
NormPair = Optional[Tuple[LayerNorm, LayerNorm]]


@dataclass(frozen=True)
class LatentRep:
    """Per-position features plus the grid coordinates they live on."""

    features: Tensor
    coords: Tensor

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.coords.ndim != 2:
            raise DimensionError("LatentRep expects (n, d) features and (n, m) coords")
        if self.features.shape[0] != self.coords.shape[0]:
            raise DimensionError(
                f"features have {self.features.shape[0]} positions, coords {self.coords.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.features.shape[0]


def _generator(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def init_projection(d: int, eta: float, delta: float, seed: SeedLike = None) -> Parameter:
    """W = eta * U + delta * I with U ~ Uniform[-sqrt(3/d), sqrt(3/d)]."""
    if d < 1:
        raise ConfigError(f"projection size must be positive, got {d}")
    bound = math.sqrt(3.0 / d)
    u = _generator(seed).uniform(-bound, bound, size=(d, d))
    return Parameter(eta * u + delta * np.eye(d))


def project_qkv(y: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    return matmul(y, w_q), matmul(y, w_k), matmul(y, w_v)


def _check_qkv(q: Tensor, k: Tensor, v: Tensor) -> int:
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimensionError("attention expects (n, d) matrices")
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise DimensionError(f"attention shapes do not conform: Q{q.shape} K{k.shape} V{v.shape}")
    return k.shape[0]


def _unit_norm(x: Tensor) -> Tensor:
    d = x.shape[-1]
    return layer_norm(x, Tensor(np.ones(d)), Tensor(np.zeros(d)))


def _normalize(pair: Tuple[Tensor, Tensor], norms: NormPair) -> Tuple[Tensor, Tensor]:
    if norms is None:
        return _unit_norm(pair[0]), _unit_norm(pair[1])
    return norms[0](pair[0]), norms[1](pair[1])


def attn_fourier(q: Tensor, k: Tensor, v: Tensor, normalize_qk: bool = False,
                 norms: NormPair = None, dropout_rate: float = 0.0,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
    n = _check_qkv(q, k, v)
    if normalize_qk:
        q, k = _normalize((q, k), norms)
    with cost_scope("attention"):
        scores = dropout(matmul(q, transpose(k)), dropout_rate, rng)
        return matmul(scores, v) * (1.0 / n)


def attn_galerkin(q: Tensor, k: Tensor, v: Tensor, normalize_kv: bool = False,
                  norms: NormPair = None, dropout_rate: float = 0.0,
                  rng: Optional[np.random.Generator] = None) -> Tensor:
    n = _check_qkv(q, k, v)
    if normalize_kv:
        k, v = _normalize((k, v), norms)
    with cost_scope("attention"):
        kv = dropout(matmul(transpose(k), v) * (1.0 / n), dropout_rate, rng)
        return matmul(q, kv)


def attn_softmax(q: Tensor, k: Tensor, v: Tensor, normalize_qk: bool = False,
                 norms: NormPair = None, dropout_rate: float = 0.0,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
    _check_qkv(q, k, v)
    if normalize_qk:
        q, k = _normalize((q, k), norms)
    with cost_scope("attention"):
        scores = matmul(q, transpose(k)) * (1.0 / math.sqrt(q.shape[1]))
        weights = dropout(softmax(scores, axis=-1), dropout_rate, rng)
        return matmul(weights, v)


def attn_linear_softmax(q: Tensor, k: Tensor, v: Tensor, normalize_kv: bool = False,
                        norms: NormPair = None, dropout_rate: float = 0.0,
                        rng: Optional[np.random.Generator] = None) -> Tensor:
    _check_qkv(q, k, v)
    if normalize_kv:
        k, v = _normalize((k, v), norms)
    with cost_scope("attention"):
        q_feat = softmax(q, axis=-1)
        k_seq = softmax(k, axis=-2)
        kv = dropout(matmul(transpose(k_seq), v), dropout_rate, rng)
        return matmul(q_feat, kv)


ATTENTIONS: Dict[str, Callable[..., Tensor]] = {
    "fourier": attn_fourier,
    "galerkin": attn_galerkin,
    "softmax": attn_softmax,
    "linear-softmax": attn_linear_softmax,
}


def attention(variant: str, q: Tensor, k: Tensor, v: Tensor, normalize: bool = False,
              norms: NormPair = None, dropout_rate: float = 0.0,
              rng: Optional[np.random.Generator] = None) -> Tensor:
    try:
        fn = ATTENTIONS[variant]
    except KeyError as exc:
        raise ConfigError(f"Unknown attention variant {variant!r}") from exc
    return fn(q, k, v, normalize, norms, dropout_rate, rng)


class AttentionHead(Module):
    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator) -> None:
        super().__init__()
        width = cfg.head_width
        self.w_q = init_projection(width, cfg.init_eta, cfg.init_delta, rng)
        self.w_k = init_projection(width, cfg.init_eta, cfg.init_delta, rng)
        self.w_v = init_projection(width, cfg.init_eta, cfg.init_delta, rng)
        # head-wise LN on (Q, K) for fourier/softmax, (K, V) for galerkin/linear-softmax
        self.norms = [LayerNorm(width), LayerNorm(width)] if cfg.ln_scheme == "pre-dot-product" else []


class SimpleAttention(Module):
    """Multi-head attention with the coordinates re-attached to every head."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.heads = [AttentionHead(cfg, rng) for _ in range(cfg.n_head)]
        self.merge = Linear(cfg.n_head * cfg.head_width, cfg.d_model, rng)

    def forward(self, rep: LatentRep) -> Tensor:
        cfg = self.cfg
        if rep.features.shape[1] != cfg.d_model or rep.coords.shape[1] != cfg.coord_dim:
            raise DimensionError(
                f"expected (n, {cfg.d_model}) features and (n, {cfg.coord_dim}) coords, "
                f"got {rep.features.shape} and {rep.coords.shape}"
            )
        dh = cfg.head_dim
        rate = cfg.attn_dropout if self.training else 0.0
        rng = current_dropout_rng() if rate > 0 else None
        outputs = []
        for i, head in enumerate(self.heads):
            y = concat([rep.features[:, i * dh:(i + 1) * dh], rep.coords], axis=1)
            with cost_scope("projection"):
                q, k, v = project_qkv(y, head.w_q, head.w_k, head.w_v)
            norms = tuple(head.norms) if head.norms else None
            outputs.append(attention(cfg.variant, q, k, v, norms is not None, norms, rate, rng))
        with cost_scope("merge"):
            return self.merge(concat(outputs, axis=1))


class EncoderLayer(Module):
    """Residual attention block.

    pre-dot-product: y~ = y + Attn(y); out = y~ + FFN(y~)
    regular:         out = Ln(y~ + FFN(Ln(y~)))
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.cfg = cfg
        self.attention = SimpleAttention(cfg, rng)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_ratio * cfg.d_model, cfg.d_model, rng,
                               act=cfg.activation, rate=cfg.ffn_dropout)
        if cfg.ln_scheme == "regular":
            self.norm_inner = LayerNorm(cfg.d_model)
            self.norm_outer = LayerNorm(cfg.d_model)

    def forward(self, rep: LatentRep) -> LatentRep:
        y = rep.features
        y_tilde = y + self.attention(rep)
        with cost_scope("ffn"):
            if self.cfg.ln_scheme == "regular":
                out = self.norm_outer(y_tilde + self.ffn(self.norm_inner(y_tilde)))
            else:
                out = y_tilde + self.ffn(y_tilde)
        return LatentRep(out, rep.coords)


def encoder_layer(rep: LatentRep, config: AttentionConfig, params: EncoderLayer) -> LatentRep:
    if params.cfg != config:
        raise ConfigError("encoder layer parameters were built for a different AttentionConfig")
    return params(rep)


class Encoder(Module):
    def __init__(self, cfg: AttentionConfig, n_layers: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.layers = [EncoderLayer(cfg, rng) for _ in range(n_layers)]

    def forward(self, rep: LatentRep) -> LatentRep:
        for layer in self.layers:
            rep = layer(rep)
        return rep


__all__ = [
    "LatentRep",
    "init_projection",
    "project_qkv",
    "attn_fourier",
    "attn_galerkin",
    "attn_softmax",
    "attn_linear_softmax",
    "attention",
    "ATTENTIONS",
    "AttentionHead",
    "SimpleAttention",
    "EncoderLayer",
    "encoder_layer",
    "Encoder",
]
