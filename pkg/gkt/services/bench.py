"""Closed-form multiply-add counts and wall-clock scaling of single encoder layers."""
from __future__ import annotations

import csv
import logging
import statistics
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from gkt.config.constants import ATTENTION_VARIANTS
from gkt.config.settings import AttentionConfig
from gkt.core.attention import EncoderLayer, LatentRep
from gkt.core.cost_meter import metering
from gkt.core.tensor import Tensor
from gkt.errors import ConfigError
from gkt.utils.seeding import substream

logger = logging.getLogger(__name__)

QUADRATIC_VARIANTS = ("fourier", "softmax")
BENCH_FIELDS = ("variant", "n", "d", "macs", "layer_macs", "wall_time", "peak_bytes")


def attention_macs(variant: str, n: int, d: int) -> int:
    """MACs of the two attention products: 2 n^2 d (fourier/softmax) or 2 n d^2."""
    if variant not in ATTENTION_VARIANTS:
        raise ConfigError(f"Unknown attention variant {variant!r}")
    if variant in QUADRATIC_VARIANTS:
        return 2 * n * n * d
    return 2 * n * d * d


def flop_count(target: Union[str, AttentionConfig], n: int, d: int = 0) -> Dict[str, int]:
    """Exact per-label multiply-add counts of one forward pass.

    With a variant name only the attention products are counted (``d`` is the
    head width). With an :class:`AttentionConfig` the whole encoder layer is
    counted with the labels the cost meter uses; softmax exponentials weigh 1.
    """
    if isinstance(target, str):
        return {"attention": attention_macs(target, n, d)}
    cfg = target
    cfg.validate()
    w, heads, dm = cfg.head_width, cfg.n_head, cfg.d_model
    counts = {
        "projection": heads * 3 * n * w * w,
        "attention": heads * attention_macs(cfg.variant, n, w),
        "merge": n * heads * w * dm,
        "ffn": 2 * n * dm * cfg.ffn_ratio * dm,
    }
    if cfg.variant == "softmax":
        counts["softmax"] = heads * n * n
    elif cfg.variant == "linear-softmax":
        counts["softmax"] = heads * 2 * n * w
    return counts


@dataclass(frozen=True)
class BenchRow:
    variant: str
    n: int
    d: int
    macs: int
    layer_macs: int
    wall_time: float
    peak_bytes: int


def bench_config(variant: str, d: int) -> AttentionConfig:
    """Single-head layer with head width d (d - 1 features plus one coordinate)."""
    if d < 2:
        raise ConfigError(f"bench width must be at least 2, got {d}")
    return AttentionConfig(variant=variant, d_model=d - 1, n_head=1, coord_dim=1)


def bench_layer(variant: str, n: int, d: int, repeats: int = 5, warmup: int = 1,
                seed: int = 0) -> BenchRow:
    """Median forward time over ``repeats`` after ``warmup`` untimed runs, plus cost accounting."""
    if n < 1 or repeats < 1 or warmup < 0:
        raise ConfigError("bench needs n >= 1, repeats >= 1 and warmup >= 0")
    cfg = bench_config(variant, d)
    rng = substream(seed, "init", n, d)
    layer = EncoderLayer(cfg, rng).eval()
    x = np.arange(n, dtype=np.float64) / n
    rep = LatentRep(Tensor(rng.standard_normal((n, cfg.d_model))), Tensor(x[:, None]))

    with metering() as meter:
        layer(rep)
    for _ in range(warmup):
        layer(rep)
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        layer(rep)
        times.append(time.perf_counter() - start)
    row = BenchRow(variant=variant, n=n, d=d, macs=meter.macs["attention"], layer_macs=meter.total_macs,
                   wall_time=statistics.median(times), peak_bytes=meter.largest_buffer["attention"])
    logger.info("bench %s n=%d d=%d: %.4fs, %d attention MACs", variant, n, d, row.wall_time, row.macs)
    return row


def run_bench(variants: Sequence[str], ns: Iterable[int], d: int, repeats: int = 5,
              warmup: int = 1, seed: int = 0) -> List[BenchRow]:
    for v in variants:
        if v not in ATTENTION_VARIANTS:
            raise ConfigError(f"Unknown attention variant {v!r}")
    return [bench_layer(v, n, d, repeats, warmup, seed) for v in variants for n in ns]


def scaling_ratios(rows: Sequence[BenchRow]) -> List[Dict[str, object]]:
    """MAC and time ratios between consecutive sizes of the same variant."""
    out = []
    by_variant: Dict[str, List[BenchRow]] = {}
    for row in rows:
        by_variant.setdefault(row.variant, []).append(row)
    for variant, group in by_variant.items():
        group = sorted(group, key=lambda r: r.n)
        for small, large in zip(group, group[1:]):
            out.append({
                "variant": variant, "n_from": small.n, "n_to": large.n,
                "mac_ratio": large.macs / small.macs,
                "time_ratio": large.wall_time / small.wall_time if small.wall_time > 0 else float("inf"),
            })
    return out


def write_bench_csv(rows: Sequence[BenchRow], path: Union[str, Path],
                    manifest: Optional[Union[str, Path]] = None) -> Path:
    """Rows under a BENCH_FIELDS header; a ``# manifest:`` comment line comes first when given."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if manifest is not None:
            fh.write(f"# manifest: {manifest}\n")
        writer = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))
    return path


__all__ = [
    "attention_macs",
    "flop_count",
    "BenchRow",
    "bench_config",
    "bench_layer",
    "run_bench",
    "scaling_ratios",
    "write_bench_csv",
]
