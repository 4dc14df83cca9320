import csv

import numpy as np
import pytest

from gkt.config.settings import AttentionConfig
from gkt.core.attention import EncoderLayer, LatentRep
from gkt.core.cost_meter import metering
from gkt.core.tensor import Tensor
from gkt.errors import ConfigError
from gkt.services.bench import (
    BENCH_FIELDS,
    bench_config,
    bench_layer,
    flop_count,
    run_bench,
    scaling_ratios,
    write_bench_csv,
)

VARIANTS = ["fourier", "galerkin", "softmax", "linear-softmax"]


def test_flop_count_examples():
    assert flop_count("galerkin", 64, 8) == {"attention": 8192}
    assert flop_count("fourier", 128, 8)["attention"] / flop_count("fourier", 64, 8)["attention"] == 4.0
    assert flop_count("galerkin", 128, 8)["attention"] / flop_count("galerkin", 64, 8)["attention"] == 2.0
    with pytest.raises(ConfigError):
        flop_count("cosine", 8, 2)


@pytest.mark.parametrize("ln_scheme", ["pre-dot-product", "regular"])
@pytest.mark.parametrize("variant", VARIANTS)
def test_closed_form_matches_metered_layer(variant, ln_scheme, rng):
    cfg = AttentionConfig(variant=variant, ln_scheme=ln_scheme, d_model=6, n_head=2, coord_dim=1)
    n = 10
    layer = EncoderLayer(cfg, rng).eval()
    rep = LatentRep(Tensor(rng.standard_normal((n, 6))), Tensor(np.linspace(0.0, 1.0, n)[:, None]))
    with metering() as meter:
        layer(rep)
    assert dict(meter.macs) == flop_count(cfg, n)


def test_galerkin_layer_never_holds_a_quadratic_buffer():
    n = 256
    galerkin = bench_layer("galerkin", n, 9, repeats=1, warmup=0)
    fourier = bench_layer("fourier", n, 9, repeats=1, warmup=0)
    assert galerkin.macs == 2 * n * 9 * 9
    assert fourier.macs == 2 * n * n * 9
    assert galerkin.peak_bytes < n * n * 8
    assert fourier.peak_bytes >= n * n * 8
    assert galerkin.layer_macs == sum(flop_count(bench_config("galerkin", 9), n).values())


def test_scaling_ratios_are_exact(tmp_path):
    rows = run_bench(["fourier", "galerkin"], [32, 64], d=5, repeats=1, warmup=0)
    ratios = {r["variant"]: r["mac_ratio"] for r in scaling_ratios(rows)}
    assert ratios == {"fourier": 4.0, "galerkin": 2.0}
    path = write_bench_csv(rows, tmp_path / "bench.csv")
    with path.open(newline="") as fh:
        records = list(csv.DictReader(fh))
    assert tuple(records[0]) == BENCH_FIELDS
    assert [int(r["n"]) for r in records] == [32, 64, 32, 64]


def test_bench_rejects_bad_arguments():
    with pytest.raises(ConfigError):
        bench_config("galerkin", 1)
    with pytest.raises(ConfigError):
        run_bench(["cosine"], [8], d=4)
    with pytest.raises(ConfigError):
        bench_layer("galerkin", 8, 4, repeats=0)


@pytest.mark.slow
def test_wall_clock_scaling_envelopes():
    rows = run_bench(["fourier", "galerkin"], [4096, 8192], d=64, repeats=5, warmup=1)
    ratios = {r["variant"]: r["time_ratio"] for r in scaling_ratios(rows)}
    assert 3.2 <= ratios["fourier"] <= 4.8
    assert 1.6 <= ratios["galerkin"] <= 2.6
