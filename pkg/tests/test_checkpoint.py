import json
import logging

import numpy as np
import pytest

from gkt.config.settings import ModelConfig
from gkt.core.operator_model import OperatorModel
from gkt.errors import FormatError
from gkt.services.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from gkt.services.hash_cache import HashCache, default_cache_file
from gkt.services.run_manifest import RunManifest
from gkt.utils.binary_io import git_blob_hash

DARCY = ModelConfig(problem="darcy2d", n_layers=1, d_model=4, n_head=2, n_modes=2, n_f=9, n_c=5, decoder_width=4)


def test_checkpoint_restores_parameters_and_normalizers(tmp_path, rng):
    model = OperatorModel(DARCY, seed=7)
    model.fit_normalizers(rng.standard_normal((4, 9, 9)), rng.standard_normal((4, 9, 9)))
    path = save_checkpoint(tmp_path / "m.gktm", model, extra={"epoch": 3})
    restored, extra = load_checkpoint(path)
    assert extra == {"epoch": 3}
    assert restored.cfg == DARCY and restored.seed == 7
    assert not restored.training
    np.testing.assert_array_equal(restored.input_normalizer.std, model.input_normalizer.std)
    x = rng.standard_normal((9, 9))
    model.eval()
    np.testing.assert_array_equal(restored(x).numpy(), model(x).numpy())


def test_checkpoint_header_lists_blobs(tmp_path):
    model = OperatorModel(DARCY, seed=0)
    header, state = read_checkpoint(save_checkpoint(tmp_path / "m.gktm", model))
    assert header["names"] == list(state) == list(model.state_dict())
    assert (tmp_path / "m.gktm").read_bytes()[:4] == b"GKTM"
    assert not (tmp_path / "m.gktm.tmp").exists()


def test_checkpoint_for_other_model_is_rejected(tmp_path):
    path = save_checkpoint(tmp_path / "m.gktm", OperatorModel(DARCY, seed=0))
    bad = tmp_path / "bad.gktm"
    bad.write_bytes(path.read_bytes().replace(b'"d_model": 4', b'"d_model": 6'))
    with pytest.raises(FormatError):
        load_checkpoint(bad)
    garbage = tmp_path / "garbage.gktm"
    garbage.write_bytes(b"GKTD" + bytes(12))
    with pytest.raises(FormatError):
        load_checkpoint(garbage)


def test_hash_cache_matches_git_and_persists(tmp_path):
    target = tmp_path / "data.bin"
    target.write_bytes(b"hello\n")
    cache_file = tmp_path / "cache.json"
    cache = HashCache(cache_file)
    assert cache.lookup(target) is None
    digest = cache.file_hash(target)
    assert digest == git_blob_hash(target) == "ce013625030ba8dba906f756967f9e9ca394464a"
    assert HashCache(cache_file).lookup(target) == digest


def test_hash_cache_rehashes_changed_files(tmp_path):
    target = tmp_path / "data.bin"
    target.write_bytes(b"one")
    cache = HashCache(tmp_path / "cache.json")
    first = cache.file_hash(target)
    target.write_bytes(b"three")
    assert cache.file_hash(target) != first


def test_corrupt_hash_cache_is_ignored(tmp_path, caplog):
    cache_file = tmp_path / "cache.json"
    cache_file.write_text("{not json", encoding="utf-8")
    with caplog.at_level(logging.WARNING):
        cache = HashCache(cache_file)
    assert "corrupted" in caplog.text
    target = tmp_path / "x"
    target.write_bytes(b"")
    assert cache.file_hash(target) == git_blob_hash(target)
    assert json.loads(cache_file.read_text())


def test_default_cache_file_honours_environment(tmp_path):
    assert default_cache_file() == tmp_path / "hash-cache.json"


def test_run_manifest_records_inputs(tmp_path):
    data = tmp_path / "train.gktd"
    data.write_bytes(b"abc")
    manifest = RunManifest.create("train", {"epochs": 1}, seed=5, inputs=[data], artifacts=[tmp_path / "m.gktm"])
    written = json.loads(manifest.write(tmp_path / "train_manifest.json").read_text())
    assert written["inputs"] == {str(data): git_blob_hash(data)}
    assert written["seeds"] == {"seed": 5}
    assert written["toolchain"].startswith("gkt ")
