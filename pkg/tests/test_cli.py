import csv
import json

import pytest

from gkt.cli import build_parser, main
from gkt.config import constants as C
from gkt.data.dataset import Dataset
from gkt.utils.binary_io import git_blob_hash

VERIFY_ARGS = ["verify", "--trials", "2", "--sizes", "16", "--dims", "3", "--lbb-sizes", "32,64", "--seed", "3"]
DARCY_ARGS = ["datagen", "--problem", "darcy", "--n", "9", "--n-c", "5", "--generation-n", "17"]
INVERSE_ARGS = ["datagen", "--problem", "darcy-inverse", "--n", "9", "--n-c", "5", "--generation-n", "17"]
BENCH_ARGS = ["bench", "--ns", "16,32", "--d", "5", "--variants", "ft,gt", "--repeats", "1", "--warmup", "0"]


def _csv_rows(path):
    with path.open(newline="") as handle:
        return list(csv.DictReader(line for line in handle if not line.startswith("#")))


def test_verify_passes_and_writes_report(tmp_path):
    out = tmp_path / "verify.json"
    assert main(VERIFY_ARGS + ["--out", str(out)]) == C.EXIT_OK
    report = json.loads(out.read_text())
    assert report["summary"]["all_passed"] is True
    manifest = tmp_path / "verify_manifest.json"
    assert report["manifest"] == str(manifest)
    assert json.loads(manifest.read_text())["artifacts"] == [str(out)]


def test_verify_injected_fault_exit_code(isolated_run_dir):
    assert main(VERIFY_ARGS + ["--inject-fault"]) == C.EXIT_VERIFY_FAILED
    manifest = json.loads((isolated_run_dir / "verify_manifest.json").read_text())
    assert manifest["config"]["inject_fault"] is True
    assert manifest["seeds"] == {"seed": 3}


def test_bad_arguments():
    with pytest.raises(SystemExit) as info:
        main(["verify", "--sizes", "a,b"])
    assert info.value.code == 2
    assert main(["--log-level", "chatty"] + VERIFY_ARGS) == C.EXIT_CONFIG
    assert main(["verify", "--trials", "1", "--sizes", "4", "--dims", "8"]) == C.EXIT_CONFIG


def test_datagen_defaults():
    args = build_parser().parse_args(["datagen", "--problem", "burgers", "--out", "x"])
    assert args.count == C.DEFAULT_TRAIN_COUNT
    assert args.test_count == C.DEFAULT_TEST_COUNT
    assert args.resolutions is None
    preset = build_parser().parse_args(["datagen", "--problem", "burgers", "--resolutions", "--out", "x"])
    assert preset.resolutions == list(C.BURGERS_RESOLUTIONS)


def test_datagen_with_zero_samples(tmp_path):
    out = tmp_path / "data"
    assert main(DARCY_ARGS + ["--count", "0", "--test-count", "0", "--out", str(out)]) == C.EXIT_OK
    assert len(Dataset.load(out / "train.gktd")) == 0
    assert not (out / "test.gktd").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["datasets"]["train"]["count"] == 0
    assert manifest["run_manifest"] == str(out / "datagen_manifest.json")


def test_datagen_writes_default_test_split(tmp_path):
    out = tmp_path / "data"
    assert main(DARCY_ARGS + ["--count", "1", "--out", str(out)]) == C.EXIT_OK
    assert len(Dataset.load(out / "test.gktd")) == C.DEFAULT_TEST_COUNT


def test_datagen_is_deterministic(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        assert main(DARCY_ARGS + ["--count", "2", "--test-count", "1", "--out", str(out)]) == C.EXIT_OK
    for name in ("train.gktd", "test.gktd"):
        assert git_blob_hash(first / name) == git_blob_hash(second / name)
    planned = json.loads((first / "datagen_manifest.json").read_text())
    assert planned["seeds"]


def test_datagen_rejects_negative_counts(tmp_path):
    assert main(DARCY_ARGS + ["--count", "-1", "--out", str(tmp_path)]) == C.EXIT_CONFIG


def test_datagen_rejects_unknown_noise_level(tmp_path):
    out = tmp_path / "data"
    assert main(INVERSE_ARGS + ["--noise", "0.05", "--count", "1", "--out", str(out)]) == C.EXIT_CONFIG
    assert not out.exists()


def test_datagen_noisy_test_split_without_training_samples(tmp_path):
    out = tmp_path / "data"
    args = INVERSE_ARGS + ["--noise", "0.1", "--count", "0", "--test-count", "2", "--out", str(out)]
    assert main(args) == C.EXIT_OK
    assert len(Dataset.load(out / "test.gktd")) == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["datasets"]["test"]["noise_std_hash"] is not None


def test_datagen_unwritable_output_is_a_generation_failure(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    args = DARCY_ARGS + ["--count", "1", "--test-count", "0", "--out", str(blocker / "data")]
    assert main(args) == C.EXIT_DATAGEN


def test_datagen_resolution_preset(tmp_path):
    out = tmp_path / "sweep"
    args = ["datagen", "--problem", "burgers", "--count", "0", "--test-count", "0", "--resolutions",
            "--out", str(out)]
    assert main(args) == C.EXIT_OK
    for n in C.BURGERS_RESOLUTIONS:
        data = Dataset.load(out / f"train_n{n}.gktd")
        assert data.spec.n_f == n
    planned = json.loads((out / "datagen_manifest.json").read_text())
    assert planned["config"]["resolutions"] == list(C.BURGERS_RESOLUTIONS)
    assert main(DARCY_ARGS + ["--resolutions", "--out", str(tmp_path / "darcy")]) == C.EXIT_CONFIG


def test_bench_writes_csv(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(BENCH_ARGS + ["--out", str(out)]) == C.EXIT_OK
    manifest = tmp_path / "bench_manifest.json"
    assert out.read_text().splitlines()[0] == f"# manifest: {manifest}"
    assert [(r["variant"], int(r["n"])) for r in _csv_rows(out)] == [
        ("fourier", 16), ("fourier", 32), ("galerkin", 16), ("galerkin", 32)]
    planned = json.loads(manifest.read_text())
    assert planned["config"]["ns"] == [16, 32]
    assert planned["artifacts"] == [str(out)]
    with pytest.raises(SystemExit):
        main(["bench", "--variants", "cosine"])


def test_bench_without_out_writes_manifest_to_run_dir(isolated_run_dir):
    assert main(BENCH_ARGS) == C.EXIT_OK
    assert json.loads((isolated_run_dir / "bench_manifest.json").read_text())["command"] == "bench"


def test_train_then_eval_round_trip(tmp_path, isolated_run_dir):
    data = tmp_path / "data"
    assert main(DARCY_ARGS + ["--count", "2", "--test-count", "1", "--out", str(data)]) == C.EXIT_OK
    run = tmp_path / "run"
    train_args = ["train", "--data", str(data / "train.gktd"), "--eval-data", str(data / "test.gktd"),
                  "--d-model", "8", "--layers", "1", "--heads", "2", "--modes", "2",
                  "--epochs", "2", "--batch-size", "2", "--out", str(run)]
    assert main(train_args) == C.EXIT_OK
    report = json.loads((run / "report.json").read_text())
    assert len(report["epochs"]) == 2
    assert report["manifest"] == str(run / "train_manifest.json")
    assert (run / "report.csv").read_text().splitlines()[0] == "epoch,loss,eval_rel_l2,lr"
    manifest = json.loads((run / "train_manifest.json").read_text())
    assert str(data / "train.gktd") in json.dumps(manifest["inputs"])

    result = tmp_path / "eval" / "eval.json"
    eval_args = ["eval", "--checkpoint", str(run / "model.gktm"), "--data", str(data / "test.gktd")]
    assert main(eval_args + ["--out", str(result)]) == C.EXIT_OK
    evaluated = json.loads(result.read_text())
    assert evaluated["count"] == 1
    assert evaluated["checkpoint_epoch"] == report["best_epoch"]
    assert evaluated["mean_rel_l2"] == pytest.approx(report["best_metric"], rel=1e-12)
    eval_manifest = tmp_path / "eval" / "eval_manifest.json"
    assert evaluated["manifest"] == str(eval_manifest)
    inputs = json.loads(eval_manifest.read_text())["inputs"]
    assert inputs[str(run / "model.gktm")] == git_blob_hash(run / "model.gktm")
    assert inputs[str(data / "test.gktd")] == git_blob_hash(data / "test.gktd")

    assert main(eval_args) == C.EXIT_OK
    assert (isolated_run_dir / "eval_manifest.json").exists()


def test_eval_rejects_missing_checkpoint(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.gktm"), "--data", str(tmp_path / "none.gktd")]) \
        == C.EXIT_CONFIG
