"""Command-line front door: datagen, train, eval, verify and bench."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from gkt.config import constants as C
from gkt.config.settings import DatasetSpec, ModelConfig, TrainConfig, VerifyConfig, preset_for
from gkt.core.operator_model import OperatorModel
from gkt.data.dataset import Dataset, build_burgers_sweep, build_splits, write_manifest
from gkt.errors import (
    ConfigError,
    DimensionError,
    FormatError,
    GKTError,
    NumericalError,
    TrainingDivergedError,
    UndefinedMetricError,
)
from gkt.services.bench import run_bench, scaling_ratios, write_bench_csv
from gkt.services.checkpoint import load_checkpoint
from gkt.services.run_manifest import RunManifest
from gkt.services.trainer import evaluate, train
from gkt.verify.suite import run_suite

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(threadName)s - %(name)s - %(levelname)s - %(message)s'

# Smaller widths for CPU runs; everything else follows the problem preset.
DESK_OVERRIDES: Dict[str, Dict[str, Any]] = {
    "burgers1d": {"d_model": 32, "decoder_width": 32},
    "darcy2d": {"d_model": 32, "n_head": 1, "decoder_width": 16, "n_modes": 8},
    "darcy-inverse": {"d_model": 32, "n_head": 1, "decoder_width": 64},
}

INIT_SCHEMES = {
    "diagonal": {"init_eta": 1e-2, "init_delta": 1e-2},
    "xavier": {"init_eta": 1.0, "init_delta": 0.0},
}


def setup_logging(level: Optional[str] = None) -> None:
    """Configures logging for the command line; ``level`` falls back to GKT_LOG_LEVEL, then INFO."""
    name = (level or os.environ.get(C.LOG_LEVEL_ENV_VAR) or "INFO").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        raise ConfigError(f"Unknown log level {name!r}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, stream=sys.stdout)
    logging.getLogger().setLevel(numeric)
    logger.debug("Logging configured at %s", name)


def _int_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _variant_list(text: str) -> List[str]:
    variants = []
    for part in text.split(","):
        name = C.MODEL_ALIASES.get(part.strip(), part.strip())
        if name not in C.ATTENTION_VARIANTS:
            raise argparse.ArgumentTypeError(f"unknown attention variant {part!r}")
        variants.append(name)
    return variants


def _emit(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _write_run_manifest(command: str, out_dir: Path, config: Dict[str, Any], seed: int,
                        inputs: Sequence[Path] = (), artifacts: Sequence[Path] = ()) -> Path:
    manifest = RunManifest.create(command, config, seed, inputs=inputs, artifacts=artifacts)
    return manifest.write(out_dir / f"{command}_manifest.json")


def _manifest_dir(out: Optional[str]) -> Path:
    """Next to the command's output file, else $GKT_RUN_DIR (default ``runs``)."""
    if out:
        return Path(out).parent
    return Path(os.environ.get(C.RUN_DIR_ENV_VAR) or C.DEFAULT_RUN_DIR)


# -- datagen -----------------------------------------------------------

def cmd_datagen(args: argparse.Namespace) -> int:
    problem = C.CLI_PROBLEM_ALIASES[args.problem]
    overrides: Dict[str, Any] = {"noise": args.noise}
    if args.generation_n is not None:
        overrides["generation_n"] = args.generation_n
    spec = DatasetSpec.for_problem(problem, n_f=args.n, n_c=args.n_c, **overrides)
    if args.count < 0 or args.test_count < 0:
        raise ConfigError("sample counts must be non-negative")
    if args.resolutions and problem != "burgers1d":
        raise ConfigError("--resolutions applies to the burgers problem only")
    out = Path(args.out)
    planned = [out / "train.gktd"] + ([out / "test.gktd"] if args.test_count else [])
    planned += [out / f"train_n{n}.gktd" for n in args.resolutions or ()]

    try:
        out.mkdir(parents=True, exist_ok=True)
        run_manifest = _write_run_manifest(
            "datagen", out,
            {"spec": spec.to_dict(), "count": args.count, "test_count": args.test_count,
             "resolutions": list(args.resolutions) if args.resolutions else None},
            args.seed, artifacts=planned)
        train_set, test_set = build_splits(spec, args.count, args.test_count, args.seed)
        files = {"train": (train_set, train_set.save(out / "train.gktd"))}
        if args.test_count:
            files["test"] = (test_set, test_set.save(out / "test.gktd"))
        if args.resolutions:
            for n, ds in build_burgers_sweep(spec, args.resolutions, args.count, args.seed).items():
                files[f"train_n{n}"] = (ds, ds.save(out / f"train_n{n}.gktd"))
        write_manifest(out / "manifest.json", files, run_manifest=run_manifest)
    except NumericalError as exc:
        logger.error("Dataset generation failed: %s", exc)
        return C.EXIT_DATAGEN
    except OSError as exc:
        logger.error("Could not write the dataset to %s: %s", out, exc)
        return C.EXIT_DATAGEN

    _emit({
        "problem": problem,
        "count": len(train_set),
        "test_count": args.test_count,
        "input_grid": spec.input_grid().to_dict(),
        "target_grid": spec.target_grid().to_dict(),
        "energy_pass_rate": train_set.energy_pass_rate,
        "files": {name: str(path) for name, (_, path) in files.items()},
        "manifest": str(run_manifest),
    })
    return C.EXIT_OK


# -- train / eval ------------------------------------------------------

def model_config_for(spec: DatasetSpec, args: argparse.Namespace) -> ModelConfig:
    overrides: Dict[str, Any] = {}
    if args.desk:
        overrides.update(DESK_OVERRIDES[spec.problem])
    overrides.update(INIT_SCHEMES[args.init])
    overrides["variant"] = C.MODEL_ALIASES[args.model]
    overrides["ln_scheme"] = C.LN_ALIASES[args.ln]
    for flag, key in (("d_model", "d_model"), ("layers", "n_layers"), ("heads", "n_head"),
                      ("modes", "n_modes")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if spec.problem == "burgers1d":
        return preset_for(spec.problem, n=spec.n_f, **overrides)
    return preset_for(spec.problem, n_f=spec.n_f, n_c=spec.n_c, **overrides)


def cmd_train(args: argparse.Namespace) -> int:
    train_set = Dataset.load(args.data)
    eval_set = Dataset.load(args.eval_data) if args.eval_data else None
    model_cfg = model_config_for(train_set.spec, args)
    train_cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr_max=args.lr_max,
                            seed=args.seed)
    train_cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = out / "model.gktm"
    inputs = [Path(args.data)] + ([Path(args.eval_data)] if args.eval_data else [])
    run_manifest = _write_run_manifest(
        "train", out, {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()}, args.seed,
        inputs=inputs, artifacts=[checkpoint, out / "report.json", out / "report.csv"])

    model = OperatorModel(model_cfg, seed=args.seed)
    try:
        report = train(model, train_set, eval_set, train_cfg, checkpoint_path=checkpoint)
    except TrainingDivergedError as exc:
        if exc.report is not None:
            exc.report.manifest = str(run_manifest)
            exc.report.write_json(out / "report.json")
            exc.report.write_csv(out / "report.csv")
        logger.error("Training aborted at epoch %d: %s", exc.epoch, exc)
        return C.EXIT_TRAINING_NAN
    report.manifest = str(run_manifest)
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv")
    _emit({
        "epochs": len(report.epochs),
        "best_epoch": report.best_epoch,
        "best_metric": report.best_metric,
        "final_train_loss": report.train_losses[-1] if report.epochs else None,
        "checkpoint": report.checkpoint,
        "report": str(out / "report.json"),
        "manifest": str(run_manifest),
    })
    return C.EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    artifacts = [Path(args.out)] if args.out else []
    # evaluation draws no random numbers
    run_manifest = _write_run_manifest(
        "eval", _manifest_dir(args.out), {"checkpoint": str(args.checkpoint), "data": str(args.data)}, 0,
        inputs=[Path(args.checkpoint), Path(args.data)], artifacts=artifacts)
    model, extra = load_checkpoint(args.checkpoint)
    dataset = Dataset.load(args.data)
    result = evaluate(model, dataset)
    payload = {"checkpoint": str(args.checkpoint), "data": str(args.data),
               "checkpoint_epoch": extra.get("epoch"), "manifest": str(run_manifest), **result.to_dict()}
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    payload.pop("per_sample")
    _emit(payload)
    return C.EXIT_OK


# -- verify / bench ----------------------------------------------------

def cmd_verify(args: argparse.Namespace) -> int:
    fields: Dict[str, Any] = {"trials": args.trials, "seed": args.seed, "inject_fault": args.inject_fault}
    if args.sizes:
        fields["sizes"] = tuple(args.sizes)
    if args.dims:
        fields["dims"] = tuple(args.dims)
    if args.lbb_sizes:
        fields["lbb_sizes"] = tuple(args.lbb_sizes)
    cfg = VerifyConfig.from_dict(fields)
    run_manifest = _write_run_manifest("verify", _manifest_dir(args.out), cfg.to_dict(), args.seed,
                                       artifacts=[Path(args.out)] if args.out else [])
    report = run_suite(cfg)
    report.manifest = str(run_manifest)
    if args.out:
        report.write(args.out)
    _emit({**report.summary(), "manifest": str(run_manifest)})
    return C.EXIT_OK if report.passed else C.EXIT_VERIFY_FAILED


def cmd_bench(args: argparse.Namespace) -> int:
    config = {"variants": list(args.variants), "ns": list(args.ns), "d": args.d,
              "repeats": args.repeats, "warmup": args.warmup}
    run_manifest = _write_run_manifest("bench", _manifest_dir(args.out), config, args.seed,
                                       artifacts=[Path(args.out)] if args.out else [])
    rows = run_bench(args.variants, args.ns, args.d, repeats=args.repeats, warmup=args.warmup,
                     seed=args.seed)
    if args.out:
        write_bench_csv(rows, args.out, manifest=run_manifest)
    _emit({"rows": [asdict(row) for row in rows], "ratios": scaling_ratios(rows),
           "manifest": str(run_manifest)})
    return C.EXIT_OK


# -- parser ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gkt", description=__doc__)
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ... (default: $GKT_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a benchmark dataset")
    p.add_argument("--problem", choices=sorted(C.CLI_PROBLEM_ALIASES), required=True)
    p.add_argument("--n", type=int, default=None, help="fine (input) grid size")
    p.add_argument("--n-c", type=int, default=None, help="coarse grid size (2D problems)")
    p.add_argument("--generation-n", type=int, default=None, help="grid the solver runs on")
    p.add_argument("--count", type=int, default=C.DEFAULT_TRAIN_COUNT)
    p.add_argument("--test-count", type=int, default=C.DEFAULT_TEST_COUNT)
    p.add_argument("--noise", type=float, default=0.0,
                   help=f"inverse-problem noise level, one of {C.INVERSE_NOISE_LEVELS}")
    p.add_argument("--resolutions", type=_int_list, nargs="?", const=list(C.BURGERS_RESOLUTIONS), default=None,
                   help="extra burgers resolutions restricted from the same solutions "
                        f"(no value: {','.join(map(str, C.BURGERS_RESOLUTIONS))})")
    p.add_argument("--seed", type=int, default=C.DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_datagen)

    p = sub.add_parser("train", help="train an operator model")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", default=None)
    p.add_argument("--model", choices=sorted(C.MODEL_ALIASES), default="gt")
    p.add_argument("--ln", choices=sorted(C.LN_ALIASES), default="new")
    p.add_argument("--init", choices=sorted(INIT_SCHEMES), default="diagonal")
    p.add_argument("--desk", action="store_true", help="narrow CPU-sized model")
    p.add_argument("--d-model", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--modes", type=int, default=None)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr-max", type=float, default=C.LR_MAX)
    p.add_argument("--seed", type=int, default=C.DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="relative L2 error of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("verify", help="run the Galerkin projection checks")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--sizes", type=_int_list, default=None)
    p.add_argument("--dims", type=_int_list, default=None)
    p.add_argument("--lbb-sizes", type=_int_list, default=None)
    p.add_argument("--inject-fault", action="store_true", help="perturb lambda to exercise failure detection")
    p.add_argument("--seed", type=int, default=C.DEFAULT_SEED)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("bench", help="time single encoder layers across sequence lengths")
    p.add_argument("--ns", type=_int_list, default=[1024, 2048, 4096])
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--variants", type=_variant_list, default=["fourier", "galerkin"])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        setup_logging(args.log_level)
    except ConfigError as exc:
        print(f"gkt: {exc}", file=sys.stderr)
        return C.EXIT_CONFIG
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except TrainingDivergedError as exc:
        logger.error("Training diverged: %s", exc)
        return C.EXIT_TRAINING_NAN
    except (ConfigError, DimensionError, FormatError, UndefinedMetricError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return C.EXIT_CONFIG
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return C.EXIT_CONFIG
    except GKTError:
        logger.exception("Command %s failed", args.command)
        return 1


__all__ = ["main", "build_parser", "setup_logging", "model_config_for"]
