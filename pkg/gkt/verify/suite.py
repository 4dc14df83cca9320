"""Randomized verification battery for the attention/projection identities.

Each trial draws an input y whose columns are an orthonormal family under
<.,.>_h, well-conditioned projection matrices, a value basis Q0 (leading
columns of y Wq U) and a test basis V = y Wv, then checks the constructed
attention against the saddle-point projection and the stability bounds.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from gkt.config.constants import (
    BASIS_UPDATE_SLACK,
    CEA_SLACK,
    FAULT_PERTURBATION,
    LAMBDA_AGREEMENT_TOL,
    MINMAX_AGREEMENT_TOL,
    REPRODUCTION_TOL,
)
from gkt.config.settings import VerifyConfig
from gkt.errors import ErrorReport
from gkt.services.thread_pool import map_ordered
from gkt.utils.seeding import substream
from gkt.verify.galerkin import (
    BasisSet,
    SaddleSystem,
    apply_attention_weights,
    basis_update_check,
    cea_check,
    construct_attention_weights,
    gram_matrix,
    lbb_constant,
    lbb_monte_carlo,
    minmax_descent,
    mixed_matrix,
    nodal_constant,
    norm_constant,
    perturbed_cea_check,
    petrov_galerkin_project,
)

logger = logging.getLogger(__name__)

LBB_VARIATION_LIMIT = 0.2


def family_basis(family: str, n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """n x d columns orthonormal under <.,.>_h on the periodic grid i/n."""
    h = 1.0 / n
    if family == "fourier":
        x = np.arange(n) / n
        cols = [np.ones(n)]
        freq = 1
        while len(cols) < d:
            cols.append(np.sqrt(2.0) * np.cos(2.0 * np.pi * freq * x))
            if len(cols) < d:
                cols.append(np.sqrt(2.0) * np.sin(2.0 * np.pi * freq * x))
            freq += 1
        return np.stack(cols, axis=1)
    q, _ = np.linalg.qr(np.sqrt(h) * rng.standard_normal((n, d)))
    return q / np.sqrt(h)


def well_conditioned(d: int, rng: np.random.Generator) -> np.ndarray:
    """Random orthogonal matrix times a diagonal with entries in [0.5, 2]."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    return q @ np.diag(rng.uniform(0.5, 2.0, size=d))


@dataclass(frozen=True, eq=False)
class Instance:
    y: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    u: np.ndarray
    f: np.ndarray
    r: int
    family: str

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.y.shape[1]

    @property
    def h(self) -> float:
        return 1.0 / self.n

    def value_basis(self, columns: Optional[int] = None) -> BasisSet:
        q = self.y @ self.w_q @ self.u
        return BasisSet(q[:, : (self.r if columns is None else columns)], self.h, label="omega")

    def test_basis(self) -> BasisSet:
        return BasisSet(self.y @ self.w_v, self.h, label="omega*")

    def key_basis(self) -> BasisSet:
        return BasisSet(self.y @ self.w_k, self.h, label="omega*")


def build_instance(n: int, d: int, r: int, family: str, rng: np.random.Generator,
                   permute: bool = False) -> Instance:
    y = family_basis(family, n, d, rng)
    u = np.eye(d)[:, rng.permutation(d)] if permute else np.eye(d)
    f = y @ rng.standard_normal(d) + 0.3 * rng.standard_normal(n)
    return Instance(y=y, w_q=well_conditioned(d, rng), w_k=well_conditioned(d, rng),
                    w_v=well_conditioned(d, rng), u=u, f=f, r=r, family=family)


def _trial_shape(index: int, cfg: VerifyConfig) -> tuple:
    n = cfg.sizes[index % len(cfg.sizes)]
    family = cfg.families[index % len(cfg.families)]
    d = cfg.dims[(index // (len(cfg.sizes) * len(cfg.families))) % len(cfg.dims)]
    return n, d, family


def run_trial(index: int, cfg: VerifyConfig) -> Dict[str, Any]:
    rng = substream(cfg.seed, "verify", index)
    n, d, family = _trial_shape(index, cfg)
    r = int(rng.integers(1, d + 1))
    inst = build_instance(n, d, r, family, rng, permute=index == 0)
    q0, v = inst.value_basis(), inst.test_basis()

    projection = petrov_galerkin_project(inst.f, q0, v)
    m, b = gram_matrix(v), mixed_matrix(v, q0)
    weights = construct_attention_weights(inst.y, inst.w_q, inst.w_v, inst.u, m, b)
    realized = apply_attention_weights(inst.y, weights, projection.zeta, inst.h)
    lam_ref = projection.lam + (FAULT_PERTURBATION if cfg.inject_fault else 0.0)
    reference = q0.combine(lam_ref)
    reproduction = float(np.linalg.norm(realized - reference) / max(np.linalg.norm(reference), 1e-300))

    cea = cea_check(inst.f, q0, v, y=inst.y, weights=weights, slack=CEA_SLACK)
    perturbed = perturbed_cea_check(inst.f, q0, v, slack=CEA_SLACK)

    closed = projection.residual_dual_norm
    oracle = minmax_descent(SaddleSystem(m, b, projection.zeta), rng, restarts=cfg.restarts)
    minmax_gap = abs(closed - oracle)
    minmax_ok = minmax_gap <= MINMAX_AGREEMENT_TOL * max(closed, oracle) + 1e-10

    lbb = lbb_monte_carlo(v, q0, rng, points=cfg.mc_points, samples=cfg.mc_samples)
    update = basis_update_check(v, inst.key_basis(), inst.value_basis(columns=d))
    update_ok = update.holds(BASIS_UPDATE_SLACK) and update.minimizer_gap <= BASIS_UPDATE_SLACK

    checks = {
        "reproduction": reproduction < REPRODUCTION_TOL,
        "lambda_agreement": projection.lambda_disagreement < LAMBDA_AGREEMENT_TOL,
        "cea": cea.holds,
        "perturbed_cea": perturbed.holds,
        "minmax_agreement": minmax_ok,
        "lbb": lbb.holds and lbb.sampled_within_dual,
        "basis_update": update_ok,
    }
    return {
        "index": index,
        "n": n,
        "d": d,
        "r": r,
        "family": family,
        "permuted": index == 0,
        "reproduction_error": reproduction,
        "lambda_disagreement": projection.lambda_disagreement,
        "cea_lhs": cea.lhs,
        "cea_rhs": cea.rhs,
        "perturbed_cea_lhs": perturbed.lhs,
        "perturbed_cea_rhs": perturbed.rhs,
        "minmax_closed_form": closed,
        "minmax_descent": oracle,
        "lbb_constant": lbb.constant,
        "lbb_min_margin": lbb.min_margin,
        "basis_update_max_defect": update.max_defect,
        "basis_update_excess": update.max_excess,
        "basis_update_minimizer_gap": update.minimizer_gap,
        "checks": checks,
        "passed": all(checks.values()),
    }


def smooth_bases(n: int, d: int, r: int, mix: np.ndarray) -> tuple:
    """Fixed smooth (non-periodic) test and value bases sampled on the grid i/n."""
    x = np.arange(n) / n
    v = np.stack([np.cos(np.pi * j * x) for j in range(d)], axis=1)
    q0 = (v @ mix)[:, :r]
    h = 1.0 / n
    return BasisSet(v, h, label="omega*"), BasisSet(q0, h, label="omega")


def nodal_bases(n: int, d: int, r: int) -> tuple:
    """Unit nodal columns at d spread-out nodes; Q0 takes the first r of them."""
    idx = np.linspace(0, n - 1, d).astype(int)
    cols = np.eye(n)[:, idx]
    h = 1.0 / n
    return BasisSet(cols, h, label="omega*"), BasisSet(cols[:, :r], h, label="omega")


def lbb_sweep(cfg: VerifyConfig) -> Dict[str, Any]:
    """Inf-sup constant of fixed smooth bases across grid sizes, plus the nodal case."""
    d = max(cfg.dims)
    r = max(1, d // 2)
    mix = well_conditioned(d, substream(cfg.seed, "verify-lbb"))
    constants, nodal = [], []
    for n in cfg.lbb_sizes:
        v, q0 = smooth_bases(n, d, r, mix)
        constants.append(lbb_constant(mixed_matrix(v, q0), norm_constant(v), norm_constant(q0)))
        nv, nq = nodal_bases(n, d, r)
        nodal.append(lbb_constant(mixed_matrix(nv, nq), nodal_constant(nv), nodal_constant(nq)))
    variation = max(constants) / min(constants) - 1.0
    return {
        "sizes": list(cfg.lbb_sizes),
        "d": d,
        "r": r,
        "constants": constants,
        "variation": variation,
        "nodal_constants": nodal,
        "passed": variation < LBB_VARIATION_LIMIT and all(abs(c - 1.0) < 1e-12 for c in nodal),
    }


@dataclass
class VerificationReport:
    config: VerifyConfig
    trials: List[Dict[str, Any]] = field(default_factory=list)
    errors: List[Dict[str, Any]] = field(default_factory=list)
    lbb: Dict[str, Any] = field(default_factory=dict)
    elapsed_seconds: float = 0.0
    manifest: Optional[str] = None

    @property
    def passed_count(self) -> int:
        return sum(1 for t in self.trials if t["passed"])

    @property
    def passed(self) -> bool:
        return not self.errors and self.passed_count == len(self.trials) and bool(self.lbb.get("passed", True))

    def summary(self) -> Dict[str, Any]:
        def worst(key: str) -> float:
            return max((t[key] for t in self.trials), default=0.0)

        return {
            "trials": len(self.trials) + len(self.errors),
            "passed": self.passed_count,
            "failed_trials": [t["index"] for t in self.trials if not t["passed"]],
            "errors": len(self.errors),
            "max_reproduction_error": worst("reproduction_error"),
            "max_lambda_disagreement": worst("lambda_disagreement"),
            "max_minmax_gap": max((abs(t["minmax_closed_form"] - t["minmax_descent"]) for t in self.trials),
                                  default=0.0),
            "max_basis_update_excess": worst("basis_update_excess"),
            "lbb_passed": bool(self.lbb.get("passed", True)),
            "fault_injected": self.config.inject_fault,
            "all_passed": self.passed,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "summary": self.summary(),
            "trials": self.trials,
            "errors": self.errors,
            "lbb_sweep": self.lbb,
            "elapsed_seconds": self.elapsed_seconds,
            "manifest": self.manifest,
        }

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path


def run_suite(cfg: Optional[VerifyConfig] = None) -> VerificationReport:
    cfg = cfg or VerifyConfig()
    cfg.validate()
    start = time.perf_counter()
    report = VerificationReport(config=cfg)
    results = map_ordered(lambda i: run_trial(i, cfg), range(cfg.trials), capture_errors=True)
    for index, result in enumerate(results):
        if isinstance(result, ErrorReport):
            logger.error("Verification trial %d raised %s", index, result.to_dict())
            logger.debug("Trial %d traceback:\n%s", index, result.traceback)
            report.errors.append({"index": index, **result.to_dict()})
        else:
            report.trials.append(result)
    report.lbb = lbb_sweep(cfg)
    report.elapsed_seconds = time.perf_counter() - start
    logger.info(
        "Verification: %d/%d trials passed, lbb sweep %s (%.2fs)",
        report.passed_count, cfg.trials, "ok" if report.lbb["passed"] else "FAILED", report.elapsed_seconds,
    )
    return report


__all__ = [
    "Instance",
    "VerificationReport",
    "build_instance",
    "family_basis",
    "well_conditioned",
    "run_trial",
    "lbb_sweep",
    "run_suite",
]
