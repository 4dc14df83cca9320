"""Discrete Petrov-Galerkin machinery behind the linear-attention estimates.

Functions on a grid are nodal vectors; ``<u, v>_h = h^m sum u_i v_i``. A
value space Q_h and a test space V_h are given by the columns of basis
matrices. Everything here is plain numpy (no tape): these routines check
identities of the attention construction, they are not trained.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from gkt.config.constants import DEGENERATE_SIGMA, RANK_THRESHOLD
from gkt.core.linalg import SPDSolver, as_array, svd_small
from gkt.errors import ConfigError, DegenerateError, DimensionError, NotSPDError, NumericalError, RankError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BasisSet:
    """n x d nodal values of d basis functions; column j holds v_j at the grid points."""

    values: np.ndarray
    h: float
    dim: int = 1
    label: str = "omega"

    def __post_init__(self) -> None:
        values = as_array(self.values)
        if values.ndim != 2 or values.shape[1] > values.shape[0]:
            raise DimensionError(f"basis must be n x d with d <= n, got {values.shape}")
        if self.h <= 0:
            raise ConfigError(f"mesh size must be positive, got {self.h}")
        object.__setattr__(self, "values", values)
        sigma = np.linalg.svd(np.sqrt(self.weight) * values, compute_uv=False)
        if sigma.size and sigma[-1] <= RANK_THRESHOLD:
            raise RankError(f"basis is rank deficient (smallest singular value {sigma[-1]:.3e})")

    @property
    def weight(self) -> float:
        """h^m, the quadrature weight of every node."""
        return self.h ** self.dim

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def columns(self, count: int) -> "BasisSet":
        return BasisSet(self.values[:, :count], self.h, self.dim, self.label)

    def combine(self, coeffs: np.ndarray) -> np.ndarray:
        return self.values @ coeffs


def h_inner(u, v, h: float, dim: int = 1) -> float:
    u, v = as_array(u), as_array(v)
    if u.shape != v.shape:
        raise DimensionError(f"h_inner needs equal shapes, got {u.shape} and {v.shape}")
    return float(h ** dim * np.dot(u.ravel(), v.ravel()))


def h_norm(u, h: float, dim: int = 1) -> float:
    return float(np.sqrt(max(h_inner(u, u, h, dim), 0.0)))


def _check_pair(a: BasisSet, b: BasisSet) -> None:
    if a.n != b.n or a.h != b.h or a.dim != b.dim:
        raise DimensionError(f"bases live on different grids: n={a.n}/{b.n}, h={a.h}/{b.h}")


def gram_matrix(basis: BasisSet) -> np.ndarray:
    """M_ij = <v_j, v_i>_h, verified SPD by a Cholesky factorization."""
    m = basis.weight * basis.values.T @ basis.values
    m = 0.5 * (m + m.T)
    SPDSolver(m)
    return m


def mixed_matrix(v: BasisSet, q0: BasisSet) -> np.ndarray:
    """B = h^m Q0^T V (r x d), B_ij = b(v_j, q_i)."""
    _check_pair(v, q0)
    return v.weight * q0.values.T @ v.values


def riesz_data(f, v: BasisSet) -> np.ndarray:
    """zeta_j = <f, v_j>_h."""
    f = as_array(f)
    if f.shape != (v.n,):
        raise DimensionError(f"function has shape {f.shape}, basis has {v.n} nodes")
    return v.weight * v.values.T @ f


def dual_norm(functional: np.ndarray, gram: np.ndarray) -> float:
    """||g||_{V'} = sqrt(r^T M^-1 r) for the functional with coefficients r on a basis with Gram M."""
    r = as_array(functional)
    return float(np.sqrt(max(float(r @ SPDSolver(gram).solve(r)), 0.0)))


@dataclass(frozen=True)
class SaddleSystem:
    """[[M, B^T], [B, 0]] [mu; lambda] = [zeta; 0]."""

    m: np.ndarray
    b: np.ndarray
    zeta: np.ndarray

    def __post_init__(self) -> None:
        d = self.m.shape[0]
        if self.m.shape != (d, d) or self.b.ndim != 2 or self.b.shape[1] != d or self.zeta.shape != (d,):
            raise DimensionError(
                f"inconsistent saddle system: M {self.m.shape}, B {self.b.shape}, zeta {self.zeta.shape}"
            )
        if self.b.shape[0] > d:
            raise RankError(f"value space dimension {self.b.shape[0]} exceeds test space dimension {d}")

    @property
    def r(self) -> int:
        return self.b.shape[0]

    def schur(self) -> Tuple[np.ndarray, SPDSolver]:
        """S = B M^-1 B^T and the factorization of M."""
        m_solver = SPDSolver(self.m)
        s = self.b @ m_solver.solve(self.b.T)
        return 0.5 * (s + s.T), m_solver

    def solve_schur(self) -> Tuple[np.ndarray, np.ndarray]:
        s, m_solver = self.schur()
        try:
            s_solver = SPDSolver(s)
        except NotSPDError as exc:
            raise RankError(f"mixed matrix is not of full row rank: {exc}") from exc
        lam = s_solver.solve(self.b @ m_solver.solve(self.zeta))
        mu = m_solver.solve(self.zeta - self.b.T @ lam)
        return lam, mu

    def solve_block(self) -> Tuple[np.ndarray, np.ndarray]:
        d, r = self.m.shape[0], self.r
        block = np.zeros((d + r, d + r))
        block[:d, :d] = self.m
        block[:d, d:] = self.b.T
        block[d:, :d] = self.b
        rhs = np.concatenate([self.zeta, np.zeros(r)])
        try:
            sol = np.linalg.solve(block, rhs)
        except np.linalg.LinAlgError as exc:
            raise RankError(f"saddle block matrix is singular: {exc}") from exc
        return sol[d:], sol[:d]

    def residual(self, lam: np.ndarray) -> float:
        """sqrt((zeta - B^T lam)^T M^-1 (zeta - B^T lam))."""
        return dual_norm(self.zeta - self.b.T @ lam, self.m)


@dataclass(frozen=True)
class ProjectionResult:
    lam: np.ndarray
    mu: np.ndarray
    p: np.ndarray
    residual_dual_norm: float
    lam_block: np.ndarray
    zeta: np.ndarray

    @property
    def lambda_disagreement(self) -> float:
        """Relative gap between the Schur and block-solve coefficients."""
        scale = max(np.linalg.norm(self.lam), 1e-300)
        return float(np.linalg.norm(self.lam - self.lam_block) / scale)


def project_from_data(zeta: np.ndarray, q0: BasisSet, v: BasisSet) -> ProjectionResult:
    if q0.d > v.d:
        raise RankError(f"value space dimension {q0.d} exceeds test space dimension {v.d}")
    system = SaddleSystem(gram_matrix(v), mixed_matrix(v, q0), as_array(zeta))
    lam, mu = system.solve_schur()
    lam_block, _ = system.solve_block()
    return ProjectionResult(lam=lam, mu=mu, p=q0.combine(lam), residual_dual_norm=system.residual(lam),
                            lam_block=lam_block, zeta=system.zeta)


def petrov_galerkin_project(f, q0: BasisSet, v: BasisSet) -> ProjectionResult:
    """p = Q0 lam with lam = (B M^-1 B^T)^-1 B M^-1 zeta, zeta_j = <f, v_j>_h."""
    _check_pair(v, q0)
    return project_from_data(riesz_data(f, v), q0, v)


def best_approximation(f, q0: BasisSet) -> np.ndarray:
    """f_h: the <.,.>_h-orthogonal projection of f onto span(Q0), by least squares."""
    w = np.sqrt(q0.weight)
    coeffs, *_ = np.linalg.lstsq(w * q0.values, w * as_array(f), rcond=None)
    return q0.combine(coeffs)


# -- attention construction --------------------------------------------

@dataclass(frozen=True)
class AttentionWeights:
    """Projection matrices whose Galerkin-type attention realizes the projection."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter((self.w_q, self.w_k, self.w_v))


def construct_attention_weights(y, w_q, w_v, u, m: np.ndarray, b: np.ndarray) -> AttentionWeights:
    """W~q = Wq U, W~k = Wq U Lambda, W~v = Wv M^-1 with Lambda = blkdiag((B M^-1 B^T)^-1, 0).

    The first r columns of y Wq U must hold the value basis Q0 of B.
    """
    y, w_q, w_v, u = (as_array(a) for a in (y, w_q, w_v, u))
    d = y.shape[1]
    if w_q.shape != (d, d) or w_v.shape != (d, d) or u.shape != (d, d):
        raise DimensionError(f"weights must be {d} x {d}, got {w_q.shape}, {w_v.shape}, {u.shape}")
    r = b.shape[0]
    s, m_solver = SaddleSystem(m, b, np.zeros(d)).schur()
    try:
        s_inv = SPDSolver(s).inverse()
    except NotSPDError as exc:
        raise RankError(f"Schur complement is singular: {exc}") from exc
    lam_block = np.zeros((d, d))
    lam_block[:r, :r] = s_inv
    wq_u = w_q @ u
    return AttentionWeights(w_q=wq_u, w_k=wq_u @ lam_block, w_v=w_v @ m_solver.inverse())


def apply_attention_weights(y, weights: AttentionWeights, zeta, h: float, dim: int = 1) -> np.ndarray:
    """h^m Q~ (K~^T V~) zeta, evaluated in the linear-cost order."""
    y = as_array(y)
    q, k, v = (y @ w for w in weights)
    return h ** dim * (q @ ((k.T @ v) @ as_array(zeta)))


# -- stability constants -----------------------------------------------

def norm_constant(basis: BasisSet) -> float:
    """Smallest c with ||B a||_h <= c |a| for all coefficient vectors a."""
    return float(np.linalg.svd(np.sqrt(basis.weight) * basis.values, compute_uv=False)[0])


def nodal_constant(basis: BasisSet) -> float:
    """sqrt(h^m), the equivalence constant of unit nodal columns."""
    return float(np.sqrt(basis.weight))


def lbb_constant(b, c_v: float = 1.0, c_q: float = 1.0) -> float:
    """min singular value of B over c_V * c_Q."""
    if c_v <= 0 or c_q <= 0:
        raise ConfigError(f"norm constants must be positive, got {c_v}, {c_q}")
    _, sigma, _ = svd_small(b)
    smallest = float(sigma[-1])
    if smallest < DEGENERATE_SIGMA:
        raise DegenerateError(f"value/test pair is degenerate (sigma_min={smallest:.3e})")
    return smallest / (c_v * c_q)


@dataclass(frozen=True)
class LBBSample:
    constant: float
    min_margin: float
    holds: bool
    sampled_within_dual: bool


def lbb_monte_carlo(v: BasisSet, q0: BasisSet, rng: np.random.Generator, points: int = 50,
                    samples: int = 500, constant: Optional[float] = None) -> LBBSample:
    """Empirical sup_w |b(w, p)| / ||w|| >= c ||p|| for random p in Q_h.

    Candidates are random w in V_h plus the maximizer V M^-1 B^T lam. Pure
    random candidates must never exceed the closed-form dual norm.
    """
    m = gram_matrix(v)
    b = mixed_matrix(v, q0)
    if constant is None:
        constant = lbb_constant(b, norm_constant(v), norm_constant(q0))
    m_solver = SPDSolver(m)
    gram_q = gram_matrix(q0)
    min_margin = np.inf
    within = True
    for _ in range(points):
        lam = rng.standard_normal(q0.d)
        p_norm = float(np.sqrt(lam @ gram_q @ lam))
        functional = b.T @ lam
        mus = rng.standard_normal((samples, v.d))
        ratios = np.abs(mus @ functional) / np.sqrt(np.einsum("ij,jk,ik->i", mus, m, mus))
        best_mu = m_solver.solve(functional)
        exact = float(np.sqrt(max(functional @ best_mu, 0.0)))
        best = max(float(ratios.max()), abs(float(best_mu @ functional)) / float(np.sqrt(best_mu @ m @ best_mu)))
        within = within and float(ratios.max()) <= exact * (1.0 + 1e-10) + 1e-300
        min_margin = min(min_margin, best - constant * p_norm * (1.0 - 1e-12))
    return LBBSample(constant=constant, min_margin=float(min_margin), holds=min_margin >= 0.0,
                     sampled_within_dual=within)


# -- quasi-optimality ----------------------------------------------------

def minmax_closed_form(system: SaddleSystem) -> float:
    """min over lam of ||zeta - B^T lam||_{M^-1}, at the Schur solution."""
    lam, _ = system.solve_schur()
    return system.residual(lam)


def minmax_descent(system: SaddleSystem, rng: np.random.Generator, restarts: int = 20,
                   max_iter: int = 5000, rtol: float = 1e-14) -> float:
    """Same quantity by steepest descent with exact line search from random starts."""
    m_solver = SPDSolver(system.m)
    hessian = 2.0 * system.b @ m_solver.solve(system.b.T)
    linear = 2.0 * system.b @ m_solver.solve(system.zeta)
    floor = 1e-30 * (1.0 + float(system.zeta @ system.zeta))

    best = np.inf
    scale = 1.0 + np.linalg.norm(system.zeta)
    for _ in range(restarts):
        lam = rng.standard_normal(system.r) * scale
        value = system.residual(lam) ** 2
        for _ in range(max_iter):
            grad = hessian @ lam - linear
            gg = float(grad @ grad)
            curvature = float(grad @ hessian @ grad)
            if curvature <= 0.0:
                break
            decrease = 0.5 * gg * gg / curvature
            lam = lam - (gg / curvature) * grad
            value -= decrease
            if decrease <= rtol * max(value, 0.0) + floor:
                break
        best = min(best, system.residual(lam))
    if not np.isfinite(best):
        raise NumericalError("min-max descent did not produce a finite value")
    return float(best)


@dataclass(frozen=True)
class CeaResult:
    lhs: float
    rhs: float
    holds: bool
    minmax: float
    best_error: float
    constant: float
    p: np.ndarray


def cea_check(f, q0: BasisSet, v: BasisSet, y=None, weights: Optional[AttentionWeights] = None,
              slack: float = 1e-9) -> CeaResult:
    """||f - p||_h <= c^-1 minmax + ||f - f_h||_h with p realized from the data of f_h.

    With ``y`` and ``weights`` the realized p is the constructed attention
    output; otherwise it is Q0 lam from the saddle solve.
    """
    f = as_array(f)
    f_h = best_approximation(f, q0)
    zeta = riesz_data(f_h, v)
    system = SaddleSystem(gram_matrix(v), mixed_matrix(v, q0), zeta)
    if weights is not None:
        if y is None:
            raise ConfigError("constructed weights need the input y")
        p = apply_attention_weights(y, weights, zeta, v.h, v.dim)
    else:
        lam, _ = system.solve_schur()
        p = q0.combine(lam)
    constant = lbb_constant(system.b, norm_constant(v), norm_constant(q0))
    minmax = minmax_closed_form(system)
    best_error = h_norm(f - f_h, v.h, v.dim)
    lhs = h_norm(f - p, v.h, v.dim)
    rhs = minmax / constant + best_error
    return CeaResult(lhs=lhs, rhs=rhs, holds=lhs <= rhs + slack, minmax=minmax,
                     best_error=best_error, constant=constant, p=p)


def perturbed_cea_check(f, q0: BasisSet, v: BasisSet, slack: float = 1e-9) -> CeaResult:
    """Bound for p built from the data of f itself.

    ||f - p|| <= ||f - f_h|| + c^-1 (||f - f_h||_{V'} + minmax(f)).
    """
    f = as_array(f)
    result = petrov_galerkin_project(f, q0, v)
    m = gram_matrix(v)
    f_h = best_approximation(f, q0)
    constant = lbb_constant(mixed_matrix(v, q0), norm_constant(v), norm_constant(q0))
    best_error = h_norm(f - f_h, v.h, v.dim)
    data_error = dual_norm(riesz_data(f - f_h, v), m)
    lhs = h_norm(f - result.p, v.h, v.dim)
    rhs = best_error + (data_error + result.residual_dual_norm) / constant
    return CeaResult(lhs=lhs, rhs=rhs, holds=lhs <= rhs + slack, minmax=result.residual_dual_norm,
                     best_error=best_error, constant=constant, p=result.p)


# -- dynamic basis update ----------------------------------------------

@dataclass(frozen=True)
class BasisUpdateResult:
    max_defect: float
    max_excess: float
    minimizer_gap: float
    q_tilde: np.ndarray

    def holds(self, slack: float) -> bool:
        return self.max_excess <= slack


def basis_update_check(v: BasisSet, k: BasisSet, q: BasisSet) -> BasisUpdateResult:
    """Check z_j = sum_l a(v_j, k_l) q~_l against the best approximation of a(v_j, .).

    a(w, k) = h^m sum w_i k_i. With M_K = h^m K^T K, B = h^m Q^T K and
    Lambda = (B M_K^-1 B^T)^-1, the updated basis is q~ = Q W with
    W = h^m (Q Lambda)^T (K M_K^-1). For each j the defect is the dual norm
    ||a(v_j, .) - b(., z_j)||_{K'_h}; it may not exceed the min-max bound.
    """
    _check_pair(v, k)
    _check_pair(v, q)
    if not v.d == k.d == q.d:
        raise DimensionError(f"update check needs equal ranks, got {v.d}, {k.d}, {q.d}")
    weight = v.weight
    m_k = gram_matrix(k)
    b = mixed_matrix(k, q)
    s, m_solver = SaddleSystem(m_k, b, np.zeros(k.d)).schur()
    try:
        lam_mat = SPDSolver(s).inverse()
    except NotSPDError as exc:
        raise RankError(f"Schur complement is singular: {exc}") from exc
    update = weight * (q.values @ lam_mat).T @ m_solver.solve(k.values.T).T
    q_tilde = q.values @ update
    data = weight * k.values.T @ v.values  # column j: a(v_j, k_l)

    max_defect = max_excess = gap = 0.0
    for j in range(v.d):
        zeta = data[:, j]
        z = q_tilde @ zeta
        defect = dual_norm(zeta - weight * k.values.T @ z, m_k)
        system = SaddleSystem(m_k, b, zeta)
        lam, _ = system.solve_schur()
        bound = system.residual(lam)
        max_defect = max(max_defect, defect)
        max_excess = max(max_excess, defect - bound)
        scale = max(np.linalg.norm(q.combine(lam)), 1e-300)
        gap = max(gap, float(np.linalg.norm(z - q.combine(lam)) / scale))
    return BasisUpdateResult(max_defect=max_defect, max_excess=max_excess, minimizer_gap=gap, q_tilde=q_tilde)


def sampled_dual_norm(functional, gram, rng: np.random.Generator, samples: int = 10_000) -> float:
    """max over random coefficient vectors c of |r.c| / sqrt(c^T M c); never above the exact norm."""
    r = as_array(functional)
    gram = as_array(gram)
    cs = rng.standard_normal((samples, r.shape[0]))
    return float(np.max(np.abs(cs @ r) / np.sqrt(np.einsum("ij,jk,ik->i", cs, gram, cs))))


__all__ = [
    "BasisSet",
    "SaddleSystem",
    "ProjectionResult",
    "AttentionWeights",
    "CeaResult",
    "LBBSample",
    "BasisUpdateResult",
    "h_inner",
    "h_norm",
    "gram_matrix",
    "mixed_matrix",
    "riesz_data",
    "dual_norm",
    "project_from_data",
    "petrov_galerkin_project",
    "best_approximation",
    "construct_attention_weights",
    "apply_attention_weights",
    "norm_constant",
    "nodal_constant",
    "lbb_constant",
    "lbb_monte_carlo",
    "minmax_closed_form",
    "minmax_descent",
    "cea_check",
    "perturbed_cea_check",
    "basis_update_check",
    "sampled_dual_norm",
]
