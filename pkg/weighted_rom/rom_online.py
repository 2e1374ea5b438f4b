"""
Online phase: reduced Galerkin solves and Monte-Carlo error/statistics sweeps.
"""
import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np

from .fem_core import AffineOperatorSet, TruthSpace, evaluate_output, solve_many, v_norm
from .greedy_rb import continuity_upper_bound, estimate
from .param_space import ParameterDistribution
from .reduced_basis import ReducedBasis, solve_reduced_system

logger = logging.getLogger(__name__)

DEFAULT_TEST_SIZE = 100


@dataclass(frozen=True)
class ErrorReport:
    n: int
    mean_sq_error: float
    max_error: float
    estimator_mean_sq: Optional[float]
    min_effectivity: Optional[float]
    max_effectivity: Optional[float]
    test_size: int
    seed: Optional[int]


def reduced_solve(rb: ReducedBasis, y: Sequence[float]) -> np.ndarray:
    """Solve sum_q theta_q(y) A^N_q u_N = sum_q theta_q(y) f^N_q."""
    if rb.N < 1:
        raise ValueError("Reduced basis is empty")
    return solve_reduced_system(rb.reduced_matrix(y), rb.reduced_rhs(y), y)


def reconstruct(rb: ReducedBasis, uN: np.ndarray) -> np.ndarray:
    uN = np.asarray(uN, dtype=float)
    if uN.shape != (rb.N,):
        raise ValueError(f"Reduced coefficients must have length {rb.N}, got shape {uN.shape}")
    return rb.Z @ uN


def _test_params(dist: ParameterDistribution, M: int, seed: Optional[int], test_params: Optional[np.ndarray]) -> np.ndarray:
    if test_params is not None:
        return np.atleast_2d(np.asarray(test_params, dtype=float))
    if M < 1:
        raise ValueError(f"Test set size must be >= 1, got {M}")
    return dist.sample(M, seed)


def _report(
    rb: ReducedBasis,
    space: TruthSpace,
    params: np.ndarray,
    truth: List[np.ndarray],
    seed: Optional[int],
) -> ErrorReport:
    errors = np.empty(len(params))
    etas = np.empty(len(params)) if rb.estimator is not None else None
    for m, (y, u) in enumerate(zip(params, truth)):
        uN = reduced_solve(rb, y)
        errors[m] = v_norm(space, u - reconstruct(rb, uN))
        if etas is not None:
            etas[m] = estimate(rb.estimator, y, uN)
    effectivity = None
    if etas is not None:
        nonzero = errors > 0.0
        effectivity = etas[nonzero] / errors[nonzero] if np.any(nonzero) else None
    return ErrorReport(
        n=rb.N,
        mean_sq_error=float(np.mean(errors**2)),
        max_error=float(errors.max()),
        estimator_mean_sq=None if etas is None else float(np.mean(etas**2)),
        min_effectivity=None if effectivity is None else float(effectivity.min()),
        max_effectivity=None if effectivity is None else float(effectivity.max()),
        test_size=len(params),
        seed=seed,
    )


def mean_square_error(
    rb: ReducedBasis,
    ops: AffineOperatorSet,
    space: TruthSpace,
    dist: ParameterDistribution,
    M: int = DEFAULT_TEST_SIZE,
    seed: Optional[int] = None,
    test_params: Optional[np.ndarray] = None,
) -> ErrorReport:
    """Monte-Carlo estimate of E[||u_delta - u_N||_V^2] over M draws from rho.

    Also reports the max error and, when estimator data exists, the mean
    squared estimator and the effectivity range.
    """
    params = _test_params(dist, M, seed, test_params)
    truth = [s.coeffs for s in solve_many(ops, space, params)]
    return _report(rb, space, params, truth, seed)


def iter_error_curve(
    rb: ReducedBasis,
    ops: AffineOperatorSet,
    space: TruthSpace,
    dist: ParameterDistribution,
    M: int = DEFAULT_TEST_SIZE,
    seed: Optional[int] = None,
    test_params: Optional[np.ndarray] = None,
) -> Iterator[ErrorReport]:
    """Error reports for the column prefixes N = 1..rb.N, sharing one set of truth solves.

    A breakdown at some N propagates after the reports for smaller N were yielded.
    """
    params = _test_params(dist, M, seed, test_params)
    truth = [s.coeffs for s in solve_many(ops, space, params)]
    for n in range(1, rb.N + 1):
        report = _report(rb.truncate(n), space, params, truth, seed)
        logger.info("N=%d: mean square error %.6e, max error %.6e", n, report.mean_sq_error, report.max_error)
        yield report


def error_curve(
    rb: ReducedBasis,
    ops: AffineOperatorSet,
    space: TruthSpace,
    dist: ParameterDistribution,
    M: int = DEFAULT_TEST_SIZE,
    seed: Optional[int] = None,
) -> List[ErrorReport]:
    return list(iter_error_curve(rb, ops, space, dist, M, seed))


def expected_output(
    rb: ReducedBasis,
    ops: AffineOperatorSet,
    dist: ParameterDistribution,
    M: int = DEFAULT_TEST_SIZE,
    seed: Optional[int] = None,
) -> float:
    """Monte-Carlo mean of the compliance s(u_N(y); y)."""
    params = _test_params(dist, M, seed, None)
    outputs = [evaluate_output(ops, y, reconstruct(rb, reduced_solve(rb, y))) for y in params]
    return float(np.mean(outputs))


def expected_solution(rb: ReducedBasis, dist: ParameterDistribution, M: int = DEFAULT_TEST_SIZE, seed: Optional[int] = None) -> np.ndarray:
    """Monte-Carlo mean field E[u_N] in truth coefficients."""
    params = _test_params(dist, M, seed, None)
    mean_coeffs = np.mean([reduced_solve(rb, y) for y in params], axis=0)
    return reconstruct(rb, mean_coeffs)


@dataclass(frozen=True)
class EffectivityReport:
    n: int
    min_effectivity: float
    max_effectivity: float
    mean_effectivity: float
    alpha_bar: float
    gamma_bar: float
    violations: int  # test points with eta_N < e_N


def effectivity_report(
    rb: ReducedBasis,
    ops: AffineOperatorSet,
    space: TruthSpace,
    dist: ParameterDistribution,
    M: int = DEFAULT_TEST_SIZE,
    seed: Optional[int] = None,
    test_params: Optional[np.ndarray] = None,
) -> EffectivityReport:
    """Sharpness of the certified bound: eta_N(y) / ||u_delta(y) - u_N(y)||_V over a test set.

    Points where the error vanishes to machine precision are skipped.
    """
    if rb.estimator is None:
        raise ValueError("Reduced basis has no estimator data")
    params = _test_params(dist, M, seed, test_params)
    ratios = []
    for snapshot in solve_many(ops, space, params):
        uN = reduced_solve(rb, snapshot.y)
        error = v_norm(space, snapshot.coeffs - reconstruct(rb, uN))
        if error > 0.0:
            ratios.append(estimate(rb.estimator, snapshot.y, uN) / error)
    if not ratios:
        raise ValueError("Reduced solutions are exact on the whole test set; effectivity is undefined")
    ratios = np.array(ratios)
    violations = int(np.count_nonzero(ratios < 1.0))
    if violations:
        logger.warning("Estimator below the true error at %d of %d test points", violations, ratios.size)
    return EffectivityReport(
        n=rb.N,
        min_effectivity=float(ratios.min()),
        max_effectivity=float(ratios.max()),
        mean_effectivity=float(ratios.mean()),
        alpha_bar=rb.estimator.alpha_bar,
        gamma_bar=rb.estimator.gamma_bar,
        violations=violations,
    )


def output_error_bound(rb: ReducedBasis, y: Sequence[float], uN: np.ndarray) -> float:
    """|s(u_delta) - s(u_N)| <= gamma(y) * eta_N(y)^2 for the compliant output."""
    if rb.estimator is None:
        raise ValueError("Reduced basis has no estimator data")
    eta = estimate(rb.estimator, y, uN)
    return continuity_upper_bound(rb.maps, rb.estimator.gamma_bar, y) * eta**2


__all__ = [
    "ErrorReport",
    "reduced_solve",
    "reconstruct",
    "mean_square_error",
    "iter_error_curve",
    "error_curve",
    "expected_output",
    "expected_solution",
    "output_error_bound",
    "EffectivityReport",
    "effectivity_report",
    "DEFAULT_TEST_SIZE",
]
