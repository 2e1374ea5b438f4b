"""
Weighted proper orthogonal decomposition.

The POD space of dimension N minimizes sum_i w_i ||phi_i - P_N phi_i||_V^2 over
the training snapshots phi_i. Its modes come from the eigenproblem of the
weighted correlation matrix C^w = W C, C_ij = <phi_i, phi_j>_V.
"""
import csv
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .fem_core import AffineOperatorSet, Snapshot, TruthSpace, solve_many
from .quadrature import TrainingSet
from .reduced_basis import ReducedBasis, build_reduced_basis, orthonormal_basis

logger = logging.getLogger(__name__)

RANGE_TOL = 1e-12


@dataclass(frozen=True)
class PodSpectrum:
    eigenvalues: np.ndarray  # descending, length n_t
    eigenvectors: np.ndarray  # (n_t, r), columns are eigenvectors of W C
    retained_energy: np.ndarray  # E_N for N = 1..n_t
    indefinite: bool = False

    @property
    def n_positive(self) -> int:
        return int(np.count_nonzero(self.eigenvalues > 0.0))


def correlation_matrix(space: TruthSpace, snapshots: Sequence) -> np.ndarray:
    """Gram matrix C_ij = <phi_i, phi_j>_V of snapshot coefficient vectors (or Snapshot objects)."""
    if len(snapshots) == 0:
        raise ValueError("Need at least one snapshot")
    Phi = _snapshot_matrix(space, snapshots)
    C = Phi.T @ (space.X @ Phi)
    return 0.5 * (C + C.T)


def _snapshot_matrix(space: TruthSpace, snapshots: Sequence) -> np.ndarray:
    cols = [s.coeffs if isinstance(s, Snapshot) else np.asarray(s, dtype=float) for s in snapshots]
    for c in cols:
        if c.shape != (space.n_dof,):
            raise ValueError(f"Snapshot has shape {c.shape}, expected ({space.n_dof},)")
    return np.column_stack(cols)


def _retained_energy(eigenvalues: np.ndarray) -> np.ndarray:
    """E_N = sum_{k<=N, lambda_k>0} lambda_k / sum_k |lambda_k|."""
    total = np.abs(eigenvalues).sum()
    if total == 0.0:
        return np.zeros_like(eigenvalues)
    return np.cumsum(np.clip(eigenvalues, 0.0, None)) / total


def weighted_eig(C: np.ndarray, weights: Sequence[float]) -> PodSpectrum:
    """Spectrum of W C for W = diag(weights).

    Nonnegative weights go through the symmetric matrix S = W^{1/2} C W^{1/2};
    eigenvectors of W C are W^{1/2} psi_S. Sign-indefinite weights (sparse
    rules) are handled by diagonalizing W C in the C-inner product on range(C),
    i.e. C W C psi = lambda C psi.
    """
    C = np.asarray(C, dtype=float)
    w = np.asarray(weights, dtype=float)
    n_t = C.shape[0]
    if C.shape != (n_t, n_t) or w.shape != (n_t,):
        raise ValueError(f"Correlation matrix {C.shape} and weights {w.shape} do not match")
    if not np.any(w != 0.0):
        raise ValueError("All quadrature weights are zero")

    try:
        if np.all(w >= 0.0):
            sw = np.sqrt(w)
            S = sw[:, None] * C * sw[None, :]
            lam, psi_s = scipy.linalg.eigh(0.5 * (S + S.T))
            order = np.argsort(lam)[::-1]
            lam, psi_s = lam[order], psi_s[:, order]
            psi = sw[:, None] * psi_s
            indefinite = False
        else:
            sigma, U = scipy.linalg.eigh(C)
            keep = sigma > RANGE_TOL * max(sigma.max(), 0.0)
            B = np.sqrt(sigma[keep])[:, None] * U[:, keep].T  # C = B^T B on range(C)
            M = B @ (w[:, None] * B.T)
            lam_r, chi = scipy.linalg.eigh(0.5 * (M + M.T))
            order = np.argsort(lam_r)[::-1]
            lam_r, chi = lam_r[order], chi[:, order]
            psi = U[:, keep] @ (chi / np.sqrt(sigma[keep])[:, None])
            lam = np.zeros(n_t)
            lam[: lam_r.size] = lam_r
            # zeros (null directions) belong between the positive and negative modes
            lam = np.sort(lam)[::-1]
            n_neg = int(np.count_nonzero(lam_r < 0.0))
            if n_neg:
                logger.warning("Indefinite weights: %d negative POD modes excluded from truncation", n_neg)
            indefinite = True
    except np.linalg.LinAlgError as e:
        raise RuntimeError(f"POD eigensolver failed: {e}") from e

    return PodSpectrum(lam, psi, _retained_energy(lam), indefinite)


def truncation_size(spectrum: PodSpectrum, eps_tol: float, n_max: int) -> int:
    """Smallest N <= n_max with E_N > 1 - eps_tol (n_max if never reached), capped by the positive modes."""
    if not eps_tol > 0:
        raise ValueError(f"eps_tol must be positive, got {eps_tol}")
    if n_max < 1:
        raise ValueError(f"N_max must be >= 1, got {n_max}")
    limit = min(n_max, spectrum.n_positive)
    for n in range(1, limit + 1):
        if spectrum.retained_energy[n - 1] > 1.0 - eps_tol:
            return n
    return limit


def pod_modes(space: TruthSpace, snapshots: Sequence, spectrum: PodSpectrum, n: int) -> np.ndarray:
    """xi^k = sum_j psi^k_j phi_j for the n leading modes, with ||xi^k||_V^2 = lambda_k (positive weights)."""
    Phi = _snapshot_matrix(space, snapshots)
    # eigenvector columns are sorted by decreasing eigenvalue, positive modes first
    return Phi @ spectrum.eigenvectors[:, : min(n, spectrum.n_positive)]


def pod_build(
    ops: AffineOperatorSet,
    space: TruthSpace,
    training: TrainingSet,
    eps_tol: float,
    n_max: int,
    snapshots: Optional[Sequence[Snapshot]] = None,
) -> ReducedBasis:
    """Weighted POD offline stage over a quadrature training set.

    Args:
        ops: Affine operators.
        space: Truth space.
        training: Nodes and quadrature weights; weights enter W.
        eps_tol: Retained-energy tolerance (E_N > 1 - eps_tol).
        n_max: Maximum basis dimension.
        snapshots: Precomputed truth solves at the training nodes.

    Returns:
        ReducedBasis without estimator data; metadata holds the spectrum.
    """
    if len(training) == 0:
        raise ValueError("Training set must not be empty")
    if not eps_tol > 0:
        raise ValueError(f"eps_tol must be positive, got {eps_tol}")
    if snapshots is None:
        snapshots = solve_many(ops, space, training.nodes)
    C = correlation_matrix(space, snapshots)

    metadata = {
        "builder": "pod",
        "eps_tol": eps_tol,
        "n_max": n_max,
        "training_provenance": training.provenance,
        "training_size": len(training),
    }
    if np.trace(C) == 0.0:
        logger.warning("All snapshots are zero; returning an empty basis")
        metadata.update(status="zero energy", eigenvalues=[], retained_energy=[])
        return build_reduced_basis(ops, np.zeros((space.n_dof, 0)), metadata=metadata)

    spectrum = weighted_eig(C, training.weights)
    if spectrum.n_positive == 0:
        logger.warning("No positive POD eigenvalue (trace of W C = %.3e); returning an empty basis", float(spectrum.eigenvalues.sum()))
        metadata.update(
            status="zero energy",
            eigenvalues=[float(v) for v in spectrum.eigenvalues],
            retained_energy=[float(v) for v in spectrum.retained_energy],
            indefinite_weights=spectrum.indefinite,
        )
        return build_reduced_basis(ops, np.zeros((space.n_dof, 0)), metadata=metadata)
    n = truncation_size(spectrum, eps_tol, n_max)
    Z = orthonormal_basis(space, pod_modes(space, snapshots, spectrum, n))
    logger.info("POD: N=%d of %d snapshots, E_N=%.12f", Z.shape[1], len(training), spectrum.retained_energy[n - 1])
    metadata.update(
        status="tolerance" if spectrum.retained_energy[n - 1] > 1.0 - eps_tol else "n_max",
        eigenvalues=[float(v) for v in spectrum.eigenvalues],
        retained_energy=[float(v) for v in spectrum.retained_energy],
        indefinite_weights=spectrum.indefinite,
    )
    return build_reduced_basis(ops, Z, metadata=metadata)


def write_spectrum_csv(eigenvalues: Sequence[float], retained_energy: Sequence[float], path: str) -> None:
    """One row (k, lambda_k, E_k) per eigenvalue, floats written with repr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "lambda_k", "E_k"])
        for k, (lam, energy) in enumerate(zip(eigenvalues, retained_energy), start=1):
            writer.writerow([k, repr(float(lam)), repr(float(energy))])


__all__ = [
    "PodSpectrum",
    "correlation_matrix",
    "weighted_eig",
    "truncation_size",
    "pod_modes",
    "pod_build",
    "write_spectrum_csv",
]
