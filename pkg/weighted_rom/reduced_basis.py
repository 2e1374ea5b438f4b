"""
Reduced basis container shared by the greedy and POD builders.

Holds the X-orthonormal basis Z, the reduced affine operators Z^T A_q Z and
Z^T f_q, the optional estimator Gram blocks, and the binary archive format:

    b"WROM" | version byte | .npz payload (arrays + JSON metadata string)
"""
import io
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import settings
from .errors import ReducedSystemSingularError
from .fem_core import AffineOperatorSet, TruthSpace

logger = logging.getLogger(__name__)

ARCHIVE_MAGIC = b"WROM"
ARCHIVE_VERSION = 1
ORTHONORMAL_TOL = 1e-10
DEPENDENCE_TOL = 1e-10


@dataclass(frozen=True)
class AffineMaps:
    """Coefficient maps theta_q(y) of an affine decomposition, detached from the matrices."""

    a_index: Tuple[Optional[int], ...]
    f_index: Tuple[Optional[int], ...]
    n_params: int

    @classmethod
    def from_ops(cls, ops: AffineOperatorSet) -> "AffineMaps":
        return cls(tuple(ops.a_index), tuple(ops.f_index), ops.n_params)

    def _check(self, y: Sequence[float]) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n_params,):
            raise ValueError(f"Expected a parameter vector of length {self.n_params}, got shape {y.shape}")
        return y

    def theta_a(self, y: Sequence[float]) -> np.ndarray:
        return AffineOperatorSet._theta(self.a_index, self._check(y))

    def theta_f(self, y: Sequence[float]) -> np.ndarray:
        return AffineOperatorSet._theta(self.f_index, self._check(y))

    def to_json(self) -> Dict[str, Any]:
        return {"a_index": list(self.a_index), "f_index": list(self.f_index), "n_params": self.n_params}

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "AffineMaps":
        return cls(tuple(data["a_index"]), tuple(data["f_index"]), int(data["n_params"]))


@dataclass
class EstimatorData:
    """Riesz-representer Gram blocks for the residual dual norm.

    With r_f^q = X^{-1} f_q and r_a^{q,n} = -X^{-1} A_q z_n:
        G_ff[q, q']       = <r_f^q, r_f^q'>_X
        G_fa[q', q, n]    = <r_f^q', r_a^{q,n}>_X
        G_aa[q, n, q', m] = <r_a^{q,n}, r_a^{q',m}>_X
    """

    G_ff: np.ndarray
    G_fa: np.ndarray
    G_aa: np.ndarray
    alpha_bar: float
    gamma_bar: float
    maps: AffineMaps
    # representers are only needed to grow the blocks; archives drop them
    R_f: Optional[np.ndarray] = field(default=None, repr=False)
    R_a: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.G_fa.shape[2]

    def truncate(self, n: int) -> "EstimatorData":
        return replace(
            self,
            G_fa=self.G_fa[:, :, :n],
            G_aa=self.G_aa[:, :n, :, :n],
            R_a=None if self.R_a is None else self.R_a[:, :, :n],
        )


@dataclass
class ReducedBasis:
    Z: np.ndarray  # (n_dof, N), X-orthonormal
    selected_params: np.ndarray  # (n_selected, K); empty for POD
    a_reduced: np.ndarray  # (Q_a, N, N)
    f_reduced: np.ndarray  # (Q_f, N)
    maps: AffineMaps
    estimator: Optional[EstimatorData] = None
    history: List[Dict[str, Any]] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.Z.shape[1]

    @property
    def n_dof(self) -> int:
        return self.Z.shape[0]

    def truncate(self, n: int) -> "ReducedBasis":
        """Column-prefix basis V_n (n <= N)."""
        if not 0 <= n <= self.N:
            raise ValueError(f"Cannot truncate a basis of dimension {self.N} to {n}")
        return replace(
            self,
            Z=self.Z[:, :n],
            selected_params=self.selected_params[:n],
            a_reduced=self.a_reduced[:, :n, :n],
            f_reduced=self.f_reduced[:, :n],
            estimator=None if self.estimator is None else self.estimator.truncate(n),
            history=list(self.history[:n]),
            metadata=dict(self.metadata),
        )

    def reduced_matrix(self, y: Sequence[float]) -> np.ndarray:
        return np.tensordot(self.maps.theta_a(y), self.a_reduced, axes=1)

    def reduced_rhs(self, y: Sequence[float]) -> np.ndarray:
        return np.tensordot(self.maps.theta_f(y), self.f_reduced, axes=1)


# ---------------- BASIS ALGEBRA ----------------
def check_orthonormal(space: TruthSpace, Z: np.ndarray, tol: float = ORTHONORMAL_TOL) -> None:
    if Z.ndim != 2 or Z.shape[0] != space.n_dof:
        raise ValueError(f"Basis must have shape ({space.n_dof}, N), got {Z.shape}")
    if Z.shape[1] == 0:
        return
    gram = Z.T @ (space.X @ Z)
    defect = float(np.max(np.abs(gram - np.eye(Z.shape[1]))))
    if defect > tol:
        raise ValueError(f"Basis is not X-orthonormal (max |Z^T X Z - I| = {defect:.3e})")


def orthonormalize(space: TruthSpace, Z: np.ndarray, v: np.ndarray, tol: float = DEPENDENCE_TOL) -> Optional[np.ndarray]:
    """X-orthonormalize ``v`` against the columns of Z.

    Modified Gram-Schmidt with one reorthogonalization pass. Returns None if
    the remainder norm falls below ``tol`` times the original norm.
    """
    X = space.X
    w = np.array(v, dtype=float, copy=True)
    pre = float(np.sqrt(max(w @ (X @ w), 0.0)))
    if pre == 0.0:
        return None
    for _ in range(2):
        for k in range(Z.shape[1]):
            z = Z[:, k]
            w -= (z @ (X @ w)) * z
    post = float(np.sqrt(max(w @ (X @ w), 0.0)))
    if post < tol * pre:
        return None
    return w / post


def orthonormal_basis(space: TruthSpace, vectors: np.ndarray, tol: float = DEPENDENCE_TOL) -> np.ndarray:
    """Orthonormalize the columns of ``vectors`` in order, dropping dependent ones."""
    Z = np.zeros((space.n_dof, 0))
    for k in range(vectors.shape[1]):
        z = orthonormalize(space, Z, vectors[:, k], tol)
        if z is None:
            logger.warning("Dropped linearly dependent basis candidate %d", k)
            continue
        Z = np.column_stack([Z, z])
    return Z


def reduced_operators(ops: AffineOperatorSet, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Z^T A_q Z for every q and Z^T f_q for every q."""
    a_reduced = np.array([Z.T @ (A_q @ Z) for A_q in ops.a_terms]).reshape(len(ops.a_terms), Z.shape[1], Z.shape[1])
    f_reduced = np.array([Z.T @ f_q for f_q in ops.f_terms]).reshape(len(ops.f_terms), Z.shape[1])
    return a_reduced, f_reduced


def solve_reduced_system(A_N: np.ndarray, f_N: np.ndarray, y: Sequence[float]) -> np.ndarray:
    """Dense solve of the N x N reduced Galerkin system.

    Raises:
        ReducedSystemSingularError: if the reciprocal condition number is
            below settings.SINGULAR_RCOND or the factorization fails.
    """
    n = A_N.shape[0]
    if n == 0:
        return np.zeros(0)
    if not np.all(np.isfinite(A_N)):
        raise ReducedSystemSingularError(n, y, np.inf)
    condition = float(np.linalg.cond(A_N))
    if not np.isfinite(condition) or 1.0 / condition < settings.SINGULAR_RCOND:
        logger.error("Singular reduced system at N=%d, y=%s (cond=%.3e)", n, list(np.asarray(y)), condition)
        raise ReducedSystemSingularError(n, y, condition)
    try:
        return np.linalg.solve(A_N, f_N)
    except np.linalg.LinAlgError as e:
        raise ReducedSystemSingularError(n, y, condition) from e


def build_reduced_basis(
    ops: AffineOperatorSet,
    Z: np.ndarray,
    selected_params: Optional[np.ndarray] = None,
    estimator: Optional[EstimatorData] = None,
    history: Optional[List[Dict[str, Any]]] = None,
    metadata: Optional[Dict[str, Any]] = None,
) -> ReducedBasis:
    a_reduced, f_reduced = reduced_operators(ops, Z)
    if selected_params is None:
        selected_params = np.zeros((0, ops.n_params))
    return ReducedBasis(
        Z=Z,
        selected_params=np.asarray(selected_params, dtype=float).reshape(-1, ops.n_params),
        a_reduced=a_reduced,
        f_reduced=f_reduced,
        maps=AffineMaps.from_ops(ops),
        estimator=estimator,
        history=list(history or []),
        metadata=dict(metadata or {}),
    )


# ---------------- ARCHIVE ----------------
def save_archive(rb: ReducedBasis, path: str) -> None:
    arrays = {
        "Z": rb.Z,
        "selected_params": rb.selected_params,
        "a_reduced": rb.a_reduced,
        "f_reduced": rb.f_reduced,
    }
    meta: Dict[str, Any] = {"maps": rb.maps.to_json(), "history": rb.history, "metadata": rb.metadata}
    if rb.estimator is not None:
        arrays.update(G_ff=rb.estimator.G_ff, G_fa=rb.estimator.G_fa, G_aa=rb.estimator.G_aa)
        meta["estimator"] = {"alpha_bar": rb.estimator.alpha_bar, "gamma_bar": rb.estimator.gamma_bar}
    buffer = io.BytesIO()
    np.savez(buffer, metadata=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC + bytes([ARCHIVE_VERSION]) + buffer.getvalue())
    logger.info("Saved reduced basis (N=%d) to %s", rb.N, path)


def load_archive(path: str) -> ReducedBasis:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(ARCHIVE_MAGIC)] != ARCHIVE_MAGIC:
        raise ValueError(f"{path} is not a reduced basis archive")
    version = raw[len(ARCHIVE_MAGIC)]
    if version != ARCHIVE_VERSION:
        raise ValueError(f"{path}: unsupported archive version {version} (expected {ARCHIVE_VERSION})")
    with np.load(io.BytesIO(raw[len(ARCHIVE_MAGIC) + 1 :]), allow_pickle=False) as data:
        meta = json.loads(str(data["metadata"]))
        maps = AffineMaps.from_json(meta["maps"])
        estimator = None
        if "estimator" in meta:
            estimator = EstimatorData(
                G_ff=data["G_ff"],
                G_fa=data["G_fa"],
                G_aa=data["G_aa"],
                alpha_bar=float(meta["estimator"]["alpha_bar"]),
                gamma_bar=float(meta["estimator"]["gamma_bar"]),
                maps=maps,
            )
        return ReducedBasis(
            Z=data["Z"],
            selected_params=data["selected_params"],
            a_reduced=data["a_reduced"],
            f_reduced=data["f_reduced"],
            maps=maps,
            estimator=estimator,
            history=meta["history"],
            metadata=meta["metadata"],
        )


__all__ = [
    "AffineMaps",
    "EstimatorData",
    "ReducedBasis",
    "check_orthonormal",
    "orthonormalize",
    "orthonormal_basis",
    "reduced_operators",
    "solve_reduced_system",
    "build_reduced_basis",
    "save_archive",
    "load_archive",
]
