"""
Weighted greedy reduced basis construction.

The error estimator is the residual dual norm divided by the min-theta
coercivity lower bound,

    eta_N(y) = ||r_N(y)||_{V'} / (min_q theta_q(y) * alpha_bar),

and the weighted greedy picks argmax_{y in Xi_t} w(y) eta_N(y).
"""
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from .errors import EstimatorError, ReducedSystemSingularError
from .fem_core import AffineOperatorSet, TruthSpace, solve_truth
from .param_space import ParameterDistribution
from .quadrature import TrainingSet
from .reduced_basis import (
    AffineMaps,
    EstimatorData,
    ReducedBasis,
    build_reduced_basis,
    check_orthonormal,
    orthonormalize,
    reduced_operators,
    solve_reduced_system,
)

logger = logging.getLogger(__name__)

DENSE_EIG_LIMIT = 4000
FIRST_PICKS = ("first_node", "density_mode")
NEGATIVE_DUAL_TOL = 1e-12
# relative round-off of the offline/online sum ff + 2 fa + aa
DUAL_ROUNDOFF = 64.0 * np.finfo(float).eps

WeightFunction = Callable[[Sequence[float]], float]


# ---------------- STABILITY CONSTANTS ----------------
def stability_constants(ops: AffineOperatorSet, space: TruthSpace) -> Tuple[float, float]:
    """Extreme generalized eigenvalues of (sum_q A_q) u = lambda X u on the constrained space.

    Returns:
        (alpha_bar, gamma_bar): coercivity and continuity constants at the
        reference parameter where every theta_q equals one.
    """
    free = space.free_dofs
    A = ops.sum_a()[free][:, free]
    X = space.X[free][:, free]
    if free.size <= DENSE_EIG_LIMIT:
        eigs = scipy.linalg.eigh(A.toarray(), X.toarray(), eigvals_only=True)
        alpha_bar, gamma_bar = float(eigs[0]), float(eigs[-1])
    else:
        alpha_bar = float(spla.eigsh(A.tocsc(), k=1, M=X.tocsc(), sigma=0.0, which="LM", return_eigenvectors=False)[0])
        gamma_bar = float(spla.eigsh(A.tocsc(), k=1, M=X.tocsc(), which="LA", return_eigenvectors=False)[0])
    if not alpha_bar > 0.0:
        raise EstimatorError(f"Non-positive coercivity constant {alpha_bar:.3e}: check the operator assembly")
    logger.info("Stability constants: alpha_bar=%.6e, gamma_bar=%.6e", alpha_bar, gamma_bar)
    return alpha_bar, gamma_bar


def coercivity_lower_bound(maps: AffineMaps, alpha_bar: float, y: Sequence[float]) -> float:
    """alpha_LB(y) = min_q theta_q(y) * alpha_bar."""
    theta = maps.theta_a(y)
    if np.any(theta <= 0.0):
        raise ValueError(f"Material coefficients must be strictly positive, got {theta.tolist()}")
    return float(theta.min() * alpha_bar)


def continuity_upper_bound(maps: AffineMaps, gamma_bar: float, y: Sequence[float]) -> float:
    return float(maps.theta_a(y).max() * gamma_bar)


# ---------------- ESTIMATOR DATA ----------------
def _representers_a(ops: AffineOperatorSet, space: TruthSpace, z: np.ndarray) -> np.ndarray:
    return np.column_stack([-space.solve_x(A_q @ z) for A_q in ops.a_terms])


def prepare_estimator(
    ops: AffineOperatorSet,
    space: TruthSpace,
    Z: np.ndarray,
    constants: Optional[Tuple[float, float]] = None,
) -> EstimatorData:
    """Riesz representers and their pairwise X-inner products for the basis Z.

    Args:
        ops: Affine operators.
        space: Truth space providing X.
        Z: X-orthonormal basis (n_dof, N); N = 0 is allowed.
        constants: Precomputed (alpha_bar, gamma_bar); computed when omitted.
    """
    check_orthonormal(space, Z)
    alpha_bar, gamma_bar = constants if constants is not None else stability_constants(ops, space)
    R_f = np.column_stack([space.solve_x(f_q) for f_q in ops.f_terms])
    q_a, q_f = len(ops.a_terms), len(ops.f_terms)
    data = EstimatorData(
        G_ff=R_f.T @ (space.X @ R_f),
        G_fa=np.zeros((q_f, q_a, 0)),
        G_aa=np.zeros((q_a, 0, q_a, 0)),
        alpha_bar=alpha_bar,
        gamma_bar=gamma_bar,
        maps=AffineMaps.from_ops(ops),
        R_f=R_f,
        R_a=np.zeros((space.n_dof, q_a, 0)),
    )
    for n in range(Z.shape[1]):
        data = extend_estimator(data, ops, space, Z[:, n])
    return data


def extend_estimator(data: EstimatorData, ops: AffineOperatorSet, space: TruthSpace, z: np.ndarray) -> EstimatorData:
    """Grow the Gram blocks by one basis function z."""
    if data.R_f is None or data.R_a is None:
        raise EstimatorError("Estimator data loaded from an archive cannot be extended")
    X = space.X
    q_a = len(ops.a_terms)
    r_new = _representers_a(ops, space, z)  # (n_dof, Q_a)
    n = data.N
    R_a = np.concatenate([data.R_a, r_new[:, :, None]], axis=2)

    G_fa = np.concatenate([data.G_fa, (data.R_f.T @ (X @ r_new))[:, :, None]], axis=2)
    G_aa = np.zeros((q_a, n + 1, q_a, n + 1))
    G_aa[:, :n, :, :n] = data.G_aa
    Xr_new = X @ r_new
    for m in range(n + 1):
        block = R_a[:, :, m].T @ Xr_new  # (Q_a, Q_a): <r_a^{q,m}, r_a^{q',new}>
        G_aa[:, m, :, n] = block
        G_aa[:, n, :, m] = block.T
    return EstimatorData(
        G_ff=data.G_ff,
        G_fa=G_fa,
        G_aa=G_aa,
        alpha_bar=data.alpha_bar,
        gamma_bar=data.gamma_bar,
        maps=data.maps,
        R_f=data.R_f,
        R_a=R_a,
    )


def _dual_norm_squared(data: EstimatorData, y: Sequence[float], uN: np.ndarray) -> Tuple[float, float]:
    """(ff + 2 fa + aa, |ff| + 2|fa| + |aa|) for the residual at (y, uN)."""
    uN = np.asarray(uN, dtype=float)
    if uN.shape != (data.N,):
        raise ValueError(f"Reduced coefficients must have length {data.N}, got shape {uN.shape}")
    theta_f = data.maps.theta_f(y)
    v = np.outer(data.maps.theta_a(y), uN)  # (Q_a, N)
    ff = float(theta_f @ data.G_ff @ theta_f)
    fa = float(np.einsum("p,pqn,qn->", theta_f, data.G_fa, v))
    aa = float(np.einsum("qn,qnrm,rm->", v, data.G_aa, v))
    sq = ff + 2.0 * fa + aa
    if sq < -NEGATIVE_DUAL_TOL * max(ff, aa, 1.0):
        logger.warning("Residual dual norm squared %.3e is negative beyond round-off at y=%s", sq, list(y))
    return sq, abs(ff) + 2.0 * abs(fa) + abs(aa)


def residual_dual_norm(data: EstimatorData, y: Sequence[float], uN: np.ndarray) -> float:
    """||f(y) - A(y) Z uN||_{V'} from the Gram blocks; cost independent of n_dof."""
    sq, _ = _dual_norm_squared(data, y, uN)
    return float(np.sqrt(max(sq, 0.0)))


def estimate(data: EstimatorData, y: Sequence[float], uN: np.ndarray) -> float:
    """eta_N(y) = residual dual norm / alpha_LB(y).

    The dual norm is padded by sqrt(DUAL_ROUNDOFF * scale), the round-off of the
    cancelling sum, so eta_N stays an upper bound when u_delta(y) is (almost) in V_N.
    """
    sq, scale = _dual_norm_squared(data, y, uN)
    dual = np.sqrt(max(sq, 0.0)) + np.sqrt(DUAL_ROUNDOFF * scale)
    return float(dual / coercivity_lower_bound(data.maps, data.alpha_bar, y))


def weighted_estimate(data: EstimatorData, y: Sequence[float], uN: np.ndarray, w: WeightFunction) -> float:
    return float(w(y)) * estimate(data, y, uN)


# ---------------- GREEDY ----------------
def _sweep(
    data: EstimatorData,
    a_reduced: np.ndarray,
    f_reduced: np.ndarray,
    nodes: np.ndarray,
    weights: np.ndarray,
    active: np.ndarray,
) -> np.ndarray:
    """Weighted estimator over the active training nodes (-inf elsewhere)."""
    values = np.full(nodes.shape[0], -np.inf)
    maps = data.maps
    for i in np.flatnonzero(active):
        y = nodes[i]
        A_N = np.tensordot(maps.theta_a(y), a_reduced, axes=1)
        f_N = np.tensordot(maps.theta_f(y), f_reduced, axes=1)
        uN = solve_reduced_system(A_N, f_N, y)
        values[i] = weights[i] * estimate(data, y, uN)
    return values


def greedy_build(
    ops: AffineOperatorSet,
    space: TruthSpace,
    training: TrainingSet,
    w: WeightFunction,
    eps_tol: float,
    n_max: int,
    first_pick: str = "first_node",
    dist: Optional[ParameterDistribution] = None,
    weight_tag: str = "custom",
) -> ReducedBasis:
    """Weighted greedy algorithm over the training nodes (training weights are ignored).

    Args:
        ops: Affine operators of the truth problem.
        space: Truth space.
        training: Xi_t; only its nodes are used.
        w: Weight function w(y); w = 1 gives the standard greedy.
        eps_tol: Stop once max_y w(y) eta_N(y) <= eps_tol.
        n_max: Maximum basis dimension.
        first_pick: "first_node" (first training node) or "density_mode"
            (node of largest density, needs ``dist``).
        dist: Parameter distribution, required for "density_mode".
        weight_tag: Label recorded in the basis metadata.

    Returns:
        ReducedBasis with estimator data, per-iteration history and stop status.

    Raises:
        ReducedSystemSingularError: if a reduced system becomes singular
            while sweeping the estimator; the error carries N and y.
    """
    if len(training) == 0:
        raise ValueError("Training set must not be empty")
    if not eps_tol > 0:
        raise ValueError(f"eps_tol must be positive, got {eps_tol}")
    if n_max < 1:
        raise ValueError(f"N_max must be >= 1, got {n_max}")
    if first_pick not in FIRST_PICKS:
        raise ValueError(f"Unknown first pick '{first_pick}'. Must be one of {FIRST_PICKS}")

    nodes = training.nodes
    weights = np.array([float(w(y)) for y in nodes])
    if first_pick == "density_mode":
        if dist is None:
            raise ValueError("first_pick='density_mode' needs the parameter distribution")
        index = int(np.argmax(dist.density(nodes)))
    else:
        index = 0

    constants = stability_constants(ops, space)
    data = prepare_estimator(ops, space, np.zeros((space.n_dof, 0)), constants)
    Z = np.zeros((space.n_dof, 0))
    selected: List[np.ndarray] = []
    history: List[Dict] = []
    active = np.ones(len(training), dtype=bool)
    status = "n_max"

    while True:
        y = nodes[index]
        active[index] = False
        snapshot = solve_truth(ops, space, y)
        z = orthonormalize(space, Z, snapshot.coeffs)
        if z is None:
            logger.warning("Snapshot at training node %d is linearly dependent; removed from Xi_t", index)
        else:
            Z = np.column_stack([Z, z])
            selected.append(y)
            data = extend_estimator(data, ops, space, z)

        if not active.any():
            if z is not None:
                history.append({"iteration": Z.shape[1], "y": [float(v) for v in y], "max_weighted_estimator": float("nan")})
            status = "training set exhausted"
            logger.info("Greedy stopped at N=%d: training set exhausted", Z.shape[1])
            break

        a_reduced, f_reduced = reduced_operators(ops, Z)
        try:
            values = _sweep(data, a_reduced, f_reduced, nodes, weights, active)
        except ReducedSystemSingularError as e:
            n_ok = max(Z.shape[1] - 1, 0)
            e.partial_basis = build_reduced_basis(
                ops,
                Z[:, :n_ok],
                np.array(selected[:n_ok]).reshape(-1, ops.n_params),
                data.truncate(n_ok),
                history[:n_ok],
                {"builder": "greedy", "weight": weight_tag, "status": "breakdown"},
            )
            raise
        index = int(np.argmax(values))
        max_value = float(values[index])
        if z is not None:
            history.append({"iteration": Z.shape[1], "y": [float(v) for v in y], "max_weighted_estimator": max_value})
            logger.info("Greedy N=%d: max weighted estimator %.6e", Z.shape[1], max_value)
        if max_value <= eps_tol:
            status = "tolerance"
            break
        if Z.shape[1] >= n_max:
            status = "n_max"
            break

    metadata = {
        "builder": "greedy",
        "weight": weight_tag,
        "eps_tol": eps_tol,
        "n_max": n_max,
        "first_pick": first_pick,
        "status": status,
        "training_provenance": training.provenance,
        "training_size": len(training),
    }
    return build_reduced_basis(ops, Z, np.array(selected).reshape(-1, ops.n_params), data, history, metadata)


def history_rows(rb: ReducedBasis) -> List[List[str]]:
    """Rows (iteration, chosen y..., max weighted estimator) for the greedy CSV sidecar."""
    rows = []
    for entry in rb.history:
        rows.append([str(entry["iteration"])] + [repr(v) for v in entry["y"]] + [repr(entry["max_weighted_estimator"])])
    return rows


__all__ = [
    "stability_constants",
    "coercivity_lower_bound",
    "continuity_upper_bound",
    "prepare_estimator",
    "extend_estimator",
    "residual_dual_norm",
    "estimate",
    "weighted_estimate",
    "greedy_build",
    "history_rows",
    "FIRST_PICKS",
]
