"""
P1 finite-element kernel for the parametrized truth problem.

Builds a structured triangulation of D = [0, 1]^2, the constrained displacement
space V_delta (clamped on the bottom and top sides), the affine pieces of the
linear-elasticity forms

    a(u, v; y) = sum_q y^q int_{D_q} lam (div u)(div v) + 2 mu e(u):e(v)
    f(v; y)    = y^5 int_{x1=1, x2<1/2} v_2 + y^6 int_{x1=1, x2>1/2} v_2

and a sparse direct truth solver. A scalar thermal-block problem on the same
mesh is provided for small-scale checks.
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import settings
from .errors import TruthSolveError

logger = logging.getLogger(__name__)

YOUNG_MODULUS = 1.0
POISSON_RATIO = 0.3
TRUTH_RESIDUAL_TOL = 1e-10


# ---------------- TYPES ----------------
@dataclass(frozen=True)
class Mesh:
    n_sub: int
    vertices: np.ndarray  # (n_vertices, 2)
    triangles: np.ndarray  # (n_triangles, 3), counter-clockwise
    subdomain_id: np.ndarray  # (n_triangles,), values 1..4
    boundary_edges: Dict[str, np.ndarray]  # tag -> (n_edges, 2) vertex pairs

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]


@dataclass(frozen=True)
class TruthSpace:
    """Discrete space V_delta together with the inner-product matrix of ||.||_V.

    ``X`` is stored in eliminated form: Dirichlet rows and columns are zeroed
    and their diagonal set to one, so ``X`` is SPD on the whole coefficient
    space and coincides with the Gram matrix on constrained vectors.
    """

    mesh: Mesh
    n_components: int
    n_dof: int
    dirichlet_set: np.ndarray
    free_dofs: np.ndarray
    X: sp.csr_matrix
    norm: str = "h1"
    _x_factor: list = field(default_factory=list, repr=False, compare=False)

    def solve_x(self, rhs: np.ndarray) -> np.ndarray:
        """Apply X^{-1}; used for Riesz representers. Dirichlet entries of rhs are ignored."""
        if not self._x_factor:
            self._x_factor.append(spla.splu(self.X.tocsc()))
        rhs = np.array(rhs, dtype=float, copy=True)
        rhs[self.dirichlet_set] = 0.0
        return self._x_factor[0].solve(rhs)

    def extend(self, u_free: np.ndarray) -> np.ndarray:
        u = np.zeros(self.n_dof)
        u[self.free_dofs] = u_free
        return u


@dataclass(frozen=True)
class AffineOperatorSet:
    """Affine decomposition A(y) = sum_q theta_q(y) A_q, f(y) = sum_q theta_q(y) f_q.

    ``a_index``/``f_index`` give, per term, the parameter component that scales
    it, or None for a parameter-independent term (theta = 1).
    """

    a_terms: Tuple[sp.csr_matrix, ...]
    f_terms: Tuple[np.ndarray, ...]
    a_index: Tuple[Optional[int], ...]
    f_index: Tuple[Optional[int], ...]
    n_params: int
    lam: float = 0.0
    mu: float = 0.0

    def __post_init__(self) -> None:
        if len(self.a_terms) != len(self.a_index) or len(self.f_terms) != len(self.f_index):
            raise ValueError("Each affine term needs exactly one coefficient index")
        for idx in (*self.a_index, *self.f_index):
            if idx is not None and not 0 <= idx < self.n_params:
                raise ValueError(f"Coefficient index {idx} out of range for {self.n_params} parameters")

    @property
    def n_dof(self) -> int:
        return self.a_terms[0].shape[0]

    @staticmethod
    def _theta(index: Sequence[Optional[int]], y: np.ndarray) -> np.ndarray:
        return np.array([1.0 if i is None else float(y[i]) for i in index])

    def theta_a(self, y: Sequence[float]) -> np.ndarray:
        return self._theta(self.a_index, self._check_y(y))

    def theta_f(self, y: Sequence[float]) -> np.ndarray:
        return self._theta(self.f_index, self._check_y(y))

    def _check_y(self, y: Sequence[float]) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n_params,):
            raise ValueError(f"Expected a parameter vector of length {self.n_params}, got shape {y.shape}")
        return y

    def assemble_matrix(self, y: Sequence[float]) -> sp.csr_matrix:
        theta = self.theta_a(y)
        A = theta[0] * self.a_terms[0]
        for t, A_q in zip(theta[1:], self.a_terms[1:]):
            A = A + t * A_q
        return A.tocsr()

    def assemble_rhs(self, y: Sequence[float]) -> np.ndarray:
        theta = self.theta_f(y)
        return np.asarray(sum(t * f_q for t, f_q in zip(theta, self.f_terms)), dtype=float)

    def sum_a(self) -> sp.csr_matrix:
        """sum_q A_q, i.e. A at the reference point where every theta_q equals 1."""
        A = self.a_terms[0]
        for A_q in self.a_terms[1:]:
            A = A + A_q
        return A.tocsr()


@dataclass(frozen=True)
class Snapshot:
    coeffs: np.ndarray
    y: np.ndarray


# ---------------- MESH ----------------
def build_mesh(n_sub: int) -> Mesh:
    """Criss-cross triangulation of [0,1]^2 with alternating square diagonals."""
    if not isinstance(n_sub, (int, np.integer)) or n_sub < 2 or n_sub % 2:
        raise ValueError(f"n_sub must be an even integer >= 2, got {n_sub!r}")
    n = int(n_sub)
    coords = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(coords, coords)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    triangles = []
    subdomains = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                triangles += [(a, b, c), (a, c, d)]
            else:
                triangles += [(a, b, d), (b, c, d)]
            # quadrant numbering: 1 lower-left, 2 lower-right, 3 upper-left, 4 upper-right
            sid = 1 + int(2 * i >= n) + 2 * int(2 * j >= n)
            subdomains += [sid, sid]

    half = n // 2
    boundary_edges = {
        "bottom": np.array([(vid(i, 0), vid(i + 1, 0)) for i in range(n)]),
        "top": np.array([(vid(i, n), vid(i + 1, n)) for i in range(n)]),
        "left": np.array([(vid(0, j), vid(0, j + 1)) for j in range(n)]),
        "right_lower": np.array([(vid(n, j), vid(n, j + 1)) for j in range(half)]),
        "right_upper": np.array([(vid(n, j), vid(n, j + 1)) for j in range(half, n)]),
    }
    return Mesh(
        n_sub=n,
        vertices=vertices,
        triangles=np.array(triangles, dtype=np.int64),
        subdomain_id=np.array(subdomains, dtype=np.int64),
        boundary_edges=boundary_edges,
    )


def _p1_geometry(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """Areas (n_t,) and constant barycentric gradients (n_t, 3, 2)."""
    p = mesh.vertices[mesh.triangles]  # (n_t, 3, 2)
    ones = np.ones(p.shape[:2] + (1,))
    T = np.concatenate([ones, p], axis=2)  # rows [1, x, y]
    area = 0.5 * np.abs(np.linalg.det(T))
    grads = np.linalg.inv(T)[:, 1:, :].transpose(0, 2, 1)
    return area, grads


def _assemble(mesh: Mesh, local: np.ndarray, dofs: np.ndarray, n_dof: int) -> sp.csr_matrix:
    rows = np.repeat(dofs, dofs.shape[1], axis=1).ravel()
    cols = np.tile(dofs, (1, dofs.shape[1])).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n_dof, n_dof)).tocsr()


def _element_dofs(mesh: Mesh, n_components: int) -> np.ndarray:
    tri = mesh.triangles
    return (n_components * tri[:, :, None] + np.arange(n_components)).reshape(tri.shape[0], -1)


def _eliminate(A: sp.spmatrix, dirichlet_set: np.ndarray) -> sp.csr_matrix:
    keep = np.ones(A.shape[0])
    keep[dirichlet_set] = 0.0
    D = sp.diags(keep)
    return (D @ A @ D + sp.diags(1.0 - keep)).tocsr()


# ---------------- SCALAR FORMS ----------------
def mass_matrix(space: "TruthSpace") -> sp.csr_matrix:
    """Unconstrained P1 mass matrix, one block per displacement component."""
    return _vectorize(_scalar_mass(space.mesh), space.n_components)


def stiffness_matrix(space: "TruthSpace", mask: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Unconstrained P1 gradient stiffness, optionally restricted to triangles in ``mask``."""
    return _vectorize(_scalar_stiffness(space.mesh, mask), space.n_components)


def _scalar_mass(mesh: Mesh) -> sp.csr_matrix:
    area, _ = _p1_geometry(mesh)
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = area[:, None, None] * ref
    return _assemble(mesh, local, mesh.triangles, mesh.n_vertices)


def _scalar_stiffness(mesh: Mesh, mask: Optional[np.ndarray] = None) -> sp.csr_matrix:
    area, grads = _p1_geometry(mesh)
    local = area[:, None, None] * np.einsum("tik,tjk->tij", grads, grads)
    if mask is not None:
        local = local * mask[:, None, None]
    return _assemble(mesh, local, mesh.triangles, mesh.n_vertices)


def _vectorize(S: sp.spmatrix, n_components: int) -> sp.csr_matrix:
    if n_components == 1:
        return S.tocsr()
    return sp.kron(S, sp.identity(n_components)).tocsr()


# ---------------- SPACE ----------------
def build_truth_space(n_sub: int, n_components: int = 2) -> TruthSpace:
    """Build V_delta on an n_sub x n_sub criss-cross mesh.

    Args:
        n_sub: Elements per side; even and >= 2 so subdomain and traction
            boundaries follow mesh lines.
        n_components: 2 for displacements, 1 for the scalar thermal block.

    Returns:
        TruthSpace with X the H^1(D) Gram matrix (mass + gradient stiffness).
    """
    if n_components not in (1, 2):
        raise ValueError(f"n_components must be 1 or 2, got {n_components}")
    mesh = build_mesh(n_sub)
    n_dof = n_components * mesh.n_vertices
    clamped = np.unique(np.concatenate([mesh.boundary_edges["bottom"], mesh.boundary_edges["top"]]))
    dirichlet_set = (n_components * clamped[:, None] + np.arange(n_components)).ravel()
    dirichlet_set.sort()
    free_dofs = np.setdiff1d(np.arange(n_dof), dirichlet_set)

    gram = _scalar_mass(mesh) + _scalar_stiffness(mesh)
    X = _eliminate(_vectorize(gram, n_components), dirichlet_set)
    logger.info("Truth space: n_sub=%d, n_dof=%d, free=%d", n_sub, n_dof, free_dofs.size)
    return TruthSpace(mesh, n_components, n_dof, dirichlet_set, free_dofs, X)


def with_energy_norm(space: TruthSpace, ops: AffineOperatorSet) -> TruthSpace:
    """Copy of ``space`` whose inner product is the reference energy sum_q A_q."""
    X = _eliminate(ops.sum_a(), space.dirichlet_set)
    return TruthSpace(space.mesh, space.n_components, space.n_dof, space.dirichlet_set, space.free_dofs, X, norm="energy")


# ---------------- ELASTICITY ----------------
def lame_constants(young: float = YOUNG_MODULUS, poisson: float = POISSON_RATIO) -> Tuple[float, float]:
    lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
    mu = young / (2.0 * (1.0 + poisson))
    return lam, mu


def _strain_matrices(grads: np.ndarray) -> np.ndarray:
    """Voigt B matrices (n_t, 3, 6) for [e11, e22, 2 e12] with dof order (u1, u2) per vertex."""
    n_t = grads.shape[0]
    B = np.zeros((n_t, 3, 6))
    bx, by = grads[:, :, 0], grads[:, :, 1]
    B[:, 0, 0::2] = bx
    B[:, 1, 1::2] = by
    B[:, 2, 0::2] = by
    B[:, 2, 1::2] = bx
    return B


def _elasticity_local(space: TruthSpace, lam: float, mu: float) -> np.ndarray:
    area, grads = _p1_geometry(space.mesh)
    B = _strain_matrices(grads)
    D = np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])
    return area[:, None, None] * np.einsum("tki,kl,tlj->tij", B, D, B)


def _traction_load(space: TruthSpace, tag: str, component: int) -> np.ndarray:
    """int_segment v_component ds for each P1 basis function."""
    mesh = space.mesh
    edges = mesh.boundary_edges[tag]
    length = np.linalg.norm(mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]], axis=1)
    f = np.zeros(space.n_dof)
    np.add.at(f, space.n_components * edges[:, 0] + component, 0.5 * length)
    np.add.at(f, space.n_components * edges[:, 1] + component, 0.5 * length)
    return f


def assemble_affine(space: TruthSpace, lam: float, mu: float) -> AffineOperatorSet:
    """Affine pieces of the six-parameter elasticity benchmark.

    A_q (q=1..4) is the Lame stiffness over quadrant D_q, f_1/f_2 load the
    second displacement component on the lower/upper half of the right side.
    """
    if space.n_components != 2:
        raise ValueError("The elasticity benchmark needs a vector (2-component) space")
    local = _elasticity_local(space, lam, mu)
    dofs = _element_dofs(space.mesh, 2)
    a_terms = tuple(
        _assemble(space.mesh, local * (space.mesh.subdomain_id == q)[:, None, None], dofs, space.n_dof)
        for q in (1, 2, 3, 4)
    )
    f_terms = (_traction_load(space, "right_lower", 1), _traction_load(space, "right_upper", 1))
    logger.info("Assembled affine elasticity operators: Q_a=%d, Q_f=%d, lam=%.6g, mu=%.6g", 4, 2, lam, mu)
    return AffineOperatorSet(a_terms, f_terms, (0, 1, 2, 3), (4, 5), n_params=6, lam=lam, mu=mu)


def assemble_monolithic(space: TruthSpace, lam: float, mu: float, coefficients: Sequence[float]) -> sp.csr_matrix:
    """Single-pass global elasticity assembly with one coefficient per quadrant."""
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape != (4,):
        raise ValueError(f"Expected 4 subdomain coefficients, got {coefficients.shape}")
    local = _elasticity_local(space, lam, mu) * coefficients[space.mesh.subdomain_id - 1][:, None, None]
    return _assemble(space.mesh, local, _element_dofs(space.mesh, 2), space.n_dof)


def assemble_thermal_block(space: TruthSpace) -> AffineOperatorSet:
    """Two-parameter scalar miniature: -div(k grad u) = 1 with a right-side flux.

    k = 1 on the left half, y^1 on the right half; the flux through x1 = 1 is y^2.
    """
    if space.n_components != 1:
        raise ValueError("The thermal block needs a scalar (1-component) space")
    mesh = space.mesh
    centroid_x = mesh.vertices[mesh.triangles][:, :, 0].mean(axis=1)
    right = (centroid_x > 0.5).astype(float)
    a_terms = (_scalar_stiffness(mesh, 1.0 - right), _scalar_stiffness(mesh, right))
    source = _scalar_mass(mesh) @ np.ones(space.n_dof)
    flux = _traction_load(space, "right_lower", 0) + _traction_load(space, "right_upper", 0)
    return AffineOperatorSet(a_terms, (source, flux), (None, 0), (None, 1), n_params=2)


# ---------------- SOLVER ----------------
def solve_truth(ops: AffineOperatorSet, space: TruthSpace, y: Sequence[float]) -> Snapshot:
    """Solve A(y) u = f(y) on the constrained space by sparse LU.

    Raises:
        ValueError: if a stiffness coefficient theta_q(y) is not strictly positive.
        TruthSolveError: on factorization failure or an inaccurate solution.
    """
    y = np.asarray(y, dtype=float)
    theta = ops.theta_a(y)
    if np.any(theta <= 0.0):
        raise ValueError(f"Material coefficients must be strictly positive, got {theta.tolist()}")

    free = space.free_dofs
    rhs = ops.assemble_rhs(y)[free]
    u = np.zeros(space.n_dof)
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return Snapshot(u, y)

    K = ops.assemble_matrix(y)[free][:, free].tocsc()
    try:
        u_free = spla.splu(K).solve(rhs)
    except RuntimeError as e:
        logger.error("Truth factorization failed at y=%s: %s", y.tolist(), e)
        raise TruthSolveError(f"Sparse factorization failed: {e}", y) from e

    residual = np.linalg.norm(K @ u_free - rhs)
    if not np.all(np.isfinite(u_free)) or residual > TRUTH_RESIDUAL_TOL * rhs_norm:
        raise TruthSolveError(f"Truth residual {residual:.3e} exceeds tolerance", y)
    u[free] = u_free
    return Snapshot(u, y)


def solve_many(
    ops: AffineOperatorSet, space: TruthSpace, params: Iterable[Sequence[float]], workers: Optional[int] = None
) -> List[Snapshot]:
    """Truth solves for many parameters; results keep the input order."""
    workers = settings.WORKERS if workers is None else workers
    params = [np.asarray(y, dtype=float) for y in params]
    if workers <= 1:
        return [solve_truth(ops, space, y) for y in params]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda y: solve_truth(ops, space, y), params))


# ---------------- NORMS & OUTPUT ----------------
def _check_length(space: TruthSpace, *vectors: np.ndarray) -> None:
    for v in vectors:
        if np.shape(v) != (space.n_dof,):
            raise ValueError(f"Expected a coefficient vector of length {space.n_dof}, got shape {np.shape(v)}")


def v_inner(space: TruthSpace, u: np.ndarray, v: np.ndarray) -> float:
    _check_length(space, u, v)
    return float(np.dot(u, space.X @ v))


def v_norm(space: TruthSpace, u: np.ndarray) -> float:
    return float(np.sqrt(max(v_inner(space, u, u), 0.0)))


def evaluate_output(ops: AffineOperatorSet, y: Sequence[float], u: np.ndarray) -> float:
    """Compliance s(u; y) = f(y)^T u."""
    return float(np.dot(ops.assemble_rhs(y), u))


def export_operators(ops: AffineOperatorSet, space: TruthSpace, directory: str) -> List[str]:
    """Write A_q, f_q and X as Matrix Market files for debugging."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for q, A_q in enumerate(ops.a_terms, start=1):
        path = os.path.join(directory, f"A_{q}.mtx")
        scipy.io.mmwrite(path, A_q)
        written.append(path)
    for q, f_q in enumerate(ops.f_terms, start=1):
        path = os.path.join(directory, f"f_{q}.mtx")
        scipy.io.mmwrite(path, f_q.reshape(-1, 1))
        written.append(path)
    path = os.path.join(directory, "X.mtx")
    scipy.io.mmwrite(path, space.X)
    written.append(path)
    return written


__all__ = [
    "Mesh",
    "TruthSpace",
    "AffineOperatorSet",
    "Snapshot",
    "build_mesh",
    "build_truth_space",
    "with_energy_norm",
    "lame_constants",
    "assemble_affine",
    "assemble_monolithic",
    "assemble_thermal_block",
    "mass_matrix",
    "stiffness_matrix",
    "solve_truth",
    "solve_many",
    "v_inner",
    "v_norm",
    "evaluate_output",
    "export_operators",
]
