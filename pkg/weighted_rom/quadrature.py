"""
Training sets as quadrature rules on Gamma.

One-dimensional rules live on the reference interval [0, 1] and carry
probability-normalized weights: Gauss-Legendre and Clenshaw-Curtis against the
uniform measure, Gauss-Jacobi against a Beta(alpha, beta) law. Tensor and
Smolyak rules map reference nodes to each component's support.
"""
import csv
import itertools
import logging
from dataclasses import dataclass, replace
from math import comb
from typing import Iterator, List, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal

from .param_space import ParameterDistribution

logger = logging.getLogger(__name__)

MAX_NODES = 10**7
MERGE_TOL = 1e-12

FAMILIES = ("gauss_legendre", "gauss_jacobi", "clenshaw_curtis")
NESTED_FAMILIES = ("clenshaw_curtis",)
WEIGHTINGS = ("plain", "density_reweighted")


# ---------------- TYPES ----------------
@dataclass(frozen=True)
class Rule1D:
    nodes: np.ndarray
    weights: np.ndarray
    family: str
    measure: str  # "uniform" or "beta"
    size_param: int  # n points, or CC level
    shape: Tuple[float, float] = (1.0, 1.0)

    def __len__(self) -> int:
        return self.nodes.size

    def integrate(self, g) -> float:
        return float(np.dot(self.weights, g(self.nodes)))


@dataclass(frozen=True)
class TrainingSet:
    """Nodes y_i in Gamma and weights w_i.

    ``measure`` says what sum_i w_i g(y_i) approximates: "rho" for the
    integral of g against the parameter density, "uniform" for the integral
    against dy / |Gamma|.
    """

    nodes: np.ndarray  # (n_t, K)
    weights: np.ndarray  # (n_t,)
    provenance: str
    measure: str

    def __post_init__(self) -> None:
        if self.nodes.ndim != 2 or self.weights.shape != (self.nodes.shape[0],):
            raise ValueError(
                f"Training nodes {self.nodes.shape} and weights {self.weights.shape} do not match"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("Training weights must be finite")
        if self.measure not in ("rho", "uniform"):
            raise ValueError(f"Unknown training measure '{self.measure}'")

    def __len__(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


# ---------------- 1D RULES ----------------
def gauss_legendre_1d(n: int) -> Rule1D:
    """n-point Gauss-Legendre rule for the uniform probability measure on [0, 1]."""
    if n < 1:
        raise ValueError(f"Number of points must be >= 1, got {n}")
    x, w = np.polynomial.legendre.leggauss(n)
    return Rule1D(0.5 * (x + 1.0), 0.5 * w, "gauss_legendre", "uniform", n)


def _jacobi_recurrence(n: int, a: float, b: float) -> Tuple[np.ndarray, np.ndarray]:
    """Monic three-term recurrence coefficients for the weight (1-x)^a (1+x)^b on [-1, 1]."""
    k = np.arange(n, dtype=float)
    s = 2.0 * k + a + b
    diag = np.empty(n)
    diag[0] = (b - a) / (a + b + 2.0)
    if n > 1:
        diag[1:] = (b * b - a * a) / (s[1:] * (s[1:] + 2.0))
    off = np.empty(max(n - 1, 0))
    if n > 1:
        off[0] = 4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + a + b) ** 2 * (3.0 + a + b))
        kk = k[2:]
        ss = s[2:]
        off[1:] = 4.0 * kk * (kk + a) * (kk + b) * (kk + a + b) / (ss**2 * (ss + 1.0) * (ss - 1.0))
    return diag, np.sqrt(off)


def gauss_jacobi_1d(n: int, alpha: float, beta: float) -> Rule1D:
    """n-point Gauss rule for the Beta(alpha, beta) probability measure on [0, 1].

    Built by the Golub-Welsch method from the Jacobi recurrence with
    exponents a = beta - 1 on (1 - x) and b = alpha - 1 on (1 + x).
    """
    if n < 1:
        raise ValueError(f"Number of points must be >= 1, got {n}")
    if alpha <= 0 or beta <= 0:
        raise ValueError(f"Beta shape parameters must be positive, got ({alpha}, {beta})")
    diag, off = _jacobi_recurrence(n, beta - 1.0, alpha - 1.0)
    try:
        x, vecs = eigh_tridiagonal(diag, off)
    except LinAlgError as e:
        raise RuntimeError(f"Golub-Welsch eigen-solve did not converge (n={n}, alpha={alpha}, beta={beta}): {e}") from e
    w = vecs[0, :] ** 2
    return Rule1D(0.5 * (x + 1.0), w / w.sum(), "gauss_jacobi", "beta", n, (float(alpha), float(beta)))


def clenshaw_curtis_points(level: int) -> int:
    if level < 1:
        raise ValueError(f"Clenshaw-Curtis level must be >= 1, got {level}")
    return 1 if level == 1 else 2 ** (level - 1) + 1


def clenshaw_curtis_1d(level: int) -> Rule1D:
    """Nested Clenshaw-Curtis rule with 2^(level-1)+1 points (1 point at level 1)."""
    n = clenshaw_curtis_points(level)
    if n == 1:
        return Rule1D(np.array([0.5]), np.array([1.0]), "clenshaw_curtis", "uniform", level)
    N = n - 1
    j = np.arange(n)
    # j / N is a dyadic rational, so nodes of consecutive levels coincide bit for bit
    nodes = 0.5 * (1.0 - np.cos(np.pi * (j / N)))
    # cos(pi/2) is not exactly zero; pin the midpoint to the level-1 node
    nodes[N // 2] = 0.5
    k = np.arange(1, N // 2 + 1)
    b = np.where(k == N // 2, 1.0, 2.0)
    c = np.where((j == 0) | (j == N), 1.0, 2.0)
    series = (b / (4.0 * k**2 - 1.0))[None, :] * np.cos(2.0 * np.pi * np.outer(j, k) / N)
    weights = 0.5 * (c / N) * (1.0 - series.sum(axis=1))
    return Rule1D(nodes, weights, "clenshaw_curtis", "uniform", level)


def rule_for_level(family: str, level: int, alpha: float = 1.0, beta: float = 1.0) -> Rule1D:
    """Level-l member of a 1D family (Gauss families: l points)."""
    if family == "clenshaw_curtis":
        return clenshaw_curtis_1d(level)
    if family == "gauss_legendre":
        return gauss_legendre_1d(level)
    if family == "gauss_jacobi":
        return gauss_jacobi_1d(level, alpha, beta)
    raise ValueError(f"Unsupported quadrature family '{family}'. Must be one of {FAMILIES}")


# ---------------- MULTI-D RULES ----------------
def _measure_of(rules: Sequence[Rule1D]) -> str:
    kinds = {r.measure for r in rules}
    if kinds == {"uniform"}:
        return "uniform"
    if kinds == {"beta"}:
        return "rho"
    raise ValueError("Cannot tensorize rules defined against different measures")


def _tensor_unit(rules: Sequence[Rule1D]) -> Tuple[np.ndarray, np.ndarray]:
    grids = np.meshgrid(*[r.nodes for r in rules], indexing="ij")
    wgrids = np.meshgrid(*[r.weights for r in rules], indexing="ij")
    nodes = np.column_stack([g.ravel() for g in grids])
    weights = np.prod(np.column_stack([w.ravel() for w in wgrids]), axis=1)
    return nodes, weights


def tensor_rule(rules: Sequence[Rule1D], dist: ParameterDistribution) -> TrainingSet:
    """Cartesian product of one 1D rule per component, mapped to the supports of ``dist``."""
    if len(rules) != dist.dim:
        raise ValueError(f"Need one rule per component ({dist.dim}), got {len(rules)}")
    n_t = int(np.prod([len(r) for r in rules], dtype=float))
    if n_t > MAX_NODES:
        raise ValueError(f"Tensor rule would have {n_t} nodes (limit {MAX_NODES})")
    nodes, weights = _tensor_unit(rules)
    families = sorted({r.family for r in rules})
    return TrainingSet(dist.from_unit(nodes), weights, f"tensor:{'+'.join(families)}", _measure_of(rules))


def merge_nodes(nodes: np.ndarray, weights: np.ndarray, tol: float = MERGE_TOL) -> Tuple[np.ndarray, np.ndarray]:
    """Merge nodes that agree to ``tol`` in every coordinate, summing their weights."""
    keys = np.round(nodes / tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    merged = np.bincount(inverse.ravel(), weights=weights, minlength=first.size)
    return nodes[first], merged


def _bounded_indices(dim: int, lo: int, hi: int) -> Iterator[Tuple[int, ...]]:
    """Multi-indices l >= 1 (componentwise) with lo <= |l|_1 <= hi."""
    if dim == 1:
        for l in range(max(lo, 1), hi + 1):
            yield (l,)
        return
    for first in range(1, hi - (dim - 1) + 1):
        for rest in _bounded_indices(dim - 1, lo - first, hi - first):
            yield (first,) + rest


def smolyak_rule(level: int, family: str, dim: int, dist: ParameterDistribution) -> TrainingSet:
    """Sparse rule by the combination technique.

    ``level`` is the finest 1D level that appears; the rule sums
    (-1)^(level+dim-1-|l|) * C(dim-1, |l|-level) times the tensor rule of
    levels l over level <= |l|_1 <= level+dim-1, then merges duplicate nodes.
    """
    if level < 1:
        raise ValueError(f"Smolyak level must be >= 1, got {level}")
    if dim != dist.dim:
        raise ValueError(f"Rule dimension {dim} does not match distribution dimension {dist.dim}")
    if family not in FAMILIES:
        raise ValueError(f"Unsupported quadrature family '{family}'. Must be one of {FAMILIES}")
    if family not in NESTED_FAMILIES:
        logger.info("Smolyak rule over non-nested family '%s': fewer shared nodes between levels", family)

    cache = {}

    def rule(i: int, l: int) -> Rule1D:
        comp = dist.components[i]
        key = (l, comp.alpha, comp.beta) if family == "gauss_jacobi" else (l,)
        if key not in cache:
            cache[key] = rule_for_level(family, l, comp.alpha, comp.beta)
        return cache[key]

    top = level + dim - 1
    all_nodes: List[np.ndarray] = []
    all_weights: List[np.ndarray] = []
    measure = None
    for idx in _bounded_indices(dim, level, top):
        coef = (-1) ** (top - sum(idx)) * comb(dim - 1, sum(idx) - level)
        rules = [rule(i, l) for i, l in enumerate(idx)]
        measure = _measure_of(rules)
        nodes, weights = _tensor_unit(rules)
        all_nodes.append(nodes)
        all_weights.append(coef * weights)

    nodes, weights = merge_nodes(np.vstack(all_nodes), np.concatenate(all_weights))
    logger.info("Smolyak %s rule: level=%d, dim=%d, %d distinct nodes", family, level, dim, nodes.shape[0])
    return TrainingSet(dist.from_unit(nodes), weights, f"smolyak:{family}:level={level}", measure)


def monte_carlo_rule(dist: ParameterDistribution, n: int, seed: int, weighting: str = "plain") -> TrainingSet:
    """Monte-Carlo training set.

    Args:
        dist: Parameter density rho (or a uniform law for plain uniform sampling).
        n: Number of nodes.
        seed: RNG seed.
        weighting: "plain" draws nodes from ``dist`` with w_i = 1/n;
            "density_reweighted" draws nodes uniformly on Gamma with
            w_i = rho(y_i) |Gamma| / n.
    """
    if n < 1:
        raise ValueError(f"Monte-Carlo size must be >= 1, got {n}")
    if weighting == "plain":
        nodes = dist.sample(n, seed)
        measure = "uniform" if dist.is_uniform else "rho"
        return TrainingSet(nodes, np.full(n, 1.0 / n), "monte_carlo:plain", measure)
    if weighting == "density_reweighted":
        nodes = dist.uniform().sample(n, seed)
        weights = dist.density(nodes) * dist.volume / n
        return TrainingSet(nodes, np.asarray(weights, dtype=float), "monte_carlo:density_reweighted", "rho")
    raise ValueError(f"Unknown Monte-Carlo weighting '{weighting}'. Must be one of {WEIGHTINGS}")


def probability_weights(training: TrainingSet, dist: ParameterDistribution) -> TrainingSet:
    """Express the rule against rho: uniform-measure weights become w_i rho(y_i) |Gamma|."""
    if training.measure == "rho":
        return training
    weights = training.weights * dist.density(training.nodes) * dist.volume
    return replace(training, weights=np.asarray(weights, dtype=float), measure="rho")


# ---------------- CSV ----------------
def write_training_csv(training: TrainingSet, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["provenance", training.provenance, "measure", training.measure])
        writer.writerow([f"y_{i + 1}" for i in range(training.dim)] + ["weight"])
        for y, w in zip(training.nodes, training.weights):
            writer.writerow([repr(float(v)) for v in y] + [repr(float(w))])


def read_training_csv(path: str) -> TrainingSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        meta = next(reader)
        if len(meta) < 4 or meta[0] != "provenance" or meta[2] != "measure":
            raise ValueError(f"{path}: missing provenance header row")
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: training set has no nodes")
    data = np.array(rows)
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: rows have {data.shape[1]} columns, header has {len(header)}")
    return TrainingSet(data[:, :-1], data[:, -1], meta[1], meta[3])


__all__ = [
    "Rule1D",
    "TrainingSet",
    "gauss_legendre_1d",
    "gauss_jacobi_1d",
    "clenshaw_curtis_1d",
    "clenshaw_curtis_points",
    "rule_for_level",
    "tensor_rule",
    "smolyak_rule",
    "merge_nodes",
    "monte_carlo_rule",
    "probability_weights",
    "write_training_csv",
    "read_training_csv",
    "FAMILIES",
]
