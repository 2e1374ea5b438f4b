"""
Probability model for the parameter vector y.

Each component is an affinely mapped Beta law, (y_i - lo_i) / (hi_i - lo_i) ~ Beta(alpha_i, beta_i),
and components are independent. Sampling goes through the inverse CDF so that
a seed fully determines the draws.
"""
import logging
from typing import Callable, List, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import special

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]


class BetaComponent(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(gt=0, description="First Beta shape parameter")
    beta: float = Field(gt=0, description="Second Beta shape parameter")
    lo: float = Field(description="Lower end of the support")
    hi: float = Field(description="Upper end of the support")

    @model_validator(mode="after")
    def _check_support(self) -> "BetaComponent":
        if not self.hi > self.lo:
            raise ValueError(f"Support must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        return self

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def to_unit(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.lo) / self.width

    def from_unit(self, t: np.ndarray) -> np.ndarray:
        return self.lo + self.width * np.asarray(t, dtype=float)

    def density(self, y: ArrayLike) -> np.ndarray:
        t = self.to_unit(y)
        inside = (t >= 0.0) & (t <= 1.0)
        tc = np.clip(t, 0.0, 1.0)
        log_pdf = (
            special.xlogy(self.alpha - 1.0, tc)
            + special.xlog1py(self.beta - 1.0, -tc)
            - special.betaln(self.alpha, self.beta)
            - np.log(self.width)
        )
        return np.where(inside, np.exp(log_pdf), 0.0)

    def cdf(self, y: ArrayLike) -> np.ndarray:
        return special.betainc(self.alpha, self.beta, np.clip(self.to_unit(y), 0.0, 1.0))

    def ppf(self, u: ArrayLike) -> np.ndarray:
        return self.from_unit(special.betaincinv(self.alpha, self.beta, np.asarray(u, dtype=float)))

    def mean(self) -> float:
        return self.lo + self.width * self.alpha / (self.alpha + self.beta)

    def mode(self) -> float:
        if self.alpha > 1.0 and self.beta > 1.0:
            return self.from_unit((self.alpha - 1.0) / (self.alpha + self.beta - 2.0)).item()
        return 0.5 * (self.lo + self.hi)


class ParameterDistribution(BaseModel):
    """Product of independent Beta components over Gamma = prod_i [lo_i, hi_i]."""

    model_config = ConfigDict(frozen=True)

    components: List[BetaComponent] = Field(min_length=1)

    @classmethod
    def benchmark(cls, alpha: float, beta: float) -> "ParameterDistribution":
        """Six-component law of the elasticity test case: y^1..y^4 on [1,3], y^5, y^6 on [2,6]."""
        comps = [BetaComponent(alpha=alpha, beta=beta, lo=1.0, hi=3.0) for _ in range(4)]
        comps += [BetaComponent(alpha=alpha, beta=beta, lo=2.0, hi=6.0) for _ in range(2)]
        return cls(components=comps)

    def uniform(self) -> "ParameterDistribution":
        """Uniform law on the same support (Beta(1, 1) components)."""
        return ParameterDistribution(
            components=[BetaComponent(alpha=1.0, beta=1.0, lo=c.lo, hi=c.hi) for c in self.components]
        )

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def lower(self) -> np.ndarray:
        return np.array([c.lo for c in self.components])

    @property
    def upper(self) -> np.ndarray:
        return np.array([c.hi for c in self.components])

    @property
    def volume(self) -> float:
        """Lebesgue measure |Gamma| of the support."""
        return float(np.prod(self.upper - self.lower))

    @property
    def is_uniform(self) -> bool:
        return all(c.alpha == 1.0 and c.beta == 1.0 for c in self.components)

    def _as_points(self, y: ArrayLike) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.dim:
            raise ValueError(f"Expected points with {self.dim} components, got shape {y.shape}")
        return y

    def contains(self, y: ArrayLike) -> np.ndarray:
        y = self._as_points(y)
        return np.all((y >= self.lower) & (y <= self.upper), axis=-1)

    def density(self, y: ArrayLike) -> Union[float, np.ndarray]:
        """rho(y); zero outside Gamma. Accepts one point (K,) or a batch (M, K)."""
        y = self._as_points(y)
        rho = np.ones(y.shape[:-1])
        for i, comp in enumerate(self.components):
            rho = rho * comp.density(y[..., i])
        return float(rho) if rho.ndim == 0 else rho

    def cdf(self, y: ArrayLike) -> np.ndarray:
        """Per-component marginal CDFs."""
        y = self._as_points(y)
        return np.stack([c.cdf(y[..., i]) for i, c in enumerate(self.components)], axis=-1)

    def to_unit(self, y: ArrayLike) -> np.ndarray:
        y = self._as_points(y)
        return (y - self.lower) / (self.upper - self.lower)

    def from_unit(self, t: ArrayLike) -> np.ndarray:
        t = self._as_points(t)
        return self.lower + t * (self.upper - self.lower)

    def sample(self, n: int, seed: int) -> np.ndarray:
        """n i.i.d. draws as an (n, K) array, reproducible per seed."""
        if n < 1:
            raise ValueError(f"Sample size must be >= 1, got {n}")
        u = np.random.default_rng(seed).random((n, self.dim))
        return np.column_stack([c.ppf(u[:, i]) for i, c in enumerate(self.components)])

    def mean(self) -> np.ndarray:
        return np.array([c.mean() for c in self.components])

    def mode(self) -> np.ndarray:
        return np.array([c.mode() for c in self.components])


# ---------------- WEIGHTS ----------------
def weight_one(y: ArrayLike) -> Union[float, np.ndarray]:
    y = np.asarray(y, dtype=float)
    return 1.0 if y.ndim == 1 else np.ones(y.shape[0])


def weight_rho(dist: ParameterDistribution, y: ArrayLike) -> Union[float, np.ndarray]:
    return dist.density(y)


def weight_sqrt_rho(dist: ParameterDistribution, y: ArrayLike) -> Union[float, np.ndarray]:
    return np.sqrt(dist.density(y))


WEIGHT_TAGS = ("one", "sqrt_rho", "rho")


def weight_function(tag: str, dist: ParameterDistribution) -> Callable[[ArrayLike], Union[float, np.ndarray]]:
    """Return w(y) for one of the tags in WEIGHT_TAGS."""
    if tag == "one":
        return weight_one
    if tag == "sqrt_rho":
        return lambda y: weight_sqrt_rho(dist, y)
    if tag == "rho":
        return lambda y: weight_rho(dist, y)
    raise ValueError(f"Unknown weight function '{tag}'. Must be one of {WEIGHT_TAGS}")


__all__ = [
    "BetaComponent",
    "ParameterDistribution",
    "weight_one",
    "weight_rho",
    "weight_sqrt_rho",
    "weight_function",
    "WEIGHT_TAGS",
]
