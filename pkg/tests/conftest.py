import numpy as np
import pytest

from weighted_rom.fem_core import assemble_affine, assemble_thermal_block, build_truth_space, lame_constants
from weighted_rom.param_space import BetaComponent, ParameterDistribution
from weighted_rom.quadrature import monte_carlo_rule


@pytest.fixture(scope="session")
def small_space():
    return build_truth_space(4)


@pytest.fixture(scope="session")
def small_ops(small_space):
    return assemble_affine(small_space, *lame_constants())


@pytest.fixture(scope="session")
def thermal_space():
    return build_truth_space(8, n_components=1)


@pytest.fixture(scope="session")
def thermal_ops(thermal_space):
    return assemble_thermal_block(thermal_space)


@pytest.fixture(scope="session")
def thermal_dist():
    """Diffusivity y^1 on [0.5, 2], boundary flux y^2 on [0, 1]."""
    return ParameterDistribution(
        components=[
            BetaComponent(alpha=2.0, beta=2.0, lo=0.5, hi=2.0),
            BetaComponent(alpha=2.0, beta=2.0, lo=0.0, hi=1.0),
        ]
    )


@pytest.fixture(scope="session")
def thermal_training(thermal_dist):
    return monte_carlo_rule(thermal_dist, 10, seed=3)


@pytest.fixture(scope="session")
def unit_square_dist():
    return ParameterDistribution(components=[BetaComponent(alpha=1.0, beta=1.0, lo=0.0, hi=1.0)] * 2)


@pytest.fixture(scope="session")
def bench_dist():
    return ParameterDistribution.benchmark(10.0, 10.0)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
