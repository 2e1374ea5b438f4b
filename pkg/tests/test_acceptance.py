"""
Desk-scale acceptance runs on the full benchmark (n_sub = 16).

All tests here are marked slow; run them with ``pytest -m slow``.
"""
import csv

import numpy as np
import pytest

from weighted_rom.fem_core import assemble_affine, build_truth_space, lame_constants, solve_many, v_norm
from weighted_rom.greedy_rb import estimate, greedy_build
from weighted_rom.harness_cli import EXIT_OK, load_config, run
from weighted_rom.param_space import ParameterDistribution, weight_one
from weighted_rom.quadrature import monte_carlo_rule
from weighted_rom.rom_online import reconstruct, reduced_solve

pytestmark = pytest.mark.slow

PAIRS = {
    "pod": ("pod_standard", "pod_mc"),
    "greedy": ("greedy_standard", "greedy_weighted"),
}


def _mean_square_curve(tmp_path, method, alpha, beta, seed, n_max):
    body = {
        "CONFIG_VERSION": 1,
        "METHOD": method,
        "ALPHA": alpha,
        "BETA": beta,
        "N_SUB": 16,
        "TRAINING_SIZE": 100,
        "TRAINING_SEED": seed,
        "N_MAX": n_max,
        "EPS_TOL": 1e-14,
        "TEST_SIZE": 100,
    }
    name = f"{method}_{alpha}_{beta}_{seed}"
    path = tmp_path / f"{name}.env"
    path.write_text("".join(f"{k}={v}\n" for k, v in body.items()))
    out = tmp_path / name
    manifest, code = run(load_config(str(path)), str(out))
    assert code == EXIT_OK, manifest.breakdown
    with open(out / "error_curve.csv", newline="") as fh:
        return {int(r["N"]): float(r["mean_sq_error"]) for r in csv.DictReader(fh)}


class TestCertification:
    def test_bound_on_benchmark_mesh(self):
        space = build_truth_space(16)
        ops = assemble_affine(space, *lame_constants())
        dist = ParameterDistribution.benchmark(10.0, 10.0)
        rb = greedy_build(ops, space, monte_carlo_rule(dist, 100, seed=5), weight_one, 1e-14, 10)
        assert rb.N == 10
        errors, etas = [], []
        for snapshot in solve_many(ops, space, dist.sample(50, seed=6)):
            uN = reduced_solve(rb, snapshot.y)
            errors.append(v_norm(space, snapshot.coeffs - reconstruct(rb, uN)))
            etas.append(estimate(rb.estimator, snapshot.y, uN))
        errors, etas = np.array(errors), np.array(etas)
        assert np.count_nonzero(errors > etas * (1.0 + 1e-8)) == 0
        assert np.mean(errors**2) <= np.mean(etas**2)


class TestWeightedOrdering:
    @pytest.mark.parametrize("family", ["pod", "greedy"])
    def test_moderate_concentration(self, tmp_path, family):
        standard_method, weighted_method = PAIRS[family]
        sizes = range(3, 16)
        standard = np.zeros(len(sizes))
        weighted = np.zeros(len(sizes))
        for seed in range(5):
            s = _mean_square_curve(tmp_path, standard_method, 10, 10, seed, 15)
            w = _mean_square_curve(tmp_path, weighted_method, 10, 10, seed, 15)
            standard += [s[n] for n in sizes]
            weighted += [w[n] for n in sizes]
        wins = np.count_nonzero(weighted < standard)
        assert wins >= 0.8 * len(sizes)

    @pytest.mark.parametrize("family", ["pod", "greedy"])
    def test_strong_concentration(self, tmp_path, family):
        standard_method, weighted_method = PAIRS[family]
        s = _mean_square_curve(tmp_path, standard_method, 75, 75, 0, 10)
        w = _mean_square_curve(tmp_path, weighted_method, 75, 75, 0, 10)
        assert s[10] >= 10.0 * w[10]
