import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from weighted_rom.errors import ConfigRejectedError
from weighted_rom.harness_cli import (
    EXIT_BREAKDOWN,
    EXIT_CONFIG,
    EXIT_OK,
    build_training,
    compare,
    load_config,
    main,
    read_params_csv,
    run,
)
from weighted_rom.param_space import ParameterDistribution
from weighted_rom.quadrature import monte_carlo_rule, read_training_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write_config(tmp_path, name="run.env", **keys):
    body = {"CONFIG_VERSION": 1, "ALPHA": 10, "BETA": 10}
    body.update(keys)
    path = tmp_path / name
    path.write_text("".join(f"{k}={v}\n" for k, v in body.items()))
    return str(path)


def _small(tmp_path, method="pod_mc", name="run.env", **keys):
    defaults = {"METHOD": method, "N_SUB": 4, "TRAINING_SIZE": 8, "N_MAX": 3, "TEST_SIZE": 5, "EPS_TOL": 1e-12}
    defaults.update(keys)
    return load_config(_write_config(tmp_path, name, **defaults))


def _curve(run_dir):
    with open(run_dir / "error_curve.csv", newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Config parsing and the method grid
# ---------------------------------------------------------------------------

class TestLoadConfig:
    def test_shipped_configs_parse(self):
        config = load_config(str(CONFIGS / "greedy_weighted_b10.env"))
        assert config.method == "greedy_weighted"
        assert config.effective_weight == "sqrt_rho"
        assert config.effective_sampling == "rho"

    def test_unknown_key_exits_with_config_code(self, tmp_path):
        path = _write_config(tmp_path, METHOD="pod_mc", N_SNAPSHOTS=10)
        assert main(["gridinfo", "--config", path, "--out", str(tmp_path / "g.csv")]) == EXIT_CONFIG

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(str(tmp_path / "absent.env"))

    def test_seed_override(self, tmp_path):
        path = _write_config(tmp_path, METHOD="pod_mc", TRAINING_SEED=1)
        assert load_config(path).training_seed == 1
        assert load_config(path, seed=7).training_seed == 7

    def test_full_scale_flag(self, tmp_path):
        path = _write_config(tmp_path, METHOD="pod_mc")
        assert load_config(path).effective_training_size == 100
        assert load_config(path, full_scale=True).effective_training_size == 500

    def test_rejects_version(self, tmp_path):
        with pytest.raises(ConfigRejectedError, match="CONFIG_VERSION"):
            load_config(_write_config(tmp_path, CONFIG_VERSION=2, METHOD="pod_mc"))

    def test_rejects_odd_mesh(self, tmp_path):
        with pytest.raises(ConfigRejectedError, match="even"):
            load_config(_write_config(tmp_path, METHOD="pod_mc", N_SUB=5))

    def test_norm_key(self, tmp_path):
        assert load_config(_write_config(tmp_path, METHOD="pod_mc")).norm == "h1"
        assert load_config(_write_config(tmp_path, METHOD="pod_mc", NORM="energy")).norm == "energy"
        old = _write_config(tmp_path, "old.env", METHOD="pod_mc", LAM_MU_NORM="energy")
        assert main(["gridinfo", "--config", old, "--out", str(tmp_path / "g.csv")]) == EXIT_CONFIG


class TestMethodGrid:
    def test_rho_weighted_pod_mc(self, tmp_path):
        with pytest.raises(ConfigRejectedError, match="quadrature"):
            load_config(_write_config(tmp_path, METHOD="pod_mc", WEIGHT="rho"))

    def test_pod_standard_sampling(self, tmp_path):
        with pytest.raises(ConfigRejectedError, match="SAMPLING=rho"):
            load_config(_write_config(tmp_path, METHOD="pod_standard", SAMPLING="rho"))

    def test_pod_weight_must_match_rule(self, tmp_path):
        with pytest.raises(ConfigRejectedError, match="WEIGHT=rho"):
            load_config(_write_config(tmp_path, METHOD="pod_uniform_mc", WEIGHT="sqrt_rho"))

    def test_weighted_greedy_needs_weight(self, tmp_path):
        with pytest.raises(ConfigRejectedError, match="greedy_weighted"):
            load_config(_write_config(tmp_path, METHOD="greedy_weighted", WEIGHT="one"))

    def test_standard_greedy_is_unweighted(self, tmp_path):
        with pytest.raises(ConfigRejectedError, match="w = 1"):
            load_config(_write_config(tmp_path, METHOD="greedy_standard", WEIGHT="rho"))

    def test_weighted_greedy_accepts_rho(self, tmp_path):
        config = load_config(_write_config(tmp_path, METHOD="greedy_weighted", WEIGHT="rho", SAMPLING="uniform"))
        assert config.effective_weight == "rho"
        assert config.effective_sampling == "uniform"


class TestBuildTraining:
    @pytest.mark.parametrize(
        "name, size, positive, probability",
        [
            ("pod_gauss_legendre_b10", 729, True, False),
            # Smolyak combination weights are signed
            ("pod_sparse_gauss_jacobi_b10", 389, False, True),
            ("pod_mc_b10", 100, True, True),
            ("greedy_standard_b75", 100, True, True),
        ],
    )
    def test_node_counts(self, name, size, positive, probability):
        config = load_config(str(CONFIGS / f"{name}.env"))
        training = build_training(config, ParameterDistribution.benchmark(config.alpha, config.beta))
        assert len(training) == size
        if positive:
            assert np.all(training.weights > 0.0)
        if probability:
            assert training.weights.sum() == pytest.approx(1.0, rel=1e-10)

    def test_full_scale_monte_carlo(self):
        config = load_config(str(CONFIGS / "pod_uniform_mc_b10.env"), full_scale=True)
        training = build_training(config, ParameterDistribution.benchmark(10, 10))
        assert len(training) == 500

    def test_standard_greedy_samples_uniformly(self, bench_dist):
        config = load_config(str(CONFIGS / "greedy_standard_b10.env"))
        training = build_training(config, bench_dist)
        expected = monte_carlo_rule(bench_dist.uniform(), len(training), config.training_seed)
        np.testing.assert_array_equal(training.nodes, expected.nodes)

    def test_gridinfo_writes_nodes(self, tmp_path):
        out = tmp_path / "nodes.csv"
        assert main(["gridinfo", "--config", str(CONFIGS / "pod_mc_b10.env"), "--seed", "4", "--out", str(out)]) == EXIT_OK
        training = read_training_csv(str(out))
        expected = monte_carlo_rule(ParameterDistribution.benchmark(10, 10), 100, 4)
        np.testing.assert_allclose(training.nodes, expected.nodes, rtol=1e-15)


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

class TestRun:
    def test_pod_run_artifacts(self, tmp_path):
        out = tmp_path / "pod"
        manifest, code = run(_small(tmp_path), str(out))
        assert code == EXIT_OK
        assert manifest.status == "ok"
        assert manifest.n_dof == 50
        assert manifest.training_size == 8
        for name in ("training.csv", "error_curve.csv", "basis.wrom", "spectrum.csv", "manifest.json"):
            assert (out / name).exists()
            assert name in manifest.artifacts
        rows = _curve(out)
        assert [int(r["N"]) for r in rows] == list(range(1, manifest.n_built + 1))
        assert all(r["estimator_mean_sq"] == "" for r in rows)
        saved = json.loads((out / "manifest.json").read_text())
        assert saved["test_seed"] == 12345
        assert saved["breakdown"] is None

    def test_spectrum_artifact(self, tmp_path):
        out = tmp_path / "pod"
        run(_small(tmp_path), str(out))
        with open(out / "spectrum.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8
        assert [int(r["k"]) for r in rows] == list(range(1, 9))
        energy = [float(r["E_k"]) for r in rows]
        assert energy == sorted(energy)
        assert energy[-1] == pytest.approx(1.0)

    def test_energy_norm_run(self, tmp_path):
        manifest, code = run(_small(tmp_path, NORM="energy"), str(tmp_path / "energy"))
        assert code == EXIT_OK
        assert manifest.config["norm"] == "energy"

    def test_rerun_is_byte_identical(self, tmp_path):
        config = _small(tmp_path)
        run(config, str(tmp_path / "a"))
        run(config, str(tmp_path / "b"))
        for name in ("training.csv", "error_curve.csv", "spectrum.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_greedy_run(self, tmp_path):
        out = tmp_path / "greedy"
        manifest, code = run(_small(tmp_path, "greedy_weighted"), str(out))
        assert code == EXIT_OK
        with open(out / "greedy_history.csv", newline="") as fh:
            history = list(csv.DictReader(fh))
        assert [int(r["iteration"]) for r in history][:manifest.n_built] == list(range(1, manifest.n_built + 1))
        assert all(float(r["estimator_mean_sq"]) >= float(r["mean_sq_error"]) for r in _curve(out))

    def test_offline_breakdown(self, tmp_path, monkeypatch):
        monkeypatch.setattr("weighted_rom.settings.SINGULAR_RCOND", 0.999999)
        out = tmp_path / "broken"
        code = main(["build", "--config", _write_config(
            tmp_path, METHOD="greedy_standard", N_SUB=4, TRAINING_SIZE=8, N_MAX=3, TEST_SIZE=5, EPS_TOL=1e-12
        ), "--out", str(out)])
        assert code == EXIT_BREAKDOWN
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "breakdown"
        assert manifest["breakdown"]["stage"] == "offline"
        assert manifest["breakdown"]["n"] == 2
        assert len(manifest["breakdown"]["y"]) == 6
        assert manifest["n_built"] == 1
        assert len(_curve(out)) == 1

    def test_online_breakdown(self, tmp_path, monkeypatch):
        monkeypatch.setattr("weighted_rom.settings.SINGULAR_RCOND", 0.999999)
        manifest, code = run(_small(tmp_path), str(tmp_path / "pod"))
        assert code == EXIT_BREAKDOWN
        assert manifest.breakdown.stage == "online"
        assert manifest.breakdown.n == 2
        assert manifest.n_evaluated == 1


class TestCompareAndEvaluate:
    @pytest.fixture
    def two_runs(self, tmp_path):
        run(_small(tmp_path, "pod_standard", "standard.env"), str(tmp_path / "standard"))
        run(_small(tmp_path, "pod_uniform_mc", "weighted.env"), str(tmp_path / "weighted"))
        return tmp_path / "standard", tmp_path / "weighted"

    def test_compare(self, two_runs, tmp_path):
        standard, weighted = two_runs
        path = compare([str(standard), str(weighted)], str(tmp_path / "cmp"))
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == [
            "N",
            "mean_sq_error[pod_standard@standard]",
            "mean_sq_error[pod_uniform_mc@weighted]",
            "ratio[pod_uniform_mc@weighted]",
        ]
        first = rows[1]
        assert float(first[3]) == pytest.approx(float(first[2]) / float(first[1]))
        plot = json.loads((tmp_path / "cmp" / "plot_data.json").read_text())
        assert len(plot["series"]) == 2

    def test_compare_rejects_different_distribution(self, two_runs, tmp_path):
        standard, weighted = two_runs
        other = tmp_path / "other"
        shutil.copytree(weighted, other)
        manifest = json.loads((other / "manifest.json").read_text())
        manifest["config"]["alpha"] = 75.0
        (other / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(ConfigRejectedError, match="different"):
            compare([str(standard), str(other)], str(tmp_path / "cmp"))

    def test_compare_needs_two_runs(self, two_runs, tmp_path):
        with pytest.raises(ValueError):
            compare([str(two_runs[0])], str(tmp_path / "cmp"))

    def test_evaluate(self, tmp_path):
        run(_small(tmp_path, "greedy_weighted"), str(tmp_path / "greedy"))
        params = tmp_path / "params.csv"
        params.write_text("y_1,y_2,y_3,y_4,y_5,y_6\n1,1,1,1,0.5,0.5\n1.2,0.8,1.1,0.9,0.2,0.7\n")
        out = tmp_path / "outputs.csv"
        code = main(["evaluate", "--archive", str(tmp_path / "greedy" / "basis.wrom"), "--params", str(params), "--out", str(out)])
        assert code == EXIT_OK
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        # compliance is nonnegative and the estimator is present for greedy bases
        assert all(float(r["output"]) >= 0.0 for r in rows)
        assert all(float(r["estimator"]) >= 0.0 for r in rows)
        assert "u_N_1" in rows[0]

    def test_evaluate_rejects_ragged_params(self, tmp_path):
        params = tmp_path / "params.csv"
        params.write_text("y_1,y_2\n1,1,1\n")
        with pytest.raises(ValueError, match="columns"):
            read_params_csv(str(params))


@pytest.mark.slow
def test_weighted_pod_beats_standard_on_concentrated_law(tmp_path):
    keys = {"BETA": 75, "ALPHA": 75, "N_SUB": 8, "TRAINING_SIZE": 100, "N_MAX": 8, "TEST_SIZE": 100, "EPS_TOL": 1e-12}
    run(load_config(_write_config(tmp_path, "standard.env", METHOD="pod_standard", **keys)), str(tmp_path / "s"))
    run(load_config(_write_config(tmp_path, "weighted.env", METHOD="pod_uniform_mc", **keys)), str(tmp_path / "w"))
    standard = {int(r["N"]): float(r["mean_sq_error"]) for r in _curve(tmp_path / "s")}
    weighted = {int(r["N"]): float(r["mean_sq_error"]) for r in _curve(tmp_path / "w")}
    for n in range(3, 9):
        assert weighted[n] < standard[n]
