import numpy as np
import pytest

from weighted_rom.fem_core import solve_many
from weighted_rom.quadrature import TrainingSet, monte_carlo_rule, smolyak_rule
from weighted_rom.reduced_basis import check_orthonormal, orthonormal_basis
from weighted_rom.weighted_pod import (
    PodSpectrum,
    correlation_matrix,
    pod_build,
    pod_modes,
    truncation_size,
    weighted_eig,
    write_spectrum_csv,
)


def _random_psd(rng, n, rank=None):
    B = rng.standard_normal((rank or n, n))
    return B.T @ B


def _weighted_projection_error(space, Phi, w, Z):
    diff = Phi - Z @ (Z.T @ (space.X @ Phi))
    return float(np.dot(w, np.sum(diff * (space.X @ diff), axis=0)))


# ---------------------------------------------------------------------------
# Eigenproblem
# ---------------------------------------------------------------------------

class TestWeightedEig:
    def test_matches_nonsymmetric_eigensolve(self, rng):
        for _ in range(50):
            n_t = int(rng.integers(2, 26))
            C = _random_psd(rng, n_t)
            w = rng.uniform(0.01, 1.0, n_t)
            spectrum = weighted_eig(C, w)
            oracle = np.sort(np.linalg.eigvals(w[:, None] * C).real)[::-1]
            np.testing.assert_allclose(spectrum.eigenvalues, oracle, rtol=1e-9, atol=1e-9 * oracle[0])

    def test_eigenvectors_of_wc(self, rng):
        C = _random_psd(rng, 12)
        w = rng.uniform(0.1, 1.0, 12)
        spectrum = weighted_eig(C, w)
        WC = w[:, None] * C
        for k in range(12):
            psi = spectrum.eigenvectors[:, k]
            np.testing.assert_allclose(WC @ psi, spectrum.eigenvalues[k] * psi, atol=1e-9 * spectrum.eigenvalues[0])

    def test_rank_deficient_correlation(self, rng):
        C = _random_psd(rng, 10, rank=4)
        spectrum = weighted_eig(C, np.full(10, 0.1))
        assert spectrum.n_positive >= 4
        assert np.all(spectrum.eigenvalues[4:] < 1e-10 * spectrum.eigenvalues[0])

    def test_indefinite_weights(self, rng):
        C = _random_psd(rng, 8)
        w = rng.uniform(0.1, 1.0, 8)
        w[[2, 5]] = -0.05
        spectrum = weighted_eig(C, w)
        assert spectrum.indefinite
        oracle = np.sort(np.linalg.eigvals(w[:, None] * C).real)[::-1]
        np.testing.assert_allclose(spectrum.eigenvalues, oracle, rtol=1e-9, atol=1e-9 * oracle[0])
        WC = w[:, None] * C
        for k in range(spectrum.n_positive):
            psi = spectrum.eigenvectors[:, k]
            np.testing.assert_allclose(WC @ psi, spectrum.eigenvalues[k] * psi, atol=1e-8 * np.abs(psi).max() * oracle[0])

    def test_permutation_invariant(self, rng):
        C = _random_psd(rng, 9)
        for w in (rng.uniform(0.1, 1.0, 9), np.where(np.arange(9) % 4 == 1, -0.05, 0.3)):
            perm = rng.permutation(9)
            a = weighted_eig(C, w)
            b = weighted_eig(C[np.ix_(perm, perm)], w[perm])
            np.testing.assert_allclose(b.eigenvalues, a.eigenvalues, rtol=1e-9, atol=1e-10 * a.eigenvalues[0])
            np.testing.assert_allclose(b.retained_energy, a.retained_energy, rtol=1e-9, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="do not match"):
            weighted_eig(np.eye(3), np.ones(2))

    def test_all_zero_weights(self):
        with pytest.raises(ValueError, match="zero"):
            weighted_eig(np.eye(3), np.zeros(3))


class TestTruncation:
    def _spectrum(self, eigenvalues):
        lam = np.array(eigenvalues, dtype=float)
        total = np.abs(lam).sum()
        return PodSpectrum(lam, np.eye(lam.size), np.cumsum(np.clip(lam, 0, None)) / total)

    def test_first_mode_enough(self):
        assert truncation_size(self._spectrum([4, 2, 1, 0.5]), 0.5, 10) == 1

    def test_energy_threshold(self):
        # E = 0.533, 0.8, 0.933, 1.0
        assert truncation_size(self._spectrum([4, 2, 1, 0.5]), 0.1, 10) == 3

    def test_capped_by_n_max(self):
        assert truncation_size(self._spectrum([4, 2, 1, 0.5]), 1e-9, 2) == 2

    def test_capped_by_positive_modes(self):
        spectrum = self._spectrum([3, 1, -1])
        assert spectrum.n_positive == 2
        assert truncation_size(spectrum, 1e-9, 10) == 2

    def test_rejects_bad_tolerance(self):
        with pytest.raises(ValueError):
            truncation_size(self._spectrum([1.0]), 0.0, 3)


# ---------------------------------------------------------------------------
# POD on the thermal block
# ---------------------------------------------------------------------------

class TestPodOptimality:
    @pytest.fixture(scope="class")
    def setup(self, thermal_ops, thermal_space, thermal_dist):
        training = monte_carlo_rule(thermal_dist, 30, seed=61, weighting="density_reweighted")
        snapshots = solve_many(thermal_ops, thermal_space, training.nodes)
        C = correlation_matrix(thermal_space, snapshots)
        spectrum = weighted_eig(C, training.weights)
        Phi = np.column_stack([s.coeffs for s in snapshots])
        return training, snapshots, spectrum, Phi

    def test_mode_norms_are_eigenvalues(self, setup, thermal_space):
        _, snapshots, spectrum, _ = setup
        modes = pod_modes(thermal_space, snapshots, spectrum, 3)
        gram = modes.T @ (thermal_space.X @ modes)
        np.testing.assert_allclose(np.diag(gram), spectrum.eigenvalues[:3], rtol=1e-8, atol=1e-12 * spectrum.eigenvalues[0])
        np.testing.assert_allclose(gram - np.diag(np.diag(gram)), 0.0, atol=1e-8 * spectrum.eigenvalues[0])

    def test_projection_error_equals_tail(self, setup, thermal_space):
        training, snapshots, spectrum, Phi = setup
        for n in range(1, 6):
            Z = orthonormal_basis(thermal_space, pod_modes(thermal_space, snapshots, spectrum, n))
            error = _weighted_projection_error(thermal_space, Phi, training.weights, Z)
            tail = spectrum.eigenvalues[n:].sum()
            assert error == pytest.approx(tail, rel=1e-8, abs=1e-12 * spectrum.eigenvalues.sum())

    def test_beats_random_subspaces(self, setup, thermal_space, rng):
        training, snapshots, spectrum, Phi = setup
        for n in range(1, 6):
            Z = orthonormal_basis(thermal_space, pod_modes(thermal_space, snapshots, spectrum, n))
            pod_error = _weighted_projection_error(thermal_space, Phi, training.weights, Z)
            for _ in range(20):
                R = orthonormal_basis(thermal_space, Phi @ rng.standard_normal((Phi.shape[1], n)))
                random_error = _weighted_projection_error(thermal_space, Phi, training.weights, R)
                assert pod_error <= random_error + 1e-12 * spectrum.eigenvalues.sum()


class TestPodBuild:
    def test_builds_orthonormal_basis(self, thermal_ops, thermal_space, thermal_dist):
        training = monte_carlo_rule(thermal_dist, 20, seed=62)
        rb = pod_build(thermal_ops, thermal_space, training, 1e-6, 4)
        assert 1 <= rb.N <= 4
        check_orthonormal(thermal_space, rb.Z)
        assert rb.estimator is None
        assert len(rb.metadata["eigenvalues"]) == 20
        assert rb.metadata["status"] in ("tolerance", "n_max")
        assert not rb.metadata["indefinite_weights"]

    def test_energy_tolerance_met(self, thermal_ops, thermal_space, thermal_dist):
        training = monte_carlo_rule(thermal_dist, 20, seed=63)
        rb = pod_build(thermal_ops, thermal_space, training, 1e-3, 20)
        energy = rb.metadata["retained_energy"]
        assert rb.metadata["status"] == "tolerance"
        assert energy[rb.N - 1] > 1.0 - 1e-3
        if rb.N > 1:
            assert energy[rb.N - 2] <= 1.0 - 1e-3

    def test_sparse_training_set(self, thermal_ops, thermal_space, thermal_dist):
        training = smolyak_rule(4, "gauss_jacobi", 2, thermal_dist)
        rb = pod_build(thermal_ops, thermal_space, training, 1e-8, 5)
        assert 1 <= rb.N <= 5
        check_orthonormal(thermal_space, rb.Z)

    def test_zero_snapshots(self, small_ops, small_space):
        nodes = np.array([[1.0, 1.0, 1.0, 1.0, 0.0, 0.0]] * 3)
        training = TrainingSet(nodes, np.full(3, 1.0 / 3), "manual", "rho")
        rb = pod_build(small_ops, small_space, training, 1e-6, 5)
        assert rb.N == 0
        assert rb.metadata["status"] == "zero energy"

    def test_no_positive_mode(self, caplog, thermal_ops, thermal_space, thermal_dist):
        training = monte_carlo_rule(thermal_dist, 6, seed=65)
        negated = TrainingSet(training.nodes, -training.weights, "manual", "rho")
        with caplog.at_level("WARNING", logger="weighted_rom.weighted_pod"):
            rb = pod_build(thermal_ops, thermal_space, negated, 1e-6, 4)
        assert rb.N == 0
        assert rb.metadata["status"] == "zero energy"
        assert rb.metadata["indefinite_weights"]
        assert len(rb.metadata["eigenvalues"]) == 6
        assert max(rb.metadata["eigenvalues"]) <= 0.0
        assert "No positive POD eigenvalue" in caplog.text

    def test_snapshot_order_does_not_matter(self, thermal_ops, thermal_space, thermal_dist, rng):
        training = monte_carlo_rule(thermal_dist, 12, seed=66, weighting="density_reweighted")
        perm = rng.permutation(12)
        shuffled = TrainingSet(training.nodes[perm], training.weights[perm], "manual", "rho")
        a = pod_build(thermal_ops, thermal_space, training, 1e-12, 2)
        b = pod_build(thermal_ops, thermal_space, shuffled, 1e-12, 2)
        np.testing.assert_allclose(b.metadata["eigenvalues"], a.metadata["eigenvalues"], rtol=1e-9, atol=1e-12 * a.metadata["eigenvalues"][0])
        assert a.N == b.N == 2
        X = thermal_space.X
        np.testing.assert_allclose(b.Z @ (X @ b.Z).T, a.Z @ (X @ a.Z).T, atol=1e-8)

    def test_precomputed_snapshots(self, thermal_ops, thermal_space, thermal_dist):
        training = monte_carlo_rule(thermal_dist, 10, seed=64)
        snapshots = solve_many(thermal_ops, thermal_space, training.nodes)
        a = pod_build(thermal_ops, thermal_space, training, 1e-6, 3, snapshots=snapshots)
        b = pod_build(thermal_ops, thermal_space, training, 1e-6, 3)
        np.testing.assert_allclose(np.abs(a.Z), np.abs(b.Z), atol=1e-12)

    def test_rejects_bad_snapshot_length(self, thermal_space):
        with pytest.raises(ValueError, match="expected"):
            correlation_matrix(thermal_space, [np.zeros(3)])


def test_spectrum_csv(tmp_path, rng):
    spectrum = weighted_eig(_random_psd(rng, 4), np.full(4, 0.25))
    path = tmp_path / "spectrum.csv"
    write_spectrum_csv(spectrum.eigenvalues, spectrum.retained_energy, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "k,lambda_k,E_k"
    assert len(lines) == 5
    assert float(lines[-1].split(",")[2]) == pytest.approx(1.0)
    assert float(lines[1].split(",")[1]) == spectrum.eigenvalues[0]
