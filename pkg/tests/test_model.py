# tests/test_model.py
"""
Unit tests for model configuration, count tables, estimates and the simulator
"""

import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

# Add the project root to path
sys.path.append(str(Path(__file__).parent.parent))

from src.core.corpus import Corpus  # noqa: E402
from src.core.exceptions import ConfigError, DataError  # noqa: E402
from src.core.model import (  # noqa: E402
    CountTables,
    ModelConfig,
    ModelParams,
    average_params,
    estimate_params,
    log_delta_ratio,
    log_joint,
    sample_dirichlet,
    simulate,
)


def small_corpus():
    return Corpus.from_units(
        [
            ([0, 1, 1], [0, 1, 2], [0, 1, 1]),
            ([2, 2], [2, 3], [0, 0]),
        ],
        num_sequences=4,
        num_objects=3,
        num_bins=2,
    )


class TestModelConfig:

    def test_default_alpha(self):
        """Test alpha defaults to 50/K"""
        assert ModelConfig(K=10).alpha == pytest.approx(5.0)
        assert ModelConfig(K=10, alpha=0.3).alpha == 0.3

    def test_components(self):
        """Test component flags and canonical ordering"""
        cfg = ModelConfig(K=2, components={"time", "sequence"})

        assert not cfg.uses_object
        assert cfg.uses_time
        assert cfg.component_list == ("sequence", "time")

    def test_sequence_component_required(self):
        """Test sub-models without the sequence component"""
        with pytest.raises(ConfigError):
            ModelConfig(K=2, components={"object", "time"})

    def test_invalid_values(self):
        """Test non-positive sizes and priors"""
        with pytest.raises(ConfigError):
            ModelConfig(K=0)
        with pytest.raises(ConfigError):
            ModelConfig(K=2, beta=0.0)
        with pytest.raises(ConfigError):
            ModelConfig(K=2, components={"sequence", "weather"})


class TestCountTables:

    def test_from_assignments(self):
        """Test tabulation of assignments"""
        units = small_corpus().flatten()
        counts = CountTables.from_assignments(units, [0, 1, 1, 0, 1], K=2, S=4, O=3, B=2)

        assert counts.n_mk.tolist() == [[1, 2], [1, 1]]
        assert counts.n_ks.tolist() == [[1, 0, 1, 0], [0, 1, 1, 1]]
        assert counts.n_k.tolist() == [2, 3]
        assert counts.n_m.tolist() == [3, 2]
        counts.check_invariants(units)

    def test_conservation(self):
        """Test every table sums to the number of units"""
        units = small_corpus().flatten()
        counts = CountTables.from_assignments(units, [1, 1, 0, 0, 1], K=2, S=4, O=3, B=2)

        assert counts.grand_totals() == (5, 5, 5, 5)

    def test_invariant_violation(self):
        """Test corrupted tables are detected"""
        units = small_corpus().flatten()
        counts = CountTables.from_assignments(units, [0, 1, 1, 0, 1], K=2, S=4, O=3, B=2)
        counts.n_ks[0, 0] -= 1
        counts.n_ks[0, 1] += 1

        with pytest.raises(DataError):
            counts.check_invariants(units)

    def test_assignment_out_of_range(self):
        """Test assignments outside [0, K)"""
        units = small_corpus().flatten()
        with pytest.raises(DataError):
            CountTables.from_assignments(units, [0, 1, 2, 0, 1], K=2, S=4, O=3, B=2)


class TestEstimates:

    def test_estimate_params_direct_substitution(self):
        """Test posterior-mean estimates on a single-factor table"""
        corpus = Corpus.from_units([([0, 0, 0, 0], [0, 0, 0, 1], [0, 0, 0, 0])], 2, 1, 1)
        counts = CountTables.from_assignments(corpus.flatten(), [0, 0, 0, 0], K=1, S=2, O=1, B=1)
        cfg = ModelConfig(K=1, beta=0.01)

        params = estimate_params(counts, cfg)

        assert params.phi[0].tolist() == pytest.approx([3.01 / 4.02, 1.01 / 4.02])
        assert params.theta[0, 0] == pytest.approx(1.0)

    def test_estimates_strictly_positive(self):
        """Test every estimated entry is positive and rows are stochastic"""
        units = small_corpus().flatten()
        counts = CountTables.from_assignments(units, [0, 0, 0, 0, 0], K=3, S=4, O=3, B=2)

        params = estimate_params(counts, ModelConfig(K=3))

        assert params.is_strictly_positive()
        assert np.allclose(params.phi.sum(axis=1), 1.0)
        assert (params.M, params.K, params.S, params.O, params.B) == (2, 3, 4, 3, 2)

    def test_params_read_only(self):
        """Test parameter matrices cannot be modified"""
        params = ModelParams(np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))

        with pytest.raises(ValueError):
            params.phi[0, 0] = 0.5

    def test_params_validation(self):
        """Test rows must be distributions"""
        with pytest.raises(DataError):
            ModelParams(np.array([[0.5]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))
        with pytest.raises(DataError):
            ModelParams(np.array([[1.0]]), np.array([[1.5, -0.5]]), np.array([[1.0]]), np.array([[1.0]]))
        with pytest.raises(DataError):
            ModelParams(np.array([[0.5, 0.5]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))

    def test_average_params(self):
        """Test element-wise averaging"""
        a = ModelParams(np.array([[1.0, 0.0]]), np.eye(2), np.eye(2), np.eye(2))
        b = ModelParams(np.array([[0.0, 1.0]]), np.eye(2), np.eye(2), np.eye(2))

        averaged = average_params([a, b])

        assert averaged.theta.tolist() == [[0.5, 0.5]]
        with pytest.raises(DataError):
            average_params([])


class TestLogJoint:

    def test_single_count_ratio(self):
        """Test one observation in a two-cell row contributes log(1/2)"""
        assert log_delta_ratio(np.array([[1, 0]]), 0.3) == pytest.approx(np.log(0.5))

    def test_one_cell_rows_cancel(self):
        """Test a single-column table contributes nothing"""
        assert log_delta_ratio(np.array([[4], [2]]), 0.01) == pytest.approx(0.0, abs=1e-12)

    def test_two_counts_in_one_cell(self):
        """Test the rising-factorial form for two observations"""
        a = 0.5
        expected = np.log((a * (a + 1)) / (2 * a * (2 * a + 1)))
        assert log_delta_ratio(np.array([[2, 0]]), a) == pytest.approx(expected)

    def test_matches_exact_urn_product(self):
        """Test against sequential Polya urn draws in exact rational arithmetic"""
        table = [[2, 0, 1], [1, 3, 0], [0, 0, 4]]
        prior = Fraction(3, 10)

        def rising(start, n):
            product = Fraction(1)
            for i in range(n):
                product *= start + i
            return product

        probability = Fraction(1)
        for row in table:
            for count in row:
                probability *= rising(prior, count)
            probability /= rising(len(row) * prior, sum(row))

        assert log_delta_ratio(np.array(table), 0.3) == pytest.approx(math.log(probability), rel=1e-12)

    def test_object_disabled_matches_single_object(self):
        """Test dropping the object component equals the full model with one object"""
        corpus = Corpus.from_units([([0, 0, 0], [0, 1, 2], [0, 1, 1]), ([0, 0], [2, 3], [0, 0])], 4, 1, 2)
        counts = CountTables.from_assignments(corpus.flatten(), [0, 1, 1, 0, 1], K=2, S=4, O=1, B=2)

        full = log_joint(counts, ModelConfig(K=2))
        no_object = log_joint(counts, ModelConfig(K=2, components={"sequence", "time"}))

        assert full == pytest.approx(no_object)

    def test_disabled_components_are_left_out(self):
        """Test a sequence-only joint ignores object and time tables"""
        units = small_corpus().flatten()
        counts = CountTables.from_assignments(units, [0, 1, 1, 0, 1], K=2, S=4, O=3, B=2)
        cfg = ModelConfig(K=2, components={"sequence"})

        expected = log_delta_ratio(counts.n_mk, cfg.alpha) + log_delta_ratio(counts.n_ks, cfg.beta)

        assert log_joint(counts, cfg) == pytest.approx(expected)


class TestSimulator:

    def test_sample_dirichlet(self):
        """Test Dirichlet rows with a tiny concentration stay normalized"""
        rng = np.random.Generator(np.random.PCG64(3))
        draws = sample_dirichlet(rng, 0.01, 50, 4)

        assert draws.shape == (4, 50)
        assert np.allclose(draws.sum(axis=1), 1.0)
        assert np.isfinite(draws).all()

    def test_simulate_shapes(self):
        """Test the simulated corpus and its ground truth"""
        cfg = ModelConfig(K=3, beta=0.1, eta=0.1, gamma=0.1)

        result = simulate(cfg, S=30, O=5, B=24, M=40, units_per_traj=6, seed=11)

        assert result.corpus.num_trajectories == 40
        assert result.corpus.num_units == 240
        assert result.num_units == 240
        assert result.truth.phi.shape == (3, 30)
        assert result.truth.psi.shape == (3, 5)
        assert result.truth.theta.shape == (40, 3)
        assert result.corpus.scheme.bin_hours == 2
        result.corpus.validate()

    def test_simulate_deterministic(self):
        """Test the same seed reproduces the same draws"""
        cfg = ModelConfig(K=2)
        first = simulate(cfg, S=10, O=3, B=4, M=5, units_per_traj=3, seed=5)
        second = simulate(cfg, S=10, O=3, B=4, M=5, units_per_traj=3, seed=5)

        assert np.array_equal(first.assignments, second.assignments)
        assert np.array_equal(first.truth.phi, second.truth.phi)
        assert np.array_equal(first.corpus.flatten().sequences, second.corpus.flatten().sequences)

    def test_disabled_components_collapse(self):
        """Test sub-models simulate a single object and bin"""
        cfg = ModelConfig(K=2, components={"sequence"})

        result = simulate(cfg, S=10, O=3, B=4, M=5, units_per_traj=3, seed=5)

        assert result.truth.O == 1
        assert result.truth.B == 1
        assert result.corpus.num_objects == 1

    def test_assignments_match_counts(self):
        """Test the ground-truth assignments tabulate consistently"""
        cfg = ModelConfig(K=3)
        result = simulate(cfg, S=12, O=4, B=6, M=8, units_per_traj=5, seed=2)
        units = result.corpus.flatten()

        counts = CountTables.from_assignments(units, result.assignments, 3, 12, 4, 6)

        counts.check_invariants(units)

    def test_single_factor(self):
        """Test K = 1 puts every unit on factor 0"""
        result = simulate(ModelConfig(K=1), S=8, O=3, B=4, M=200, units_per_traj=5, seed=6)

        assert result.num_units == 1000
        assert (result.assignments == 0).all()
        assert np.allclose(result.truth.theta, 1.0)

    @pytest.mark.slow
    def test_empirical_histograms_converge(self):
        """Test per-factor histograms of 10^5 simulated units approach the true rows"""
        cfg = ModelConfig(K=2, beta=0.05, eta=0.1, gamma=0.1)
        result = simulate(cfg, S=10, O=4, B=6, M=10_000, units_per_traj=10, seed=13)
        units = result.corpus.flatten()
        truth = result.truth

        assert result.num_units == 100_000
        for k in range(2):
            mine = result.assignments == k
            tables = ((units.sequences, truth.phi), (units.objects, truth.psi), (units.bins, truth.phi_time))
            for values, rows in tables:
                histogram = np.bincount(values[mine], minlength=rows.shape[1]) / mine.sum()
                assert 0.5 * np.abs(histogram - rows[k]).sum() <= 0.05


class TestExchangeability:

    def test_log_joint_ignores_unit_order(self):
        """Test shuffling trajectories and their units leaves the joint unchanged"""
        cfg = ModelConfig(K=3, alpha=0.4, beta=0.2, eta=0.3, gamma=0.5)
        result = simulate(cfg, S=12, O=4, B=6, M=8, units_per_traj=5, seed=2)
        units = result.corpus.flatten()
        counts = CountTables.from_assignments(units, result.assignments, 3, 12, 4, 6)
        rng = np.random.Generator(np.random.PCG64(7))

        shuffled, z = [], []
        for m in rng.permutation(8):
            trajectory = result.corpus.trajectories[m]
            order = rng.permutation(len(trajectory))
            shuffled.append((trajectory.objects[order], trajectory.sequences[order], trajectory.bins[order]))
            z.extend(result.assignments[m * 5:(m + 1) * 5][order].tolist())
        corpus = Corpus.from_units(shuffled, 12, 4, 6)
        permuted = CountTables.from_assignments(corpus.flatten(), z, 3, 12, 4, 6)

        assert permuted.n_k.tolist() == counts.n_k.tolist()
        assert log_joint(permuted, cfg) == pytest.approx(log_joint(counts, cfg), rel=1e-12)
