import unittest
import sys
import os

import numpy as np

# Add the repository root to the path to import the asmfs package
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from asmfs.similarity import (
    DistanceRow,
    SimilarityMatrix,
    initial_similarity,
    projected_distance_row,
    raw_distance_row,
    row_objective,
    solve_row,
    solve_row_fixed_gamma,
    update_similarity,
)
from asmfs.synthetic import oracle_simplex_qp
from shared.data_model import MultiModalDataset
from shared.exceptions import NeighborCountError


def _row(distances, candidates=None):
    distances = np.asarray(distances, dtype=float)
    if candidates is None:
        candidates = np.arange(1, distances.shape[0] + 1)
    return DistanceRow(index=0, candidates=np.asarray(candidates), distances=distances)


def _random_dataset(rng, n=12, d=4, M=2):
    labels = np.array([1, -1] * (n // 2))
    return MultiModalDataset(
        modalities=[rng.normal(size=(d, n)) for _ in range(M)],
        labels=labels,
        modality_names=[f"m{m}" for m in range(M)],
        feature_names=[f"f{i}" for i in range(d)],
    )


def _dataset(modalities, labels):
    modalities = [np.asarray(X, dtype=float) for X in modalities]
    return MultiModalDataset(
        modalities=modalities,
        labels=np.asarray(labels),
        modality_names=[f"m{m}" for m in range(len(modalities))],
        feature_names=[f"f{i}" for i in range(modalities[0].shape[0])],
    )


class TestDistanceRows(unittest.TestCase):
    """Test suite for projected and raw within-class distances"""

    def test_zero_map_gives_zero_distances(self):
        """W = 0 projects every subject to the origin"""
        dataset = _random_dataset(np.random.default_rng(1))
        W = np.zeros((dataset.n_features, dataset.n_modalities))
        for i in range(dataset.n_subjects):
            np.testing.assert_array_equal(projected_distance_row(dataset, W, i).distances, 0.0)

    def test_coordinate_projection(self):
        """w = e1 maps (1,9) and (4,0) to 1 and 4, a squared distance of 9"""
        dataset = _dataset([[[1.0, 4.0, 0.0], [9.0, 0.0, 0.0]]], [1, 1, -1])
        row = projected_distance_row(dataset, np.array([[1.0], [0.0]]), 0)
        np.testing.assert_array_equal(row.candidates, [1])
        np.testing.assert_allclose(row.distances, [9.0])

    def test_projected_matches_double_loop(self):
        """Distances equal sum_m (w_m^T x_i - w_m^T x_k)^2 computed subject by subject"""
        rng = np.random.default_rng(21)
        for _ in range(20):
            dataset = _random_dataset(rng, n=6, d=3, M=int(rng.integers(1, 4)))
            W = rng.normal(size=(3, dataset.n_modalities))
            for i in range(dataset.n_subjects):
                row = projected_distance_row(dataset, W, i)
                for k, distance in zip(row.candidates, row.distances):
                    expected = 0.0
                    for m, X in enumerate(dataset.modalities):
                        expected += (sum(W[f, m] * X[f, i] for f in range(3)) - sum(W[f, m] * X[f, k] for f in range(3))) ** 2
                    self.assertAlmostEqual(distance, expected, places=10)

    def test_raw_identical_subjects(self):
        """Two identical subjects are at distance 0"""
        dataset = _dataset([[[2.0, 2.0, 5.0, 1.0], [3.0, 3.0, 0.0, 1.0]]], [1, 1, -1, -1])
        self.assertEqual(raw_distance_row(dataset, 0).distances[0], 0.0)

    def test_raw_distances_add_over_modalities(self):
        """Per-modality squared distances 3 and 4 add up to 7"""
        first = [[0.0, 1.0, 0.0], [0.0, np.sqrt(2.0), 0.0]]
        second = [[0.0, 2.0, 0.0], [0.0, 0.0, 0.0]]
        dataset = _dataset([first, second], [1, 1, -1])
        self.assertAlmostEqual(raw_distance_row(dataset, 0).distances[0], 7.0, places=12)

    def test_raw_matches_naive_loop(self):
        """Distances equal sum over modalities and features of squared differences"""
        rng = np.random.default_rng(22)
        dataset = _random_dataset(rng, n=8, d=3, M=2)
        for i in range(dataset.n_subjects):
            row = raw_distance_row(dataset, i)
            for k, distance in zip(row.candidates, row.distances):
                expected = sum(
                    (X[f, i] - X[f, k]) ** 2 for X in dataset.modalities for f in range(dataset.n_features)
                )
                self.assertAlmostEqual(distance, expected, places=10)


class TestSolveRow(unittest.TestCase):
    """Test suite for the closed-form similarity row"""

    def test_hand_example(self):
        """Distances (1,2,3,4) with K=2 keep the two nearest with weights 2/3 and 1/3"""
        solution = solve_row(_row([1.0, 2.0, 3.0, 4.0]), 2)
        np.testing.assert_allclose(solution.weights, [2.0 / 3.0, 1.0 / 3.0, 0.0, 0.0], atol=1e-12)
        self.assertAlmostEqual(solution.gamma, 1.5)

    def test_equal_distances_fall_back_to_uniform(self):
        """When the first K+1 distances tie the row is uniform over the K nearest"""
        solution = solve_row(_row([2.0, 2.0, 2.0, 5.0]), 2)
        self.assertEqual(solution.gamma, 0.0)
        np.testing.assert_allclose(solution.weights, [0.5, 0.5, 0.0, 0.0])

    def test_ties_broken_by_subject_index(self):
        """Among tied distances the lower subject index is kept"""
        solution = solve_row(_row([1.0, 1.0, 1.0, 3.0], candidates=[9, 4, 7, 2]), 1)
        # K=1 with d_(1) = d_(2): uniform limit on the single nearest, subject 4
        np.testing.assert_allclose(solution.weights, [0.0, 1.0, 0.0, 0.0])

    def test_too_few_candidates(self):
        """K=3 needs at least 4 candidates"""
        with self.assertRaises(NeighborCountError):
            solve_row(_row([1.0, 2.0, 3.0]), 3)

    def test_four_candidate_example(self):
        """Distances (1,2,4,8) with K=2 give gamma 2.5, eta 0.8 and weights (0.6, 0.4, 0, 0)"""
        solution = solve_row(_row([1.0, 2.0, 4.0, 8.0]), 2)
        self.assertAlmostEqual(solution.gamma, 2.5)
        self.assertAlmostEqual(solution.eta, 0.8)
        np.testing.assert_allclose(solution.weights, [0.6, 0.4, 0.0, 0.0], atol=1e-12)

    def test_kkt_conditions(self):
        """Positive weights sit at eta - d/(2 gamma); zero weights have eta - d/(2 gamma) <= 0"""
        rng = np.random.default_rng(31)
        for _ in range(500):
            K = int(rng.integers(1, 10))
            row = _row(rng.uniform(0.0, 10.0, size=int(rng.integers(K + 1, 40))))
            solution = solve_row(row, K)
            if solution.gamma == 0.0:
                continue
            free = solution.eta - row.distances / (2.0 * solution.gamma)
            tolerance = 1e-9 * max(1.0, abs(solution.eta))
            positive = solution.weights > 0.0
            np.testing.assert_allclose(solution.weights[positive], free[positive], rtol=0, atol=tolerance)
            self.assertTrue(np.all(free[~positive] <= tolerance))

    def test_scaling_distances_scales_gamma(self):
        """Multiplying a row's distances by c multiplies gamma by c and keeps the weights"""
        rng = np.random.default_rng(32)
        for _ in range(100):
            K = int(rng.integers(1, 6))
            distances = rng.uniform(0.0, 10.0, size=int(rng.integers(K + 1, 20)))
            base = solve_row(_row(distances), K)
            for c in (0.01, 3.0, 1000.0):
                scaled = solve_row(_row(c * distances), K)
                self.assertAlmostEqual(scaled.gamma, c * base.gamma, delta=1e-12 * max(1.0, c * base.gamma))
                np.testing.assert_allclose(scaled.weights, base.weights, rtol=0, atol=1e-12)

    def test_matches_simplex_projection_oracle(self):
        """The closed form equals the sort-based simplex projection on random rows"""
        rng = np.random.default_rng(2024)
        for _ in range(200):
            K = int(rng.choice([1, 3, 5, 7, 9]))
            p = int(rng.integers(K + 1, 51))
            row = _row(rng.uniform(0.0, 10.0, size=p))
            solution = solve_row(row, K)
            expected = oracle_simplex_qp(row.distances, solution.gamma)
            np.testing.assert_allclose(solution.weights, expected, atol=1e-8)
            self.assertLessEqual(
                row_objective(row.distances, solution.weights, solution.gamma),
                row_objective(row.distances, expected, solution.gamma) + 1e-8,
            )


class TestHeldGamma(unittest.TestCase):
    """Test suite for rows solved with gamma held from an earlier update"""

    def test_own_gamma_reproduces_closed_form(self):
        """Holding the gamma the closed form derived gives back the same row"""
        rng = np.random.default_rng(41)
        for _ in range(200):
            K = int(rng.integers(1, 8))
            row = _row(rng.uniform(0.0, 10.0, size=int(rng.integers(K + 1, 30))))
            closed = solve_row(row, K)
            if closed.gamma == 0.0:
                continue
            held = solve_row_fixed_gamma(row, K, closed.gamma)
            np.testing.assert_allclose(held.weights, closed.weights, rtol=0, atol=1e-10)
            self.assertAlmostEqual(held.eta, closed.eta, delta=1e-9 * max(1.0, abs(closed.eta)))

    def test_optimal_over_the_nearest_k(self):
        """For any gamma the row is the simplex-QP optimum over the K nearest candidates"""
        rng = np.random.default_rng(42)
        for _ in range(200):
            K = int(rng.integers(1, 8))
            row = _row(rng.uniform(0.0, 10.0, size=int(rng.integers(K + 1, 30))))
            gamma = float(rng.uniform(0.01, 50.0))
            held = solve_row_fixed_gamma(row, K, gamma)
            nearest = np.lexsort((row.candidates, row.distances))[:K]
            np.testing.assert_allclose(held.weights[nearest], oracle_simplex_qp(row.distances[nearest], gamma), atol=1e-10)
            self.assertAlmostEqual(held.weights.sum(), 1.0, places=12)
            self.assertLessEqual(np.count_nonzero(held.weights), K)
            # the restricted optimum is no worse than the closed-form row at the same gamma
            closed = solve_row(row, K)
            self.assertLessEqual(
                row_objective(row.distances, held.weights, gamma),
                row_objective(row.distances, closed.weights, gamma) + 1e-10,
            )

    def test_zero_gamma_puts_all_weight_on_nearest(self):
        """Without the quadratic term the nearest candidate takes the whole row"""
        held = solve_row_fixed_gamma(_row([3.0, 1.0, 2.0]), 2, 0.0)
        np.testing.assert_array_equal(held.weights, [0.0, 1.0, 0.0])


class TestSimilarityMatrix(unittest.TestCase):
    """Test suite for the assembled similarity matrix"""

    def test_structure_on_random_datasets(self):
        """Rows sum to 1, entries lie in [0,1], cross-class entries vanish and support is at most K"""
        rng = np.random.default_rng(5)
        for trial in range(50):
            dataset = _random_dataset(rng, n=int(rng.integers(4, 12)) * 2)
            K = int(rng.integers(1, 4))
            W = rng.normal(size=(dataset.n_features, dataset.n_modalities))
            S = update_similarity(dataset, W, K).values
            np.testing.assert_allclose(S.sum(axis=1), 1.0, atol=1e-9)
            self.assertTrue(np.all(S >= 0.0) and np.all(S <= 1.0))
            cross = dataset.labels[:, None] != dataset.labels[None, :]
            self.assertTrue(np.all(S[cross] == 0.0))
            self.assertTrue(np.all(np.diag(S) == 0.0))
            self.assertTrue(np.all(np.count_nonzero(S, axis=1) <= K))

    def test_rows_use_projected_distances(self):
        """Each row of S is solve_row applied to the projected distance row"""
        rng = np.random.default_rng(11)
        dataset = _random_dataset(rng)
        W = rng.normal(size=(4, 2))
        S = update_similarity(dataset, W, 2)
        for i in range(dataset.n_subjects):
            row = projected_distance_row(dataset, W, i)
            solution = solve_row(row, 2)
            np.testing.assert_allclose(S.values[i, row.candidates], solution.weights)
            self.assertAlmostEqual(S.gammas[i], solution.gamma)

    def test_clamped_k_is_recorded(self):
        """Three subjects per class with K=5 clamp to K=1 and log a warning"""
        rng = np.random.default_rng(3)
        dataset = _random_dataset(rng, n=6)
        with self.assertLogs("asmfs.similarity", level="WARNING") as logs:
            S = initial_similarity(dataset, 5)
        self.assertTrue(any("Clamped K" in line for line in logs.output))
        np.testing.assert_array_equal(S.effective_k, [1] * 6)
        np.testing.assert_allclose(S.values.sum(axis=1), 1.0)

    def test_strict_mode_raises(self):
        """With clamping disabled a short class raises"""
        dataset = _random_dataset(np.random.default_rng(3), n=6)
        with self.assertRaises(NeighborCountError):
            initial_similarity(dataset, 5, clamp_k=False)

    def test_subject_without_peers_keeps_empty_row(self):
        """A class of one leaves that subject's row empty with a warning instead of failing"""
        rng = np.random.default_rng(4)
        dataset = _dataset([rng.normal(size=(3, 5))], [1, 1, 1, 1, -1])
        with self.assertLogs("asmfs.similarity", level="WARNING") as logs:
            S = initial_similarity(dataset, 1)
        self.assertTrue(any("without a within-class peer" in line for line in logs.output))
        np.testing.assert_array_equal(S.values[4], 0.0)
        self.assertEqual(S.effective_k[4], 0)
        self.assertEqual(S.gammas[4], 0.0)
        np.testing.assert_allclose(S.values[:4].sum(axis=1), 1.0)
        with self.assertRaises(NeighborCountError):
            initial_similarity(dataset, 1, clamp_k=False)

    def test_held_gammas_are_kept(self):
        """With gammas given, every row is solved for its held gamma and the gammas come back unchanged"""
        rng = np.random.default_rng(12)
        dataset = _random_dataset(rng)
        W = rng.normal(size=(4, 2))
        gammas = rng.uniform(0.1, 5.0, size=dataset.n_subjects)
        S = update_similarity(dataset, W, 2, gammas=gammas)
        np.testing.assert_allclose(S.gammas, gammas)
        for i in range(dataset.n_subjects):
            row = projected_distance_row(dataset, W, i)
            np.testing.assert_allclose(S.values[i, row.candidates], solve_row_fixed_gamma(row, 2, gammas[i]).weights)

    def test_dense_and_triplet_frames(self):
        """The dense frame is n x n with string column labels; triplets list the nonzero entries"""
        S = initial_similarity(_random_dataset(np.random.default_rng(9)), 2)
        dense = S.dense_frame()
        self.assertEqual(dense.shape, (12, 12))
        self.assertEqual(list(dense.columns), [str(j) for j in range(12)])
        np.testing.assert_array_equal(dense.to_numpy(), S.values)
        triplets = S.triplet_frame()
        self.assertEqual(list(triplets.columns), ["i", "j", "s_ij"])
        self.assertEqual(len(triplets), np.count_nonzero(S.values))

    def test_serialisation_round_trip(self):
        """to_dict / from_dict restores values, gammas and K"""
        dataset = _random_dataset(np.random.default_rng(8))
        S = initial_similarity(dataset, 2)
        restored = SimilarityMatrix.from_dict(S.to_dict())
        np.testing.assert_array_equal(restored.values, S.values)
        np.testing.assert_array_equal(restored.gammas, S.gammas)
        self.assertEqual(restored.neighbor_count, 2)


if __name__ == '__main__':
    unittest.main()
