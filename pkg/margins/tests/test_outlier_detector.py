# margins/tests/test_outlier_detector.py
"""
margins Outlier Detection Tests
LOF scoring against a direct quadratic implementation, neighborhoods under
ties, exact-count thresholding and persistence
"""

import numpy as np
import pytest

from margins.schemas.outlier_schema import OutlierConfig, OutlierSpace
from margins.services.embedder import EmbeddingMatrix
from margins.services.outlier_detector import (
    LofResult,
    default_n_neighbors,
    detect_outliers,
    flag_count,
    knn,
    load_lof_result,
    lof_scores,
    run_space,
    save_lof_result,
    threshold_by_contamination,
)
from margins.tests.factories import make_table
from margins.utils.validators import AlignmentError, ConfigError, FormatError


def reference_lof(points, k, eps=1e-10):
    """Textbook LOF with tie-inclusive neighborhoods, all pairs at once"""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    distances = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    np.fill_diagonal(distances, np.inf)
    k_distance = np.sort(distances, axis=1)[:, k - 1]
    neighborhoods = [np.flatnonzero(distances[i] <= k_distance[i]) for i in range(n)]
    lrd = np.array(
        [
            len(hood) / (np.maximum(distances[i, hood], k_distance[hood]).sum() + eps)
            for i, hood in enumerate(neighborhoods)
        ]
    )
    lof = np.array([lrd[hood].sum() / (len(hood) * lrd[i] + eps) for i, hood in enumerate(neighborhoods)])
    return -lof


class TestLofScores:
    """Streaming LOF versus the reference"""

    def setup_method(self):
        rng = np.random.default_rng(7)
        cluster = rng.normal(0.0, 1.0, size=(60, 3))
        far = np.array([[8.0, 8.0, 8.0], [-9.0, 0.0, 7.0]])
        self.points = np.vstack([cluster, far])

    @pytest.mark.parametrize("k", [1, 5, 20])
    def test_matches_reference(self, k):
        expected = reference_lof(self.points, k)
        assert np.allclose(lof_scores(self.points, k, block_size=7), expected, rtol=1e-12, atol=1e-12)

    def test_far_points_score_lowest(self):
        scores = lof_scores(self.points, 10)
        assert set(np.argsort(scores)[:2]) == {60, 61}

    def test_block_size_and_threads_do_not_change_scores(self):
        serial = lof_scores(self.points, 10, threads=1, block_size=16)
        pooled = lof_scores(self.points, 10, threads=4, block_size=16)
        assert np.array_equal(serial, pooled)

    def test_duplicates_stay_finite(self):
        points = np.vstack([np.zeros((30, 2)), np.ones((5, 2))])
        scores = lof_scores(points, 3)
        assert np.all(np.isfinite(scores))
        assert np.allclose(scores, reference_lof(points, 3))

    def test_k_must_be_below_n(self):
        with pytest.raises(ConfigError):
            lof_scores(self.points, len(self.points))
        with pytest.raises(ConfigError):
            lof_scores(self.points, 0)


def random_points(seed, dims):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 301))
    points = rng.normal(0.0, 1.0, size=(n, dims))
    points[: n // 10] += rng.uniform(3.0, 6.0, size=dims)
    return points


class TestLofProperties:
    @pytest.mark.parametrize("dims", [2, 24, 64])
    @pytest.mark.parametrize("k", [2, 5, 10])
    def test_random_datasets_match_reference(self, dims, k):
        for seed in range(4):
            points = random_points(100 * dims + 10 * k + seed, dims)
            scores = lof_scores(points, k, block_size=37)
            expected = reference_lof(points, k)

            assert np.allclose(scores, expected, rtol=0.0, atol=1e-9)
            flagged = threshold_by_contamination(scores, 0.1).flags
            assert np.array_equal(flagged, threshold_by_contamination(expected, 0.1).flags)

    @pytest.mark.parametrize("scale", [0.1, 3.0, 10.0])
    def test_scale_invariance(self, scale):
        points = random_points(11, 5)
        scores = lof_scores(points, 5)
        scaled = lof_scores(points * scale, 5)

        assert np.allclose(scaled, scores, rtol=0.0, atol=1e-6)
        assert np.array_equal(
            threshold_by_contamination(scaled, 0.05).flags, threshold_by_contamination(scores, 0.05).flags
        )

    def test_permutation_invariance(self):
        points = random_points(12, 4)
        order = np.random.default_rng(3).permutation(len(points))
        ids = np.arange(len(points))
        scores = lof_scores(points, 6)
        permuted = lof_scores(points[order], 6)

        assert np.allclose(permuted, scores[order], rtol=0.0, atol=1e-12)
        original_flags = threshold_by_contamination(scores, 0.1, ids=ids).flags
        permuted_flags = threshold_by_contamination(permuted, 0.1, ids=ids[order]).flags
        assert np.array_equal(permuted_flags, original_flags[order])

    def test_uniform_grid_interior_is_one(self):
        grid = np.arange(100, dtype=np.float64)[:, None]
        lof = -lof_scores(grid, 5)
        assert np.all((lof[10:90] >= 0.95) & (lof[10:90] <= 1.05))


class TestNeighborhoods:
    def test_ties_are_included(self):
        # point 0 has four neighbors at distance 1
        points = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [5.0, 5.0]])
        hood = knn(points, 2)[0]
        assert hood.k_distance == 1.0
        assert list(hood.neighbors) == [1, 2, 3, 4]

    def test_neighbors_sorted_by_distance_then_index(self):
        points = np.array([[0.0], [3.0], [1.0], [-1.0], [2.0]])
        hood = knn(points, 3)[0]
        assert list(hood.neighbors) == [2, 3, 4]


class TestThresholding:
    """Exact-count flagging"""

    def test_flags_exact_count_with_id_tie_break(self):
        scores = np.array([-1.0, -2.0, -2.0, -2.0, 0.0, -0.5])
        result = threshold_by_contamination(scores, 0.5, ids=[10, 11, 12, 13, 14, 15])

        assert result.n_flagged == 3
        assert list(result.flags) == [False, True, True, True, False, False]
        assert result.threshold == -2.0

    def test_tie_break_prefers_smaller_id(self):
        scores = np.array([-2.0, -2.0, -2.0, 0.0])
        result = threshold_by_contamination(scores, 0.5, ids=[5, 3, 9, 1])
        assert list(result.flags) == [True, True, False, False]

    def test_flag_count_floor(self):
        assert flag_count(0.05, 1000) == 50
        assert flag_count(0.05, 19) == 0
        assert flag_count(0.29, 100) == 29  # 0.29 * 100 is 28.999999999999996

    def test_zero_flags_rejected(self):
        with pytest.raises(ConfigError, match="flags no records"):
            threshold_by_contamination(np.zeros(10), 0.05)

    def test_contamination_bounds(self):
        with pytest.raises(ConfigError):
            threshold_by_contamination(np.zeros(10), 0.6)
        with pytest.raises(ValueError):
            OutlierConfig(space=OutlierSpace.TEXT, contamination=0.0)

    def test_default_neighbors(self):
        assert default_n_neighbors(100) == 20
        assert default_n_neighbors(20) == 10
        assert default_n_neighbors(8) == 7
        assert default_n_neighbors(50000) == 4000


class TestDetectOutliers:
    """Feature spaces over a table"""

    def setup_method(self):
        # 950 rows over four single-identity profiles (each larger than k) plus 50 identical rare rows
        n_common, n_rare = 950, 50
        groups = ["female", "male", "muslim", "christian", "black", "atheist"]
        demographics = {g: np.zeros(n_common + n_rare) for g in groups}
        for row in range(n_common):
            demographics[groups[row % 4]][row] = 1.0
        for row in range(n_common, n_common + n_rare):
            demographics["atheist"][row] = 1.0
            demographics["muslim"][row] = 1.0
            demographics["black"][row] = 1.0
        self.table = make_table(
            toxicity={"toxicity": np.linspace(0.0, 1.0, n_common + n_rare)},
            demographics=demographics,
        )
        self.rare = np.arange(n_common, n_common + n_rare)

    def test_planted_profile_is_flagged(self):
        config = OutlierConfig(space=OutlierSpace.DEMOGRAPHIC, contamination=0.05, n_neighbors=200)
        result = run_space(self.table, config)

        assert result.n_flagged == 50
        assert set(np.flatnonzero(result.flags)) == set(self.rare)
        assert result.n_neighbors == 200

    def test_disagreement_space_uses_preprocessed_columns(self):
        config = OutlierConfig(space=OutlierSpace.DISAGREEMENT, contamination=0.1, n_neighbors=15)
        result = run_space(self.table, config)
        assert result.n_flagged == 100

    def test_text_space_needs_embeddings(self):
        configs = {OutlierSpace.TEXT: OutlierConfig(space=OutlierSpace.TEXT)}
        with pytest.raises(ConfigError, match="run embed first"):
            detect_outliers(self.table, None, configs)

    def test_misaligned_embeddings(self):
        embeddings = EmbeddingMatrix(np.zeros((3, 2)), source="external")
        configs = {OutlierSpace.TEXT: OutlierConfig(space=OutlierSpace.TEXT)}
        with pytest.raises(AlignmentError):
            detect_outliers(self.table, embeddings, configs)

    def test_spaces_run_in_fixed_order(self):
        configs = {
            OutlierSpace.DISAGREEMENT: OutlierConfig(space=OutlierSpace.DISAGREEMENT, n_neighbors=15),
            OutlierSpace.DEMOGRAPHIC: OutlierConfig(space=OutlierSpace.DEMOGRAPHIC, n_neighbors=200),
        }
        assignment = detect_outliers(self.table, None, configs)
        assert assignment.spaces == ["demographic", "disagreement"]


class TestPersistence:
    def test_save_and_load_keep_scores_exactly(self, tmp_path):
        scores = np.array([-1.0000000000000002, -3.14159265358979, 0.1, -1e-300])
        config = OutlierConfig(space=OutlierSpace.DEMOGRAPHIC, contamination=0.5, n_neighbors=2)
        result = threshold_by_contamination(scores, 0.5, ids=[2, 4, 6, 8], config=config)
        result.n_neighbors = 2
        path = tmp_path / "outliers_demographic.csv"
        save_lof_result(result, path)
        loaded = load_lof_result(path)

        assert np.array_equal(loaded.scores, result.scores)
        assert np.array_equal(loaded.flags, result.flags)
        assert list(loaded.ids) == [2, 4, 6, 8]
        assert loaded.threshold == result.threshold
        assert loaded.config == config
        assert loaded.space == "demographic"

    def test_missing_sidecar(self, tmp_path):
        result = LofResult(np.arange(2), np.zeros(2), np.array([True, False]), 0.0, 0.5)
        path = tmp_path / "o.csv"
        save_lof_result(result, path)
        (tmp_path / "o.csv.json").unlink()
        with pytest.raises(FormatError):
            load_lof_result(path)
