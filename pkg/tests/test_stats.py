"""Per-verb moments, semantic grouping, and diversity measures."""

import numpy as np
import pytest

from vdrp.core import Rng
from vdrp.errors import (DataError, DegenerateInputWarning, DimensionError,
                         ParameterError)
from vdrp.stats import (diversity_score, group_average, interclass_divergence,
                        medoid_index, per_verb_moments, semantic_groups)


class TestMoments:
    def test_matches_numpy_oracle(self):
        rng = Rng(10)
        x = rng.normal((40, 6))
        ids = rng.integers(0, 5, 40)
        means, variances, counts = per_verb_moments(x, ids, 5)
        for v in range(5):
            rows = x[ids == v]
            assert counts[v] == rows.shape[0]
            assert np.allclose(means[v], rows.mean(axis=0), atol=1e-12)
            # population variance, not the sample estimate
            assert np.allclose(variances[v], rows.var(axis=0, ddof=0), atol=1e-12)

    def test_empty_verb_warns_and_zeroes(self):
        x = np.ones((3, 2))
        with pytest.warns(DegenerateInputWarning):
            means, variances, counts = per_verb_moments(x, [0, 0, 2], 4)
        assert counts.tolist() == [2, 0, 1, 0]
        assert np.all(means[1] == 0.0) and np.all(variances[3] == 0.0)

    def test_single_instance_zero_variance(self):
        means, variances, counts = per_verb_moments([[2.0, 3.0]], [0], 1)
        assert np.all(variances == 0.0)
        assert means[0].tolist() == [2.0, 3.0]

    def test_bad_ids(self):
        with pytest.raises(DataError):
            per_verb_moments(np.ones((2, 2)), [0, 5], 3)
        with pytest.raises(DimensionError):
            per_verb_moments(np.ones((2, 2)), [0], 3)


class TestGroups:
    def test_self_comes_first(self):
        labels = Rng(3).normal((6, 8))
        groups = semantic_groups(labels, 3)
        assert np.array_equal(groups[:, 0], np.arange(6))

    def test_nearest_neighbours_by_cosine(self):
        # verbs 0 and 1 aligned, verb 2 orthogonal
        labels = np.array([[1.0, 0.0], [2.0, 0.01], [0.0, 1.0]])
        groups = semantic_groups(labels, 2)
        assert groups[0].tolist() == [0, 1]
        assert groups[1].tolist() == [1, 0]

    def test_tie_breaks_to_lower_id(self):
        labels = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
        groups = semantic_groups(labels, 3)
        assert groups[3].tolist() == [3, 1, 2]

    def test_group_size_bounds(self):
        with pytest.raises(ParameterError):
            semantic_groups(np.ones((3, 2)), 4)
        with pytest.raises(ParameterError):
            semantic_groups(np.ones((3, 2)), 0)


class TestGroupAverage:
    def test_plain_average(self):
        vals = np.array([[1.0], [3.0], [5.0]])
        groups = np.array([[0, 1], [1, 2], [2, 0]])
        out = group_average(vals, groups)
        assert out.ravel().tolist() == [2.0, 4.0, 3.0]

    def test_zero_count_member_skipped(self):
        vals = np.array([[1.0], [100.0], [5.0]])
        groups = np.array([[0, 1], [1, 0], [2, 1]])
        out = group_average(vals, groups, counts=[1, 0, 1])
        assert out.ravel().tolist() == [1.0, 1.0, 5.0]

    def test_all_empty_group_warns(self):
        vals = np.array([[1.0], [2.0]])
        groups = np.array([[1, 1], [0, 0]])
        with pytest.warns(DegenerateInputWarning):
            out = group_average(vals, groups, counts=[1, 0])
        assert out.ravel().tolist() == [0.0, 1.0]

    def test_member_range_checked(self):
        with pytest.raises(DataError):
            group_average(np.ones((2, 1)), np.array([[0, 5], [1, 0]]))


class TestDiversity:
    def test_identical_rows_zero(self):
        x = np.tile([1.0, 2.0], (4, 1))
        assert diversity_score(x) < 1e-12

    def test_orthogonal_rows(self):
        assert abs(diversity_score(np.eye(3)) - 1.0) < 1e-12

    def test_opposite_rows(self):
        x = np.array([[1.0, 0.0], [-1.0, 0.0]])
        assert abs(diversity_score(x) - 2.0) < 1e-12

    def test_matches_pairwise_oracle(self):
        x = Rng(4).normal((7, 5))
        total, n = 0.0, 0
        for i in range(7):
            for j in range(i + 1, 7):
                ci = x[i] @ x[j] / (np.linalg.norm(x[i]) * np.linalg.norm(x[j]))
                total += 1.0 - ci
                n += 1
        assert abs(diversity_score(x) - total / n) < 1e-12

    def test_single_row_warns(self):
        with pytest.warns(DegenerateInputWarning):
            assert diversity_score(np.ones((1, 3))) == 0.0

    def test_interclass_alias(self):
        x = Rng(8).normal((5, 4))
        assert interclass_divergence(x) == diversity_score(x)


class TestMedoid:
    def test_central_row_wins(self):
        x = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
        # row 1 is closest to both others in angle
        assert medoid_index(x) == 1

    def test_tie_keeps_lowest(self):
        x = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        assert medoid_index(x) == 0

    def test_empty_rejected(self):
        with pytest.raises(DimensionError):
            medoid_index(np.empty((0, 3)))
