# margins/tests/test_composition.py
"""
margins Composition Tests
"""

import numpy as np
import pytest
from scipy.stats import norm

from margins.services.composition import (
    identity_counts,
    mean_identity_count,
    outlier_proportion_per_group,
    welch_normal_p_value,
    write_plot_data,
)
from margins.tests.factories import assignment_from_flags, make_table


class TestOutlierProportions:
    def setup_method(self):
        self.table = make_table(
            toxicity={"toxicity": [0.0] * 8},
            demographics={
                "female": [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
                "muslim": [1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
                "jewish": [0.0] * 8,
            },
        )
        self.assignment = assignment_from_flags(
            self.table, {"demographic": [True, True, True, False, False, False, True, False]}
        )

    def test_rows_sorted_by_proportion_with_empty_groups_last(self):
        summary = outlier_proportion_per_group(self.table, self.assignment, "demographic")

        assert [r.group for r in summary.rows] == ["female", "muslim", "jewish"]
        assert [r.proportion for r in summary.rows] == [0.75, pytest.approx(1 / 3), None]
        assert [r.n_outliers for r in summary.rows] == [3, 1, 0]
        assert all(r.baseline == 0.5 for r in summary.rows)

    def test_summary_counts(self):
        summary = outlier_proportion_per_group(self.table, self.assignment, "demographic")
        assert summary.n_majority_outlier == 1
        assert summary.n_without_outliers == 0

    def test_plot_data(self, tmp_path):
        path = tmp_path / "composition_demographic.csv"
        write_plot_data(outlier_proportion_per_group(self.table, self.assignment, "demographic"), path)
        lines = path.read_text().splitlines()

        assert lines[0] == "group,n_members,n_outliers,proportion,baseline"
        assert lines[1] == "female,4,3,0.75,0.5"
        assert lines[3] == "jewish,0,0,,0.5"


class TestIdentityCounts:
    """Mean number of identities mentioned, outliers versus the rest"""

    def setup_method(self):
        self.table = make_table(
            toxicity={"toxicity": [0.0] * 6},
            demographics={
                "female": [1.0, 1.0, 0.0, 0.0, 1.0, 0.0],
                "muslim": [1.0, 1.0, 0.0, 1.0, 0.0, 0.0],
                "black": [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            },
        )

    def test_counts_per_row(self):
        assert list(identity_counts(self.table)) == [3, 2, 0, 1, 1, 0]

    def test_outliers_mention_more_identities(self):
        assignment = assignment_from_flags(self.table, {"demographic": [True, True, False, False, False, False]})
        result = mean_identity_count(self.table, assignment, "demographic")

        assert (result.n_in, result.n_out) == (2, 4)
        assert result.mean_in == 2.5
        assert result.mean_out == 0.5
        assert result.test == "welch-normal"
        assert 0.0 <= result.p_value < 0.05

    def test_one_sided_split_is_undefined(self):
        assignment = assignment_from_flags(self.table, {"demographic": [False] * 6})
        result = mean_identity_count(self.table, assignment, "demographic")
        assert result.n_in == 0
        assert result.p_value is None

    def test_welch_statistic(self):
        first, second = np.array([1.0, 2.0, 3.0, 4.0]), np.array([0.0, 0.0, 1.0, 1.0])
        # variances 5/3 and 1/3, standard error sqrt(0.5)
        assert welch_normal_p_value(first, second) == pytest.approx(2.0 * norm.sf(2.0 / np.sqrt(0.5)))

    def test_zero_variance(self):
        assert welch_normal_p_value(np.array([2.0, 2.0]), np.array([0.0, 0.0])) == 0.0
        assert welch_normal_p_value(np.array([1.0, 1.0]), np.array([1.0])) == 1.0

    def test_four_identities_against_one(self):
        names = ["female", "muslim", "black", "jewish", "asian", "christian"]
        # flagged rows alternate 3 and 5 identities, the rest 0 and 2
        per_row = [3, 5] * 10 + [0, 2] * 20
        demographics = {
            name: [1.0 if position < count else 0.0 for count in per_row] for position, name in enumerate(names)
        }
        table = make_table(toxicity={"toxicity": [0.0] * 60}, demographics=demographics)
        assignment = assignment_from_flags(table, {"demographic": [True] * 20 + [False] * 40})

        result = mean_identity_count(table, assignment, "demographic")

        assert (result.mean_in, result.mean_out) == (4.0, 1.0)
        assert result.p_value < 1e-6
