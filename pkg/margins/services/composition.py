# margins/services/composition.py
"""
margins Composition Service
Who the outliers are: per-group outlier proportions and identity counts
"""

from pathlib import Path
import logging
import math

import numpy as np
import pandas as pd
from scipy.stats import norm

from margins.schemas.audit_schema import CompositionRow, CompositionSummary, IdentityCountResult
from margins.services.dataset import DatasetTable, FLOAT_FORMAT
from margins.services.outlier_detector import OutlierAssignment, flag_count

logger = logging.getLogger(__name__)


def outlier_proportion_per_group(
    table: DatasetTable,
    assignment: OutlierAssignment,
    space: str,
) -> CompositionSummary:
    flags = assignment.flags(space)
    n = len(table)
    contamination = assignment.results[space].contamination
    baseline = flag_count(contamination, n) / n if n else 0.0

    rows = []
    for group in table.demographic_names:
        members = table.binary_column(group).astype(bool)
        n_members = int(members.sum())
        n_outliers = int(np.sum(members & flags))
        rows.append(
            CompositionRow(
                group=group,
                n_members=n_members,
                n_outliers=n_outliers,
                proportion=n_outliers / n_members if n_members else None,
                baseline=baseline,
            )
        )
    # Empty groups sort last
    rows.sort(key=lambda r: (r.proportion is None, -(r.proportion or 0.0), r.group))

    majority = sum(1 for r in rows if r.proportion is not None and r.proportion > 0.5)
    without = sum(1 for r in rows if r.n_members > 0 and r.n_outliers == 0)
    logger.info(f"{space} composition: {majority} groups >50% outliers, {without} groups without outliers")
    return CompositionSummary(space=space, rows=rows, n_majority_outlier=majority, n_without_outliers=without)


def identity_counts(table: DatasetTable) -> np.ndarray:
    names = table.demographic_names
    if not names:
        return np.zeros(len(table), dtype=np.int64)
    return np.sum([table.binary_column(name).astype(np.int64) for name in names], axis=0)


def welch_normal_p_value(first: np.ndarray, second: np.ndarray) -> float:
    """Two-sided Welch statistic with a standard-normal tail"""
    var_first = first.var(ddof=1) if first.size > 1 else 0.0
    var_second = second.var(ddof=1) if second.size > 1 else 0.0
    standard_error = math.sqrt(var_first / first.size + var_second / second.size)
    difference = float(first.mean() - second.mean())
    if standard_error == 0.0:
        return 1.0 if difference == 0.0 else 0.0
    return float(2.0 * norm.sf(abs(difference) / standard_error))


def mean_identity_count(
    table: DatasetTable,
    assignment: OutlierAssignment,
    space: str,
) -> IdentityCountResult:
    flags = assignment.flags(space)
    counts = identity_counts(table)
    inside, outside = counts[flags], counts[~flags]
    if inside.size == 0 or outside.size == 0:
        logger.warning(f"Identity count comparison undefined for {space}: one side is empty")
        return IdentityCountResult(space=space, n_in=int(inside.size), n_out=int(outside.size))
    return IdentityCountResult(
        space=space,
        n_in=int(inside.size),
        n_out=int(outside.size),
        mean_in=float(inside.mean()),
        mean_out=float(outside.mean()),
        p_value=welch_normal_p_value(inside.astype(np.float64), outside.astype(np.float64)),
    )


def write_plot_data(summary: CompositionSummary, path: Path) -> None:
    """group, proportion, baseline rows for bar-chart rendering"""
    frame = pd.DataFrame(
        {
            "group": [r.group for r in summary.rows],
            "n_members": [r.n_members for r in summary.rows],
            "n_outliers": [r.n_outliers for r in summary.rows],
            "proportion": [r.proportion if r.proportion is not None else np.nan for r in summary.rows],
            "baseline": [r.baseline for r in summary.rows],
        }
    )
    frame.to_csv(Path(path), index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
