# margins/services/sweep.py
"""
margins Contamination Sweep Service
Re-threshold fixed LOF scores across a contamination schedule, trace the
outlier group's WMSE against group size and compare demographic groups to it
"""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence
import logging

import numpy as np
import pandas as pd

from margins.schemas.audit_schema import (
    CurveComparison,
    CurveVerdict,
    GroupKind,
    GroupSpec,
    GroupVerdict,
    SweepPoint,
    WmseResult,
    outlier_group_name,
)
from margins.schemas.outlier_schema import OutlierConfig, OutlierSpace
from margins.services.auditor import wmse
from margins.services.dataset import DatasetTable, FLOAT_FORMAT
from margins.services.embedder import EmbeddingMatrix
from margins.services.outlier_detector import (
    LofResult,
    OutlierAssignment,
    default_n_neighbors,
    feature_matrix,
    flag_count,
    flag_lowest,
    lof_scores,
)
from margins.utils.validators import AnalysisError, ConfigError

logger = logging.getLogger(__name__)


def normalize_schedule(values: Sequence[float], percent: bool = True) -> List[float]:
    """Convert to fractions, reject anything outside (0, 0.5], sort ascending"""
    fractions = sorted({float(v) / 100.0 if percent else float(v) for v in values})
    if not fractions:
        raise ConfigError("contamination schedule is empty", field="schedule")
    for fraction in fractions:
        if not (0.0 < fraction <= 0.5):
            raise ConfigError(f"contamination {fraction:g} is outside (0, 0.5]", field="schedule")
    return fractions


def contamination_sweep(
    table: DatasetTable,
    space: OutlierSpace,
    schedule: Sequence[float],
    model_ids: Sequence[str],
    toxicity_types: Optional[Sequence[str]] = None,
    embeddings: Optional[EmbeddingMatrix] = None,
    k: Optional[int] = None,
    scores: Optional[LofResult] = None,
    threads: int = 1,
) -> List[SweepPoint]:
    """
    WMSE of the outlier group at each contamination level. LOF scores come
    from ``scores`` when given and are computed once otherwise; only the
    threshold varies along the schedule.
    """
    types = list(toxicity_types) if toxicity_types is not None else table.toxicity_names
    n = len(table)
    if scores is not None:
        if not np.array_equal(scores.ids, table.ids):
            raise ConfigError("stored LOF scores are not aligned with the dataset", field="scores")
        values = scores.scores
    else:
        k = k or default_n_neighbors(n)
        values = lof_scores(feature_matrix(table, space, embeddings), k, threads=threads)

    group = GroupSpec(name=outlier_group_name(space.value), kind=GroupKind.OUTLIER, members=[space.value])

    def evaluate(contamination: float) -> Optional[SweepPoint]:
        m = flag_count(contamination, n)
        if m == 0:
            logger.warning(f"Sweep point c={contamination:g} flags no records out of {n}; skipped")
            return None
        flags = flag_lowest(values, table.ids, m)
        result = LofResult(
            table.ids, values, flags, float(values[flags].max()), contamination,
            OutlierConfig(space=space, contamination=contamination, n_neighbors=k),
        )
        assignment = OutlierAssignment(table.ids, {space.value: result})
        try:
            point_wmse = wmse(table, group, model_ids, types, assignment)
        except AnalysisError as e:
            logger.warning(f"Sweep point c={contamination:g} skipped: {e.message}")
            return None
        return SweepPoint(contamination=contamination, group_size=m, wmse=point_wmse)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(evaluate, schedule))
    else:
        points = [evaluate(c) for c in schedule]

    curve = sorted((p for p in points if p is not None), key=lambda p: (p.group_size, p.contamination))
    logger.info(f"{space.value} sweep: {len(curve)} of {len(schedule)} points")
    return curve


def groups_below_curve(curve: Sequence[SweepPoint], results: Sequence[WmseResult]) -> CurveComparison:
    """Linear interpolation of the curve at each group's size; on the curve counts as above"""
    sizes: List[int] = []
    values: List[float] = []
    for point in sorted(curve, key=lambda p: (p.group_size, p.contamination)):
        if sizes and point.group_size == sizes[-1]:
            continue
        sizes.append(point.group_size)
        values.append(point.wmse.value)

    verdicts = []
    for result in results:
        size = result.group_size
        if len(sizes) < 2 or size < sizes[0] or size > sizes[-1]:
            verdicts.append(
                GroupVerdict(group=result.group.name, size=size, wmse=result.value, verdict=CurveVerdict.OUT_OF_RANGE)
            )
            continue
        curve_value = float(np.interp(size, sizes, values))
        verdict = CurveVerdict.BELOW if result.value < curve_value else CurveVerdict.ABOVE
        verdicts.append(
            GroupVerdict(
                group=result.group.name, size=size, wmse=result.value, curve_value=curve_value, verdict=verdict
            )
        )

    return CurveComparison(
        below=sum(1 for v in verdicts if v.verdict == CurveVerdict.BELOW),
        above=sum(1 for v in verdicts if v.verdict == CurveVerdict.ABOVE),
        out_of_range=sum(1 for v in verdicts if v.verdict == CurveVerdict.OUT_OF_RANGE),
        verdicts=verdicts,
    )


def write_curve(curve: Sequence[SweepPoint], path: Path) -> None:
    frame = pd.DataFrame(
        {
            "contamination": [p.contamination for p in curve],
            "group_size": [p.group_size for p in curve],
            "wmse": [p.wmse.value for p in curve],
        }
    )
    frame.to_csv(Path(path), index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_verdicts(comparison: CurveComparison, path: Path) -> None:
    frame = pd.DataFrame(
        {
            "group": [v.group for v in comparison.verdicts],
            "size": [v.size for v in comparison.verdicts],
            "wmse": [v.wmse for v in comparison.verdicts],
            "curve_value": [v.curve_value if v.curve_value is not None else np.nan for v in comparison.verdicts],
            "verdict": [v.verdict.value for v in comparison.verdicts],
        }
    )
    frame.to_csv(Path(path), index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
