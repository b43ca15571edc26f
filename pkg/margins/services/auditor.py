# margins/services/auditor.py
"""
margins Audit Service
Group enumeration, MSE and frequency statistics, the WMSE disparity score,
percentile rankings, toxicity gaps and chi-square significance counting
"""

from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.stats import chi2_contingency

from margins.schemas.audit_schema import (
    AgreementGap,
    BreakdownName,
    BreakdownPercentiles,
    BreakdownSchema,
    DEFAULT_MIN_SUPPORT,
    GroupKind,
    GroupSpec,
    MARGINALIZED_UNIONS,
    MseRow,
    SignificanceResult,
    SignificanceSummary,
    SkippedTerm,
    ToxicityGap,
    WmseResult,
    WmseTerm,
    outlier_group_name,
)
from margins.services.dataset import DatasetTable
from margins.services.outlier_detector import OutlierAssignment
from margins.utils.validators import (
    AnalysisError,
    ConfigError,
    DegenerateGroupError,
    DomainError,
    EmptyResultError,
)

logger = logging.getLogger(__name__)

MSE_EPSILON = 1e-12


class MseSplit(NamedTuple):
    mse_in: float
    mse_out: float
    n_in: int
    n_out: int


# Groups

def enumerate_groups(
    table: DatasetTable,
    schema_name: str,
    min_support: int = DEFAULT_MIN_SUPPORT,
    unions: Optional[Mapping[str, Sequence[str]]] = None,
    assignment: Optional[OutlierAssignment] = None,
) -> BreakdownSchema:
    """Build the groups of one breakdown schema over the table's demographic channels"""
    try:
        name = BreakdownName(schema_name)
    except ValueError:
        raise ConfigError(f"unknown breakdown schema '{schema_name}'", field="schema_name")

    demographics = table.demographic_names
    groups: List[GroupSpec] = []

    if name == BreakdownName.BINARY:
        groups = [GroupSpec(name=g, kind=GroupKind.BINARY, members=[g]) for g in demographics]

    elif name == BreakdownName.INTERSECTIONAL:
        for first, second in combinations(demographics, 2):
            support = int(np.sum(table.binary_column(first) & table.binary_column(second)))
            if support >= min_support:
                groups.append(
                    GroupSpec(
                        name=f"{first} & {second}",
                        kind=GroupKind.INTERSECTION,
                        members=[first, second],
                        min_support=min_support,
                    )
                )
        logger.info(f"Intersectional breakdown: {len(groups)} pairs with support >= {min_support}")

    elif name == BreakdownName.MARGINALIZED:
        available = set(demographics)
        for union_name, members in (unions or MARGINALIZED_UNIONS).items():
            present = [m for m in members if m in available]
            if len(present) < len(members):
                logger.warning(f"Union '{union_name}': channels {sorted(set(members) - available)} not in dataset")
            if len(present) < 2:
                logger.warning(f"Union '{union_name}' dropped: fewer than two member channels present")
                continue
            groups.append(GroupSpec(name=union_name, kind=GroupKind.UNION, members=present))

    else:
        if assignment is None:
            raise ConfigError("the outlier breakdown needs detected outliers; run detect first", field="assignment")
        groups = [
            GroupSpec(name=outlier_group_name(space), kind=GroupKind.OUTLIER, members=[space])
            for space in assignment.spaces
        ]

    if not groups:
        raise EmptyResultError(f"breakdown '{name.value}' has no groups for this dataset", field="schema_name")
    return BreakdownSchema(name=name, groups=groups)


def group_mask(
    table: DatasetTable,
    group: GroupSpec,
    assignment: Optional[OutlierAssignment] = None,
) -> np.ndarray:
    if group.kind == GroupKind.OUTLIER:
        if assignment is None:
            raise ConfigError(f"group '{group.name}' needs outlier flags", field=group.name)
        return assignment.flags(group.members[0]).astype(bool)
    columns = [table.binary_column(member).astype(bool) for member in group.members]
    if group.kind == GroupKind.UNION:
        return np.logical_or.reduce(columns)
    return np.logical_and.reduce(columns)


def _score_and_truth(table: DatasetTable, model_id: str, toxicity_type: str) -> Tuple[np.ndarray, np.ndarray]:
    channel = table.score_channel(model_id, toxicity_type)
    if channel is None:
        raise ConfigError(f"model '{model_id}' has no scores for '{toxicity_type}'", field=toxicity_type)
    return table.values[channel.name], table.values[toxicity_type]


# Statistics

def mse_split(
    scores: np.ndarray, truth: np.ndarray, mask: np.ndarray, group_name: str
) -> MseSplit:
    """MSE inside and outside a mask, ignoring rows without a score"""
    scored = ~np.isnan(scores)
    inside = mask & scored
    outside = ~mask & scored
    n_in, n_out = int(inside.sum()), int(outside.sum())
    if n_in == 0:
        raise DegenerateGroupError(group_name, "group")
    if n_out == 0:
        raise DegenerateGroupError(group_name, "complement")
    squared = (scores - truth) ** 2
    return MseSplit(float(squared[inside].mean()), float(squared[outside].mean()), n_in, n_out)


def mse(
    table: DatasetTable,
    group: GroupSpec,
    model_id: str,
    toxicity_type: str,
    assignment: Optional[OutlierAssignment] = None,
) -> MseSplit:
    scores, truth = _score_and_truth(table, model_id, toxicity_type)
    return mse_split(scores, truth, group_mask(table, group, assignment), group.name)


def relative_mse_diff(mse_in: float, mse_out: float) -> Optional[float]:
    """(mse_in - mse_out) / mse_out; None when the complement MSE is ~0"""
    if mse_out <= MSE_EPSILON:
        return None
    return (mse_in - mse_out) / mse_out


def freq(
    table: DatasetTable,
    group: GroupSpec,
    toxicity_type: str,
    assignment: Optional[OutlierAssignment] = None,
) -> float:
    """Share of group rows whose binary label for the type is positive"""
    mask = group_mask(table, group, assignment)
    if not mask.any():
        raise DegenerateGroupError(group.name, "group")
    return float(table.binary_column(toxicity_type)[mask].mean())


def wmse(
    table: DatasetTable,
    group: GroupSpec,
    model_ids: Sequence[str],
    toxicity_types: Sequence[str],
    assignment: Optional[OutlierAssignment] = None,
) -> WmseResult:
    """
    Frequency-weighted sum of relative MSE differences between a group and
    its complement, over every (model, type) score channel. Terms whose
    complement MSE is ~0, or whose group or complement has no scored rows,
    are skipped and reported.
    """
    mask = group_mask(table, group, assignment)
    if not mask.any():
        raise DegenerateGroupError(group.name, "group")
    if mask.all():
        raise DegenerateGroupError(group.name, "complement")

    terms: Dict[str, WmseTerm] = {}
    skipped: List[SkippedTerm] = []
    for model_id in model_ids:
        for toxicity_type in toxicity_types:
            scores, truth = _score_and_truth(table, model_id, toxicity_type)
            try:
                split = mse_split(scores, truth, mask, group.name)
            except DegenerateGroupError as e:
                skipped.append(SkippedTerm(model_id=model_id, toxicity_type=toxicity_type, reason=f"empty {e.side}"))
                continue
            relative = relative_mse_diff(split.mse_in, split.mse_out)
            if relative is None:
                skipped.append(
                    SkippedTerm(model_id=model_id, toxicity_type=toxicity_type, reason="complement MSE is zero")
                )
                continue
            terms[f"{model_id}/{toxicity_type}"] = WmseTerm(
                model_id=model_id,
                toxicity_type=toxicity_type,
                freq=float(table.binary_column(toxicity_type)[mask].mean()),
                mse_in=split.mse_in,
                mse_out=split.mse_out,
                relative_diff=relative,
            )

    if skipped:
        logger.warning(f"WMSE for '{group.name}': skipped {[f'{s.model_id}/{s.toxicity_type}' for s in skipped]}")
    if not terms:
        raise EmptyResultError(f"every WMSE term for '{group.name}' was skipped", field=group.name)

    value = 0.0
    for term in terms.values():
        value += term.weighted
    return WmseResult(
        group=group,
        value=value,
        group_size=int(mask.sum()),
        per_type_terms=terms,
        skipped_types=skipped,
    )


def percentile_rank(target: WmseResult, pool: Sequence[WmseResult]) -> float:
    """Share of the pool with WMSE at or below the target's, in percent"""
    if not pool:
        raise EmptyResultError("percentile pool is empty")
    at_or_below = sum(1 for result in pool if result.value <= target.value)
    return 100.0 * at_or_below / len(pool)


def toxicity_gap(
    table: DatasetTable,
    assignment: OutlierAssignment,
    space: str,
    toxicity_type: str,
) -> ToxicityGap:
    """Mean decimal ground truth of outliers versus the rest"""
    flags = assignment.flags(space)
    truth = table.values[toxicity_type]
    if not flags.any():
        raise DegenerateGroupError(outlier_group_name(space), "group")
    if flags.all():
        raise DegenerateGroupError(outlier_group_name(space), "complement")
    mean_in, mean_out = float(truth[flags].mean()), float(truth[~flags].mean())
    relative = None
    if mean_out > MSE_EPSILON:
        relative = (mean_in - mean_out) / mean_out * 100.0
    else:
        logger.warning(f"Toxicity gap undefined for {space}/{toxicity_type}: non-outlier mean is zero")
    return ToxicityGap(
        space=space, toxicity_type=toxicity_type, mean_in=mean_in, mean_out=mean_out, relative_pct=relative
    )


def agreement_gap(
    table: DatasetTable,
    assignment: OutlierAssignment,
    space: str,
    toxicity_type: str,
) -> AgreementGap:
    """Share of unanimous annotations among outliers versus the rest"""
    if toxicity_type not in table.disagreement_flags:
        raise ConfigError(f"disagreement not computed for '{toxicity_type}'; preprocess first", field=toxicity_type)
    flags = assignment.flags(space)
    if not flags.any() or flags.all():
        raise DegenerateGroupError(outlier_group_name(space), "group" if not flags.any() else "complement")
    unanimous = table.disagreement_flags[toxicity_type] == 0
    share_in, share_out = float(unanimous[flags].mean()), float(unanimous[~flags].mean())
    relative = (share_in - share_out) / share_out * 100.0 if share_out > MSE_EPSILON else None
    return AgreementGap(
        space=space, toxicity_type=toxicity_type, unanimous_in=share_in, unanimous_out=share_out,
        relative_pct=relative,
    )


def toxicity_frequencies(table: DatasetTable, toxicity_types: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """Dataset-wide positive-label rate of each toxicity type"""
    types = list(toxicity_types) if toxicity_types is not None else table.toxicity_names
    if len(table) == 0:
        return {t: 0.0 for t in types}
    return {t: float(table.binary_column(t).mean()) for t in types}


# Significance

def chi_square_homogeneity(
    a_pos: int, a_neg: int, b_pos: int, b_neg: int, correction: bool = False
) -> Optional[Tuple[float, float]]:
    """
    Pearson chi-square on a 2x2 table, df=1. Returns None when a row or
    column sum is zero, since the test is undefined there.
    """
    counts = np.array([[a_pos, a_neg], [b_pos, b_neg]], dtype=np.float64)
    if np.any(counts < 0):
        raise DomainError(f"contingency counts must be non-negative, got {counts.tolist()}", field="counts")
    if np.any(counts.sum(axis=0) == 0) or np.any(counts.sum(axis=1) == 0):
        return None
    chi2, p_value, _, _ = chi2_contingency(counts, correction=correction)
    return float(chi2), float(min(1.0, max(0.0, p_value)))


def count_significant_groups(
    table: DatasetTable,
    assignment: OutlierAssignment,
    spaces: Sequence[str],
    toxicity_types: Sequence[str],
    alpha: float = 0.05,
    correction: bool = False,
) -> SignificanceSummary:
    """
    Within each demographic group, test whether outliers and non-outliers
    differ in their binary label rate; Bonferroni over all defined tests.
    """
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}", field="alpha")

    results: List[SignificanceResult] = []
    for group_name in table.demographic_names:
        group = GroupSpec(name=group_name, kind=GroupKind.BINARY, members=[group_name])
        members = table.binary_column(group_name).astype(bool)
        for space in spaces:
            flags = assignment.flags(space)
            inside, outside = members & flags, members & ~flags
            for toxicity_type in toxicity_types:
                label = table.binary_column(toxicity_type).astype(bool)
                counts = (
                    int(np.sum(inside & label)),
                    int(np.sum(inside & ~label)),
                    int(np.sum(outside & label)),
                    int(np.sum(outside & ~label)),
                )
                outcome = chi_square_homogeneity(*counts, correction=correction)
                results.append(
                    SignificanceResult(
                        group=group,
                        toxicity_type=toxicity_type,
                        outlier_space=space,
                        counts=counts,
                        chi2=outcome[0] if outcome else None,
                        p_value=outcome[1] if outcome else None,
                    )
                )

    n_tests = sum(1 for r in results if r.is_defined)
    undefined = len(results) - n_tests
    if undefined:
        logger.warning(f"{undefined} of {len(results)} chi-square tests undefined (zero marginal); not counted")

    counts: Dict[str, int] = {f"{s}/{t}": 0 for s in spaces for t in toxicity_types}
    if n_tests:
        cutoff = alpha / n_tests
        for result in results:
            if result.is_defined and result.p_value < cutoff:
                result.significant_after_bonferroni = True
                counts[f"{result.outlier_space}/{result.toxicity_type}"] += 1

    return SignificanceSummary(
        alpha=alpha, n_tests=n_tests, counts=counts, results=results, continuity_correction=correction
    )


# Tables

def mse_table(
    table: DatasetTable,
    assignment: OutlierAssignment,
    space: str,
    model_ids: Sequence[str],
    toxicity_types: Sequence[str],
) -> List[MseRow]:
    """Overall, outlier and non-outlier MSE per (model, type), largest increase first"""
    flags = assignment.flags(space)
    group_name = outlier_group_name(space)
    rows = []
    for model_id in model_ids:
        for toxicity_type in toxicity_types:
            if table.score_channel(model_id, toxicity_type) is None:
                continue
            scores, truth = _score_and_truth(table, model_id, toxicity_type)
            split = mse_split(scores, truth, flags, group_name)
            scored = ~np.isnan(scores)
            overall = float(((scores[scored] - truth[scored]) ** 2).mean())
            relative = relative_mse_diff(split.mse_in, split.mse_out)
            rows.append(
                MseRow(
                    model_id=model_id,
                    toxicity_type=toxicity_type,
                    overall_mse=overall,
                    outlier_mse=split.mse_in,
                    non_outlier_mse=split.mse_out,
                    pct_increase=None if relative is None else relative * 100.0,
                )
            )
    rows.sort(key=lambda r: (r.pct_increase is None, -(r.pct_increase or 0.0)))
    return rows


def _wmse_or_none(
    table: DatasetTable,
    group: GroupSpec,
    model_id: str,
    toxicity_types: Sequence[str],
    assignment: OutlierAssignment,
) -> Optional[WmseResult]:
    try:
        return wmse(table, group, [model_id], toxicity_types, assignment)
    except AnalysisError as e:
        logger.warning(f"Group '{group.name}' left out of the ranking for {model_id}: {e.message}")
        return None


def breakdown_percentiles(
    table: DatasetTable,
    assignment: OutlierAssignment,
    breakdowns: Sequence[str] = ("marginalized", "binary", "intersectional"),
    model_ids: Optional[Sequence[str]] = None,
    toxicity_types: Optional[Sequence[str]] = None,
    min_support: int = DEFAULT_MIN_SUPPORT,
    unions: Optional[Mapping[str, Sequence[str]]] = None,
    threads: int = 1,
) -> List[BreakdownPercentiles]:
    """
    Rank the outlier groups among each breakdown's groups, per model.

    The comparison pool for a breakdown is its own groups plus one group
    per detected outlier space.
    """
    model_ids = list(model_ids) if model_ids is not None else table.model_ids
    if not model_ids:
        raise ConfigError("no model scores in the dataset; run score first", field="model_ids")
    types = list(toxicity_types) if toxicity_types is not None else table.toxicity_names
    outlier_groups = enumerate_groups(table, "outlier", assignment=assignment).groups

    output = []
    for model_id in model_ids:
        usable = [t for t in types if table.score_channel(model_id, t) is not None]
        if not usable:
            logger.warning(f"Model '{model_id}' scores none of {types}; skipped")
            continue
        for breakdown in breakdowns:
            try:
                schema = enumerate_groups(table, breakdown, min_support, unions, assignment)
            except EmptyResultError as e:
                logger.warning(f"{model_id}/{breakdown} skipped: {e.message}")
                continue
            pool_groups = list(schema.groups) + list(outlier_groups)

            def evaluate(group: GroupSpec) -> Optional[WmseResult]:
                return _wmse_or_none(table, group, model_id, usable, assignment)

            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    evaluated = list(pool.map(evaluate, pool_groups))
            else:
                evaluated = [evaluate(group) for group in pool_groups]

            results = [r for r in evaluated if r is not None]
            skipped = [g.name for g, r in zip(pool_groups, evaluated) if r is None]
            percentiles = {
                r.group.name: percentile_rank(r, results)
                for r in results
                if r.group.kind == GroupKind.OUTLIER
            }
            results.sort(key=lambda r: (-r.value, r.group.name))
            output.append(
                BreakdownPercentiles(
                    model_id=model_id,
                    breakdown=schema.name,
                    results=results,
                    percentiles=percentiles,
                    skipped_groups=skipped,
                )
            )
            logger.info(
                f"{model_id}/{schema.name.value}: pool={len(results)}, "
                + ", ".join(f"{name}={pct:.1f}%" for name, pct in percentiles.items())
            )
    return output
