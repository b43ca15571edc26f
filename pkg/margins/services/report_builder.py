# margins/services/report_builder.py
"""
margins Report Builder
Markdown rendering of audit and sweep results
"""

from typing import List, Optional, Sequence
import logging

from margins.schemas.audit_schema import AuditReport, BreakdownName, SweepReport, outlier_group_name
from margins.schemas.run_schema import RunConfig
from margins.utils.helpers import UNDEFINED, format_decimal, format_pct

logger = logging.getLogger(__name__)

RANKED_ROWS = 10


def _table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> List[str]:
    lines = ["| " + " | ".join(headers) + " |", "|" + "|".join("---" for _ in headers) + "|"]
    lines += ["| " + " | ".join(str(cell) for cell in row) + " |" for row in rows]
    return lines + [""]


def _signed_pct(value: Optional[float]) -> str:
    text = format_pct(value)
    return text if value is None or value < 0 or text == UNDEFINED else f"+{text}"


def _provenance(audit: AuditReport, config: RunConfig) -> List[str]:
    api_version = config.scorer.api_version if config.scorer else "n/a (imported or bundled scores)"
    correction = "with" if audit.significance.continuity_correction else "without"
    lines = ["## Provenance", ""]
    lines += _table(
        ["Item", "Value"],
        [
            ["Config hash", f"`{audit.config_hash}`"],
            ["Seed", str(audit.seed)],
            ["Rows", str(audit.n_rows)],
            ["Models", ", ".join(audit.model_ids)],
            ["Scoring API version", api_version],
            ["Outliers flagged", ", ".join(f"{s}: {n}" for s, n in audit.outlier_counts.items())],
            ["Significance test", f"Pearson chi-square {correction} continuity correction, Bonferroni over "
                                  f"{audit.significance.n_tests} tests, alpha={audit.significance.alpha}"],
            ["Identity-count test", "two-sided Welch statistic, normal approximation"],
        ],
    )
    return lines


def _percentiles(audit: AuditReport) -> List[str]:
    lines = ["## WMSE percentile of outlier groups", ""]
    spaces = list(audit.outlier_counts)
    for model_id in audit.model_ids:
        entries = [e for e in audit.percentiles if e.model_id == model_id]
        if not entries:
            continue
        lines += [f"### {model_id}", ""]
        rows = []
        for entry in entries:
            rows.append(
                [entry.breakdown.value, str(len(entry.results))]
                + [format_pct(entry.percentiles.get(outlier_group_name(s))) for s in spaces]
            )
        lines += _table(["Breakdown", "Pool"] + [f"{s} outliers" for s in spaces], rows)

        for entry in entries:
            if entry.breakdown == BreakdownName.INTERSECTIONAL:
                continue
            lines += [f"Highest WMSE, {entry.breakdown.value} breakdown:", ""]
            ranked = [
                [str(rank + 1), r.group.name, str(r.group_size), format_decimal(r.value)]
                for rank, r in enumerate(entry.results[:RANKED_ROWS])
            ]
            lines += _table(["Rank", "Group", "Size", "WMSE"], ranked)
    return lines


def _frequencies(audit: AuditReport) -> List[str]:
    lines = ["## Toxicity frequencies", ""]
    rows = [[t, format_pct(100.0 * f)] for t, f in audit.toxicity_frequencies.items()]
    return lines + _table(["Type", "Frequency"], rows)


def _gaps(audit: AuditReport) -> List[str]:
    lines = ["## Ground-truth toxicity gaps", ""]
    rows = [
        [g.space, g.toxicity_type, format_decimal(g.mean_in), format_decimal(g.mean_out), _signed_pct(g.relative_pct)]
        for g in audit.toxicity_gaps
    ]
    return lines + _table(["Outliers", "Type", "Outlier mean", "Non-outlier mean", "Difference"], rows)


def _significance(audit: AuditReport) -> List[str]:
    lines = ["## Groups with a significant outlier difference", ""]
    spaces = list(audit.outlier_counts)
    rows = [
        [t] + [str(audit.significance.counts.get(f"{s}/{t}", 0)) for s in spaces]
        for t in audit.toxicity_types
    ]
    return lines + _table(["Type"] + [f"{s} outliers" for s in spaces], rows)


def _mse_tables(audit: AuditReport) -> List[str]:
    lines = ["## Model error by outlier status", ""]
    for space, rows in audit.mse_tables.items():
        lines += [f"### {space} outliers", ""]
        lines += _table(
            ["Model", "Type", "Overall", "Outliers", "Non-outliers", "Increase"],
            [
                [r.model_id, r.toxicity_type, format_decimal(r.overall_mse), format_decimal(r.outlier_mse),
                 format_decimal(r.non_outlier_mse), _signed_pct(r.pct_increase)]
                for r in rows
            ],
        )
    return lines


def _agreement(audit: AuditReport) -> List[str]:
    lines = ["## Unanimous annotations", ""]
    rows = [
        [g.space, g.toxicity_type, format_pct(100.0 * g.unanimous_in), format_pct(100.0 * g.unanimous_out),
         _signed_pct(g.relative_pct)]
        for g in audit.agreement_gaps
    ]
    return lines + _table(["Outliers", "Type", "Outliers unanimous", "Non-outliers unanimous", "Difference"], rows)


def _composition(audit: AuditReport) -> List[str]:
    lines = ["## Outlier composition", ""]
    for summary in audit.composition:
        baseline = summary.rows[0].baseline if summary.rows else 0.0
        lines += [
            f"### {summary.space} outliers",
            "",
            f"Baseline {format_pct(100.0 * baseline)}; {summary.n_majority_outlier} groups are more than half "
            f"outliers, {summary.n_without_outliers} have none.",
            "",
        ]
        lines += _table(
            ["Group", "Members", "Outliers", "Proportion"],
            [
                [r.group, str(r.n_members), str(r.n_outliers),
                 format_pct(None if r.proportion is None else 100.0 * r.proportion)]
                for r in summary.rows
            ],
        )
    return lines


def _identity_counts(audit: AuditReport) -> List[str]:
    lines = ["## Identities mentioned per comment", ""]
    rows = []
    for result in audit.identity_counts:
        p_value = UNDEFINED if result.p_value is None else f"{result.p_value:.3g}"
        rows.append(
            [result.space, format_decimal(result.mean_in, 2), format_decimal(result.mean_out, 2), p_value]
        )
    return lines + _table(["Outliers", "Outlier mean", "Non-outlier mean", "p"], rows)


def _sweep(sweep: Optional[SweepReport]) -> List[str]:
    lines = ["## Contamination sweep", ""]
    if sweep is None:
        return lines + ["Not run.", ""]
    lines += [f"Schedule: {', '.join(f'{c:g}' for c in sweep.schedule)}", ""]
    rows = [
        [c.model_id, c.space, str(len(c.points)), str(c.comparison.below), str(c.comparison.above),
         str(c.comparison.out_of_range)]
        for c in sweep.curves
    ]
    return lines + _table(["Model", "Outliers", "Curve points", "Below", "Above", "Out of range"], rows)


def render_report(audit: AuditReport, sweep: Optional[SweepReport], config: RunConfig) -> str:
    lines = ["# Demographic margins audit", ""]
    for section in (
        _provenance(audit, config),
        _percentiles(audit),
        _frequencies(audit),
        _gaps(audit),
        _significance(audit),
        _mse_tables(audit),
        _agreement(audit),
        _composition(audit),
        _identity_counts(audit),
        _sweep(sweep),
    ):
        lines += section
    if audit.skipped:
        lines += ["## Skipped computations", ""] + [f"- {item}" for item in audit.skipped] + [""]
    logger.debug(f"Rendered report with {len(lines)} lines")
    return "\n".join(lines).rstrip("\n") + "\n"
