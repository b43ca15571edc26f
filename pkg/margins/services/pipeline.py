# margins/services/pipeline.py
"""
margins Pipeline Service
Stage-per-command orchestration with file handoffs through the output directory.
Every stage records its config hash, seed and artifact digests in manifest.json;
downstream stages refuse stale or missing inputs.
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence
import logging

import httpx
import pandas as pd

from margins.clients.scorer_client import RowError, ScorerClient, fetch_scores
from margins.schemas.audit_schema import AuditReport, SweepCurve, SweepReport
from margins.schemas.dataset_schema import SchemaConfig, default_schema_config
from margins.schemas.outlier_schema import OutlierSpace
from margins.schemas.run_schema import RunConfig
from margins.services import auditor, composition, sweep as sweeps
from margins.services.dataset import (
    DatasetTable,
    FLOAT_FORMAT,
    dedup_texts,
    load_canonical,
    load_dataset,
    preprocess,
    save_dataset,
    stratified_sample,
)
from margins.services.embedder import EmbeddingMatrix, embed_corpus, load_embeddings, save_embeddings
from margins.services.outlier_detector import (
    OutlierAssignment,
    detect_outliers,
    load_lof_result,
    save_lof_result,
)
from margins.services.report_builder import render_report
from margins.services.score_store import import_scores
from margins.utils.helpers import read_json, sha256_file, write_json
from margins.utils.logging_utils import stage_timer
from margins.utils.validators import (
    AnalysisError,
    ArtifactMismatchError,
    ConfigError,
    MissingArtifactError,
)

logger = logging.getLogger(__name__)

STAGES = ["ingest", "embed", "score", "detect", "audit", "sweep", "report"]

# What a missing stage means to the user
STAGE_PRODUCTS = {
    "ingest": "dataset",
    "embed": "embeddings",
    "score": "model scores",
    "detect": "outliers",
    "audit": "audit results",
    "sweep": "sweep results",
    "report": "report",
}

DATASET_FILE = "dataset.csv"
SCORED_FILE = "scored.csv"
EMBEDDINGS_FILE = "embeddings.embd"
SCORE_ERRORS_FILE = "score_errors.json"
AUDIT_FILE = "audit.json"
SWEEP_FILE = "sweep.json"
REPORT_FILE = "report.md"
MANIFEST_FILE = "manifest.json"


def outliers_file(space: str) -> str:
    return f"outliers_{space}.csv"


class ArtifactStore:
    """The output directory plus its manifest"""

    def __init__(self, root: Path, config_hash: str, seed: int):
        self.root = Path(root)
        self.config_hash = config_hash
        self.seed = seed

    def path(self, name: str) -> Path:
        return self.root / name

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_FILE

    def manifest(self) -> Dict:
        if not self.manifest_path.exists():
            return {"stages": {}}
        return read_json(self.manifest_path)

    def has(self, stage: str) -> bool:
        return stage in self.manifest()["stages"]

    def record(
        self,
        stage: str,
        artifacts: List[str],
        inputs: Sequence[str] = (),
        meta: Optional[Dict] = None,
    ) -> None:
        """Write the stage entry; inputs are the upstream stages whose artifacts it read"""
        manifest = self.manifest()
        entry = {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "artifacts": {name: sha256_file(self.path(name)) for name in sorted(artifacts)},
            "inputs": {name: manifest["stages"][name]["artifacts"] for name in sorted(set(inputs))},
        }
        if meta:
            entry["meta"] = meta
        manifest["stages"][stage] = entry
        write_json(self.manifest_path, manifest)

    def require(self, stage: str) -> Dict:
        """The manifest entry of an upstream stage, verified against disk, config and its own inputs"""
        stages = self.manifest()["stages"]
        entry = stages.get(stage)
        if entry is None:
            raise MissingArtifactError(STAGE_PRODUCTS[stage], stage)
        if entry["config_hash"] != self.config_hash:
            raise ArtifactMismatchError(
                f"{stage} artifacts were produced under config {entry['config_hash'][:12]}, "
                f"current config is {self.config_hash[:12]}: run {stage} again",
                field=stage,
                code="CONFIG_HASH_MISMATCH",
            )
        for name, digest in entry["artifacts"].items():
            path = self.path(name)
            if not path.exists():
                raise MissingArtifactError(name, stage)
            if sha256_file(path) != digest:
                raise ArtifactMismatchError(
                    f"{name} changed since {stage} wrote it: run {stage} again", field=name, code="DIGEST_MISMATCH"
                )
        for upstream, digests in entry.get("inputs", {}).items():
            current = stages.get(upstream)
            if current is None or current["artifacts"] != digests:
                raise ArtifactMismatchError(
                    f"{stage} artifacts were built from an older {upstream} output: run {stage} again",
                    field=stage,
                    code="STALE_INPUT",
                )
        return entry


class AuditPipeline:
    """Runs the stages of one RunConfig against its output directory"""

    def __init__(self, config: RunConfig, transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        self.config_hash = config.config_hash()
        self.store = ArtifactStore(Path(config.output_dir), self.config_hash, config.seed)
        self.transport = transport

    def _context(self) -> Dict:
        return {"config_hash": self.config_hash, "seed": self.config.seed, "threads": self.config.threads}

    def _prepare(self) -> None:
        self.config.check_paths()
        self.store.root.mkdir(parents=True, exist_ok=True)

    # Table access

    def _schema(self) -> SchemaConfig:
        if self.config.schema_path is None:
            return default_schema_config()
        try:
            return SchemaConfig(**read_json(Path(self.config.schema_path)))
        except ValueError as e:
            raise ConfigError(f"invalid schema config {self.config.schema_path}: {e}", field="schema_path")

    def _dataset(self) -> DatasetTable:
        self.store.require("ingest")
        return load_canonical(self.store.path(DATASET_FILE))

    def _table_stage(self) -> str:
        """The stage whose table audit and sweep read"""
        return "score" if self.store.has("score") else "ingest"

    def _scored_dataset(self) -> DatasetTable:
        if self._table_stage() == "score":
            self.store.require("score")
            table = load_canonical(self.store.path(SCORED_FILE))
        else:
            table = self._dataset()
        if not table.model_ids:
            raise MissingArtifactError(STAGE_PRODUCTS["score"], "score")
        return table

    def _assignment(self, table: DatasetTable, spaces: List[OutlierSpace]) -> OutlierAssignment:
        entry = self.store.require("detect")
        results = {}
        for space in spaces:
            name = outliers_file(space.value)
            if name not in entry["artifacts"]:
                raise MissingArtifactError(f"{space.value} {STAGE_PRODUCTS['detect']}", "detect")
            results[space.value] = load_lof_result(self.store.path(name))
        return OutlierAssignment(table.ids, results)

    def _toxicity_types(self, table: DatasetTable) -> List[str]:
        types = self.config.toxicity_types or table.toxicity_names
        unknown = [t for t in types if t not in table.toxicity_names]
        if unknown:
            raise ConfigError(f"unknown toxicity types {unknown}", field="toxicity_types")
        return list(types)

    # Stages

    def ingest(self) -> DatasetTable:
        self._prepare()
        with stage_timer("ingest", self._context()) as stage:
            table = preprocess(load_dataset(Path(self.config.dataset_path), self._schema()))
            if self.config.sample_fraction is not None:
                table = stratified_sample(table, self.config.sample_fraction, self.config.seed)
            if self.config.dedup_text:
                table = dedup_texts(table)
            save_dataset(table, self.store.path(DATASET_FILE))
            artifacts = [DATASET_FILE, DATASET_FILE + ".schema.json"]
            self.store.record("ingest", artifacts)
            stage.update({"rows": len(table), "artifacts": artifacts})
        return table

    def embed(self) -> EmbeddingMatrix:
        self._prepare()
        with stage_timer("embed", self._context()) as stage:
            table = self._dataset()
            settings = self.config.embedding
            if settings.external_path:
                matrix = load_embeddings(Path(settings.external_path), expected_rows=len(table))
            else:
                matrix = embed_corpus(table, settings.dim, self.config.seed, settings.min_df, self.config.threads)
            save_embeddings(matrix, self.store.path(EMBEDDINGS_FILE))
            self.store.record(
                "embed", [EMBEDDINGS_FILE], inputs=["ingest"], meta={"source": matrix.source, "seed": matrix.seed}
            )
            stage.update({"rows": matrix.n_rows, "dim": matrix.dim, "source": matrix.source})
        return matrix

    def score(self) -> DatasetTable:
        self._prepare()
        with stage_timer("score", self._context()) as stage:
            table = self._dataset()
            if not self.config.score_imports and self.config.scorer is None:
                raise ConfigError("no scorer endpoint or score_imports configured", field="scorer")
            for entry in self.config.score_imports:
                table = import_scores(table, Path(entry.path), entry.model_id)

            errors: List[RowError] = []
            if self.config.scorer is not None:
                with ScorerClient(self.config.scorer, transport=self.transport) as client:
                    table = fetch_scores(
                        table, self.config.scorer, Path(self.config.score_cache), client=client, errors=errors
                    )

            save_dataset(table, self.store.path(SCORED_FILE))
            write_json(
                self.store.path(SCORE_ERRORS_FILE),
                sorted((e.to_dict() for e in errors), key=lambda e: e["id"]),
            )
            artifacts = [SCORED_FILE, SCORED_FILE + ".schema.json", SCORE_ERRORS_FILE]
            self.store.record("score", artifacts, inputs=["ingest"])
            stage.update({"models": table.model_ids, "row_errors": len(errors)})
        return table

    def detect(self) -> OutlierAssignment:
        self._prepare()
        spaces = self.config.active_spaces
        with stage_timer("detect", self._context()) as stage:
            table = self._dataset()
            embeddings, inputs = None, ["ingest"]
            if OutlierSpace.TEXT in spaces:
                provenance = self.store.require("embed").get("meta", {})
                embeddings = load_embeddings(
                    self.store.path(EMBEDDINGS_FILE),
                    expected_rows=len(table),
                    source=provenance.get("source", "external"),
                    seed=provenance.get("seed"),
                )
                inputs.append("embed")
            configs = {space: self.config.outlier_config(space) for space in spaces}
            assignment = detect_outliers(table, embeddings, configs, threads=self.config.threads)

            artifacts = []
            for space, result in assignment.results.items():
                save_lof_result(result, self.store.path(outliers_file(space)))
                artifacts += [outliers_file(space), outliers_file(space) + ".json"]
            self.store.record("detect", artifacts, inputs=inputs)
            stage.update({"flagged": {s: r.n_flagged for s, r in assignment.results.items()}})
        return assignment

    def audit(self) -> AuditReport:
        self._prepare()
        spaces = self.config.active_spaces
        with stage_timer("audit", self._context()) as stage:
            self.store.require("detect")
            table = self._scored_dataset()
            assignment = self._assignment(table, spaces)
            types = self._toxicity_types(table)
            model_ids = table.model_ids
            skipped: List[str] = []

            percentiles = auditor.breakdown_percentiles(
                table,
                assignment,
                breakdowns=[b.value for b in self.config.breakdown.schemas],
                model_ids=model_ids,
                toxicity_types=types,
                min_support=self.config.breakdown.min_support,
                unions=self.config.breakdown.unions,
                threads=self.config.threads,
            )

            gaps, agreement, mse_tables, compositions, identities = [], [], {}, [], []
            for space in assignment.spaces:
                for toxicity_type in types:
                    try:
                        gaps.append(auditor.toxicity_gap(table, assignment, space, toxicity_type))
                        agreement.append(auditor.agreement_gap(table, assignment, space, toxicity_type))
                    except AnalysisError as e:
                        skipped.append(f"gap {space}/{toxicity_type}: {e.message}")
                try:
                    mse_tables[space] = auditor.mse_table(table, assignment, space, model_ids, types)
                except AnalysisError as e:
                    skipped.append(f"mse table {space}: {e.message}")
                compositions.append(composition.outlier_proportion_per_group(table, assignment, space))
                identities.append(composition.mean_identity_count(table, assignment, space))

            significance = auditor.count_significant_groups(
                table, assignment, assignment.spaces, types, self.config.alpha, self.config.chi2_correction
            )

            report = AuditReport(
                config_hash=self.config_hash,
                seed=self.config.seed,
                n_rows=len(table),
                model_ids=model_ids,
                toxicity_types=types,
                outlier_counts={s: r.n_flagged for s, r in assignment.results.items()},
                toxicity_frequencies=auditor.toxicity_frequencies(table, types),
                percentiles=percentiles,
                toxicity_gaps=gaps,
                significance=significance,
                mse_tables=mse_tables,
                agreement_gaps=agreement,
                composition=compositions,
                identity_counts=identities,
                skipped=skipped,
            )
            write_json(self.store.path(AUDIT_FILE), report.model_dump(mode="json"))
            artifacts = [AUDIT_FILE] + self._write_audit_tables(report)
            self.store.record("audit", artifacts, inputs=["detect", self._table_stage()])
            stage.update({"artifacts": len(artifacts), "skipped": len(skipped)})
        return report

    def _write_audit_tables(self, report: AuditReport) -> List[str]:
        """Flat CSVs for external plotting"""
        written = []
        for entry in report.percentiles:
            name = f"wmse_{entry.model_id}_{entry.breakdown.value}.csv"
            pd.DataFrame(
                {
                    "group": [r.group.name for r in entry.results],
                    "kind": [r.group.kind.value for r in entry.results],
                    "size": [r.group_size for r in entry.results],
                    "wmse": [r.value for r in entry.results],
                }
            ).to_csv(self.store.path(name), index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
            written.append(name)

        for space, rows in report.mse_tables.items():
            name = f"mse_{space}.csv"
            pd.DataFrame([row.model_dump() for row in rows]).to_csv(
                self.store.path(name), index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n"
            )
            written.append(name)

        if report.toxicity_gaps:
            pd.DataFrame([gap.model_dump() for gap in report.toxicity_gaps]).to_csv(
                self.store.path("toxicity_gaps.csv"), index=False, float_format=FLOAT_FORMAT, na_rep="",
                lineterminator="\n",
            )
            written.append("toxicity_gaps.csv")

        for summary in report.composition:
            name = f"composition_{summary.space}.csv"
            composition.write_plot_data(summary, self.store.path(name))
            written.append(name)
        return written

    def sweep(self) -> SweepReport:
        self._prepare()
        spaces = list(self.config.sweep.spaces)
        with stage_timer("sweep", self._context()) as stage:
            self.store.require("detect")
            table = self._scored_dataset()
            assignment = self._assignment(table, spaces)
            types = self._toxicity_types(table)
            schedule = sweeps.normalize_schedule(self.config.sweep.schedule, self.config.sweep.percent)
            binary_groups = auditor.enumerate_groups(table, "binary").groups

            curves, artifacts = [], [SWEEP_FILE]
            for model_id in table.model_ids:
                usable = [t for t in types if table.score_channel(model_id, t) is not None]
                if not usable:
                    logger.warning(f"Model '{model_id}' scores none of {types}; no sweep")
                    continue
                group_results = []
                for group in binary_groups:
                    try:
                        group_results.append(auditor.wmse(table, group, [model_id], usable, assignment))
                    except AnalysisError as e:
                        logger.warning(f"Sweep comparison leaves out '{group.name}' for {model_id}: {e.message}")

                for space in spaces:
                    stored = assignment.results[space.value]
                    curve = sweeps.contamination_sweep(
                        table, space, schedule, [model_id], usable,
                        k=stored.n_neighbors, scores=stored, threads=self.config.threads,
                    )
                    comparison = sweeps.groups_below_curve(curve, group_results)
                    curves.append(SweepCurve(model_id=model_id, space=space.value, points=curve, comparison=comparison))

                    curve_name = f"sweep_curve_{model_id}_{space.value}.csv"
                    verdict_name = f"sweep_verdicts_{model_id}_{space.value}.csv"
                    sweeps.write_curve(curve, self.store.path(curve_name))
                    sweeps.write_verdicts(comparison, self.store.path(verdict_name))
                    artifacts += [curve_name, verdict_name]

            report = SweepReport(
                config_hash=self.config_hash, seed=self.config.seed, schedule=schedule, curves=curves
            )
            write_json(self.store.path(SWEEP_FILE), report.model_dump(mode="json"))
            self.store.record("sweep", artifacts, inputs=["detect", self._table_stage()])
            stage.update({"curves": len(curves)})
        return report

    def report(self) -> Path:
        self._prepare()
        with stage_timer("report", self._context()) as stage:
            self.store.require("audit")
            audit = AuditReport.model_validate(read_json(self.store.path(AUDIT_FILE)))
            sweep_report = None
            if self.store.has("sweep"):
                self.store.require("sweep")
                sweep_report = SweepReport.model_validate(read_json(self.store.path(SWEEP_FILE)))
            for name, loaded in (("audit", audit), ("sweep", sweep_report)):
                if loaded is not None and loaded.config_hash != self.config_hash:
                    raise ArtifactMismatchError(f"{name} results belong to another run config", field=name)

            markdown = render_report(audit, sweep_report, self.config)
            path = self.store.path(REPORT_FILE)
            path.write_text(markdown, encoding="utf-8")
            inputs = ["audit"] + (["sweep"] if sweep_report is not None else [])
            self.store.record("report", [REPORT_FILE], inputs=inputs)
            stage.update({"artifact": REPORT_FILE, "with_sweep": sweep_report is not None})
        return path

    def run_all(self, include_score: bool = True) -> Path:
        self.ingest()
        if OutlierSpace.TEXT in self.config.active_spaces:
            self.embed()
        if include_score and (self.config.scorer is not None or self.config.score_imports):
            self.score()
        self.detect()
        self.audit()
        self.sweep()
        return self.report()
