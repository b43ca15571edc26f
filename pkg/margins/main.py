"""
margins - command line entry point
One subcommand per pipeline stage; artifacts are handed off through the output directory
"""

# Load environment variables first, so settings and the scorer key see .env
from dotenv import load_dotenv

load_dotenv()

from functools import wraps
from pathlib import Path
from typing import Callable, Optional
import logging
import os
import sys

import click
from pydantic import ValidationError

from margins.config import settings, validate_settings
from margins.schemas.outlier_schema import OutlierSpace
from margins.schemas.run_schema import RunConfig, load_run_config
from margins.schemas.synthetic_schema import PlantedSpec
from margins.services.pipeline import AuditPipeline
from margins.services.synthetic import generate_synthetic, write_synthetic
from margins.utils.helpers import write_json
from margins.utils.logging_utils import configure_logging
from margins.utils.validators import MarginsError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

SPACE_CHOICES = [space.value for space in OutlierSpace] + ["all"]


def _exit_for(error: Exception) -> int:
    return getattr(error, "exit_code", EXIT_RUNTIME)


def _fail(error: Exception) -> None:
    if isinstance(error, MarginsError):
        click.echo(f"error: {error.message}", err=True)
    else:
        logger.exception("Unexpected failure")
        click.echo(f"error: {type(error).__name__}: {error}", err=True)
    sys.exit(_exit_for(error))


def run_options(command: Callable) -> Callable:
    """--config/--out/--seed/--threads/--space, resolved into a RunConfig"""

    @click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
                  help="Run configuration JSON")
    @click.option("--out", "output_dir", default=None, help="Output directory (overrides config)")
    @click.option("--seed", type=int, default=None, help="Random seed (overrides config)")
    @click.option("--threads", type=int, default=None, help="Worker cap; never changes results")
    @click.option("--space", type=click.Choice(SPACE_CHOICES), default=None, help="Outlier space(s) to use")
    @wraps(command)
    def wrapper(config_path, output_dir, seed, threads, space, **kwargs):
        try:
            spaces = None
            if space is not None:
                spaces = list(OutlierSpace) if space == "all" else [OutlierSpace(space)]
            config = load_run_config(
                Path(config_path),
                output_dir=output_dir,
                seed=seed,
                threads=threads,
                spaces=spaces,
            )
            command(config, **kwargs)
        except Exception as e:
            _fail(e)

    return wrapper


@click.group()
@click.option("--log-level", default=None, help="Overrides LOG_LEVEL")
@click.option("--log-json/--no-log-json", default=None, help="JSON-lines logging")
def cli(log_level: Optional[str], log_json: Optional[bool]) -> None:
    """Outlier-based disparity audits for toxicity classifiers"""
    try:
        validate_settings(settings)
    except ValueError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_VALIDATION)
    configure_logging(level=log_level, json_lines=log_json)


@cli.command()
@run_options
def ingest(config: RunConfig) -> None:
    """Load, binarize, sample and dedup the dataset"""
    table = AuditPipeline(config).ingest()
    click.echo(f"ingested {len(table)} rows")


@cli.command()
@run_options
def embed(config: RunConfig) -> None:
    """Embed comment texts (or load external embeddings)"""
    matrix = AuditPipeline(config).embed()
    click.echo(f"embedded {matrix.n_rows} rows into {matrix.dim} dimensions")


@cli.command()
@run_options
def score(config: RunConfig) -> None:
    """Fetch or import model scores"""
    table = AuditPipeline(config).score()
    click.echo(f"scores for models: {', '.join(table.model_ids)}")


@cli.command()
@run_options
def detect(config: RunConfig) -> None:
    """Local Outlier Factor over each configured space"""
    assignment = AuditPipeline(config).detect()
    for space, result in assignment.results.items():
        click.echo(f"{space}: {result.n_flagged} outliers")


@cli.command()
@run_options
def audit(config: RunConfig) -> None:
    """WMSE rankings, gaps, significance, MSE tables and composition"""
    report = AuditPipeline(config).audit()
    click.echo(f"audited {report.n_rows} rows for {len(report.model_ids)} model(s)")


@cli.command()
@run_options
def sweep(config: RunConfig) -> None:
    """Contamination sweep and groups below the curve"""
    report = AuditPipeline(config).sweep()
    for curve in report.curves:
        click.echo(f"{curve.model_id}/{curve.space}: {curve.comparison.below} groups below the curve")


@cli.command()
@run_options
def report(config: RunConfig) -> None:
    """Render the Markdown report"""
    path = AuditPipeline(config).report()
    click.echo(f"report written to {path}")


@cli.command()
@run_options
def run(config: RunConfig) -> None:
    """Every stage in order"""
    path = AuditPipeline(config).run_all()
    click.echo(f"report written to {path}")


@cli.command()
@click.option("--n", "n_rows", type=int, default=2000, show_default=True)
@click.option("--groups", "n_groups", type=int, default=24, show_default=True)
@click.option("--planted-group", default=None, help="Defaults to the last demographic group")
@click.option("--prevalence", type=float, default=0.02, show_default=True)
@click.option("--inflation", type=float, default=3.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-csv", type=click.Path(dir_okay=False), required=True)
@click.option("--out-schema", type=click.Path(dir_okay=False), required=True)
@click.option("--run-config", type=click.Path(dir_okay=False), default=None,
              help="Also write a run configuration that reads the generated files")
def synth(n_rows, n_groups, planted_group, prevalence, inflation, seed, out_csv, out_schema, run_config) -> None:
    """Generate a synthetic dataset with a planted high-error group"""
    try:
        planted = PlantedSpec(group=planted_group, prevalence=prevalence, inflation=inflation)
        table = generate_synthetic(n=n_rows, n_groups=n_groups, planted=planted, seed=seed)
        csv_path, schema_path = write_synthetic(table, Path(out_csv), Path(out_schema))
        if run_config:
            run_path = Path(run_config)
            base = run_path.resolve().parent
            write_json(
                run_path,
                {
                    "dataset_path": os.path.relpath(csv_path.resolve(), base),
                    "schema_path": os.path.relpath(schema_path.resolve(), base),
                    "seed": seed,
                },
            )
        click.echo(f"wrote {len(table)} rows to {csv_path}")
    except ValidationError as e:
        click.echo(f"error: invalid synthetic settings: {e.errors()[0]['msg']}", err=True)
        sys.exit(EXIT_VALIDATION)
    except Exception as e:
        _fail(e)


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
