"""Command-line pipeline driver.

Exit codes: 0 success, 2 validation error, 3 backend error,
4 data-integrity error.
"""

from __future__ import annotations

import sys

import click

from .config import load_config
from .errors import (
    BackendError,
    CorpusIntegrityError,
    DataLoadError,
    OccuprobeError,
    ValidationError,
)
from .pipeline import STAGE_ORDER, run_pipeline

EXIT_VALIDATION = 2
EXIT_BACKEND = 3
EXIT_INTEGRITY = 4


def _exit_code(exc: OccuprobeError) -> int:
    if isinstance(exc, (CorpusIntegrityError, DataLoadError)):
        return EXIT_INTEGRITY
    if isinstance(exc, BackendError):
        return EXIT_BACKEND
    return EXIT_VALIDATION


_shared_options = [
    click.option("--config", "config_path", required=True, type=click.Path(exists=True),
                 help="Run configuration JSON file."),
    click.option("--out", "out_dir", default=None,
                 help="Output directory (overrides config and OCCUPROBE_OUT)."),
    click.option("--seed", default=None, type=int, help="Run seed override."),
    click.option("--backend", default=None,
                 help="Backend override: URL, mock:PATH, or replay:PATH."),
]


def shared_options(func):
    for option in reversed(_shared_options):
        func = option(func)
    return func


@click.group()
def main():
    """Occupational-association bias probe pipeline."""


def _execute(stages, config_path, out_dir, seed, backend):
    try:
        config = load_config(
            config_path, out_override=out_dir, seed_override=seed,
            backend_override=backend,
        )
        run = run_pipeline(config, stages=stages)
    except OccuprobeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_code(exc))
    for stage in stages:
        status = "up-to-date" if stage in run.skipped_stages else "done"
        click.echo(f"{stage}: {status}")
    click.echo(f"artifacts: {run.manifest_path}")


def _make_stage_command(stage_name: str, help_text: str):
    @main.command(name=stage_name, help=help_text)
    @shared_options
    def _command(config_path, out_dir, seed, backend):
        _execute([stage_name], config_path, out_dir, seed, backend)

    return _command


_make_stage_command("plan", "Build and persist the prompt-template call plan.")
_make_stage_command("generate", "Drive the backend over the plan into a corpus file.")
_make_stage_command("extract", "Extract job titles into the frequency matrix.")
_make_stage_command("analyze", "Thresholds, Gini/Lorenz, rank and top-job tables.")
_make_stage_command("regress", "Per-job interaction logistic regressions.")
_make_stage_command("compare", "Labor-market ground-truth comparison.")
_make_stage_command("report", "Render the human-readable summary report.")
_make_stage_command("sweep", "Hyperparameter ablation over top_k/temperature.")


@main.command(name="run", help="Run several stages in order (default: all).")
@shared_options
@click.option(
    "--stage", "stage_list", default=None,
    help="Comma-separated stage subset, e.g. plan,generate,extract.",
)
def run_command(config_path, out_dir, seed, backend, stage_list):
    stages = (
        [s.strip() for s in stage_list.split(",") if s.strip()]
        if stage_list
        else list(STAGE_ORDER)
    )
    _execute(stages, config_path, out_dir, seed, backend)


if __name__ == "__main__":
    main()
