"""Command-line entry point for the annotation pipeline.

Exit codes: 0 success, 1 partial per-sample failures, 2 configuration or
environment failure.
"""

from __future__ import annotations

import sys

import click

from . import pipeline
from .errors import TabforgeError, UnknownFormatError


def _load_cfg(config_path: str | None) -> pipeline.PipelineConfig:
    try:
        return pipeline.load_config(config_path)
    except (OSError, TabforgeError, ValueError) as exc:
        raise click.exceptions.Exit(2) from _echo_err(exc)


def _echo_err(exc: Exception) -> Exception:
    click.echo(f"error: {exc}", err=True)
    return exc


@click.group()
def main() -> None:
    """Code-driven table reasoning annotation pipeline."""


_config_opt = click.option(
    "--config", "config_path", type=click.Path(exists=True), default=None,
    help="YAML pipeline configuration.",
)


@main.command()
@_config_opt
def generate(config_path: str | None) -> None:
    """Prompt the annotator for raw completions (resumable)."""
    cfg = _load_cfg(config_path)
    try:
        outcome = pipeline.run_generate(cfg)
    except (OSError, TabforgeError) as exc:
        raise click.exceptions.Exit(2) from _echo_err(exc)
    click.echo(
        f"generated {outcome.processed} completions "
        f"({outcome.skipped} already done, {outcome.failures} failed)"
    )
    if outcome.failures:
        raise click.exceptions.Exit(1)


@main.command()
@_config_opt
def verify(config_path: str | None) -> None:
    """Execute annotation code and compare against ground truth."""
    cfg = _load_cfg(config_path)
    try:
        outcome = pipeline.run_verify(cfg)
    except (OSError, TabforgeError) as exc:
        raise click.exceptions.Exit(2) from _echo_err(exc)
    click.echo(f"verified {outcome.processed} records ({outcome.failures} rejected)")


@main.command()
@_config_opt
def curate(config_path: str | None) -> None:
    """Length-filter and down-sample accepted records into the dataset."""
    cfg = _load_cfg(config_path)
    try:
        outcome = pipeline.run_curate(cfg)
    except (OSError, TabforgeError) as exc:
        raise click.exceptions.Exit(2) from _echo_err(exc)
    click.echo(f"curated dataset: {outcome.processed} records kept")


@main.command()
@_config_opt
def stats(config_path: str | None) -> None:
    """Rejection-rate and token-length statistics over the verified artifact."""
    cfg = _load_cfg(config_path)
    try:
        result = pipeline.run_stats(cfg)
    except (OSError, TabforgeError) as exc:
        raise click.exceptions.Exit(2) from _echo_err(exc)
    from .curate import render_stats

    click.echo(render_stats(result), nl=False)


@main.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
@click.option("--task", "task_name", required=True)
@click.option("--separator", default="|", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Also write the report as JSON.")
def eval_cmd(pred_path: str, gt_path: str, task_name: str,
             separator: str, out_path: str | None) -> None:
    """Score a prediction file against ground truth with the task's metric."""
    from . import metrics
    from .prompts import Task

    try:
        task = Task(task_name)
    except ValueError as exc:
        raise click.exceptions.Exit(2) from _echo_err(exc)
    try:
        report = metrics.evaluate_file(pred_path, gt_path, task, separator)
    except (OSError, TabforgeError) as exc:
        raise click.exceptions.Exit(2) from _echo_err(exc)
    click.echo(metrics.render_report(report))
    if out_path:
        import json

        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(
                {"task": report.task, "metric": report.metric,
                 "values": report.values, "n": report.n, "notes": report.notes},
                fh, indent=2,
            )
            fh.write("\n")


@main.command("inspect-table")
@click.argument("source", type=click.Path(exists=True, allow_dash=True))
@click.option("--format", "format_hint", default=None,
              type=click.Choice(["html", "markdown", "latex"]))
def inspect_table(source: str, format_hint: str | None) -> None:
    """Print the canonical grid and all tool-function outputs for a table file."""
    from .parsers import parse_auto

    if source == "-":
        text = sys.stdin.read()
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    try:
        report = parse_auto(text, format_hint)
    except UnknownFormatError as exc:
        raise click.exceptions.Exit(2) from _echo_err(exc)
    except TabforgeError as exc:
        raise click.exceptions.Exit(2) from _echo_err(exc)
    grid = report.grid
    click.echo(grid.to_canonical_text(), nl=False)
    rows, cols = grid.size()
    click.echo(f"size: ({rows}, {cols})")
    for r in range(1, rows + 1):
        click.echo(f"row {r}: " + " | ".join(grid.row_values(r)))
    for c in range(1, cols + 1):
        click.echo(f"col {c}: " + " | ".join(grid.col_values(c)))
    merges = grid.merged_regions()
    click.echo(
        "merges: "
        + (
            "["
            + ", ".join(
                f"({m.row_start}, {m.row_end}, {m.col_start}, {m.col_end})" for m in merges
            )
            + "]"
        )
    )
    for warning in report.warnings:
        click.echo(f"warning: {warning}", err=True)


@main.command("reward-serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8763, show_default=True, type=int)
@click.option("--group-size", default=4, show_default=True, type=int)
@click.option("--exec/--no-exec", "exec_enabled", default=False, show_default=True,
              help="Execute rollout code when scoring accuracy.")
def reward_serve(host: str, port: int, group_size: int, exec_enabled: bool) -> None:
    """Serve the group-reward scoring endpoint until terminated."""
    import uvicorn

    from .reward import GrpoConfig, create_reward_app

    app = create_reward_app(GrpoConfig(group_size=group_size), exec_enabled=exec_enabled)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except OSError as exc:
        raise click.exceptions.Exit(2) from _echo_err(exc)


if __name__ == "__main__":
    main()
