# app/routers/common.py
import functools
import logging
from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from rich.table import Table

from app.config import OUTPUT_DIR, PipelineConfig, load_config
from app.exceptions import EXIT_INTERNAL_ERROR, ClickLabelError
from app.models.labels import EvalReport

logger = logging.getLogger(__name__)

# Shared option declarations
ConfigOption = typer.Option(None, "--config", "-c", help="Pipeline config YAML (defaults bundled)")
WorkersOption = typer.Option(None, "--workers", "-w", help="Worker threads; never changes outputs")


def handle_errors(func):
    """Turn engine errors into exit codes: 1 for bad input, 2 for internal failures"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ClickLabelError as e:
            typer.echo(f"error: {type(e).__name__}: {e.detail}", err=True)
            raise typer.Exit(code=e.exit_code)
        except (typer.Exit, typer.Abort):
            raise
        except Exception as e:
            logger.exception("internal error")
            typer.echo(f"internal error: {type(e).__name__}: {e}", err=True)
            raise typer.Exit(code=EXIT_INTERNAL_ERROR)

    return wrapper


def resolve_config(
    path: Optional[Path], seed: Optional[int] = None, workers: Optional[int] = None
) -> PipelineConfig:
    return load_config(path).with_overrides(seed=seed, workers=workers)


def default_out(out: Optional[Path], name: str) -> Path:
    """Given path, or `name` under the output directory; parent dirs created"""
    path = out if out is not None else Path(OUTPUT_DIR) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def report_path(out: Path, report: Optional[Path]) -> Path:
    return report if report is not None else out.with_suffix(".report.json")


def print_eval_table(report: EvalReport) -> None:
    table = Table(title=f"{report.labels} labels vs {report.gt} ground-truth boxes")
    for column in ("class", "IoU thr", "matched", "recall", "precision", "mean BEV IoU", "mean 3D IoU"):
        table.add_column(column, justify="left" if column == "class" else "right")

    rows = [("all", report.thresholds)] + [(c.class_label, c.thresholds) for c in report.per_class]
    for name, metrics in rows:
        for m in metrics:
            precision = f"{m.precision:.3f}" if m.precision_defined else "n/a"
            table.add_row(
                name, f"{m.threshold:.2f}", str(m.matched), f"{m.recall:.3f}", precision,
                f"{m.mean_bev_iou:.3f}", f"{m.mean_3d_iou:.3f}",
            )
    Console(stderr=True).print(table)
