# app/routers/evaluate.py
import logging
from pathlib import Path
from typing import List, Optional

import typer
from rich.console import Console
from rich.table import Table

from app.routers.common import (
    ConfigOption,
    WorkersOption,
    handle_errors,
    print_eval_table,
    resolve_config,
)
from app.routers.dataset import SparsityMode
from app.services.evaluation import evaluate_labels, perturbation_sweep, restrict_to_clicked
from app.services.mixed_loss import match_predictions, mixed_loss
from app.utils.file_manager import (
    dump_json,
    load_dataset_gt,
    load_sequence,
    read_clicks,
    read_ground_truth,
    read_labels,
    read_predictions,
    write_report,
    write_text,
)

logger = logging.getLogger(__name__)

router = typer.Typer()


def _read_gt(path: Path):
    # Either a GT JSON-lines file or a dataset carrying one
    if path.is_file() and path.suffix == ".jsonl":
        return read_ground_truth(path)
    return load_dataset_gt(path)


@router.command("eval")
@handle_errors
def evaluate(
    labels: Path = typer.Argument(..., help="Label file"),
    gt: Path = typer.Argument(..., help="GT file, or a dataset directory/manifest"),
    threshold: Optional[List[float]] = typer.Option(None, "--threshold", "-t", help="BEV IoU threshold, repeatable"),
    clicks: Optional[Path] = typer.Option(None, "--clicks", help="Score only the clicked instances"),
    config: Optional[Path] = ConfigOption,
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Also write the report here"),
):
    """Label quality against ground truth: recall, precision, mean IoU"""
    cfg = resolve_config(config)
    thresholds = threshold or cfg.evaluation.iou_thresholds
    truth = _read_gt(gt)
    if clicks is not None:
        truth = restrict_to_clicked(truth, read_clicks(clicks))

    report = evaluate_labels(read_labels(labels), truth, thresholds)
    if out is not None:
        write_report(out, report)
    print_eval_table(report)
    typer.echo(report.model_dump_json(indent=2))


@router.command("loss")
@handle_errors
def loss(
    labels: Path = typer.Argument(..., help="Label file"),
    predictions: Path = typer.Argument(..., help="Prediction file"),
    lambdas: Optional[List[float]] = typer.Option(None, "--lambda", help="Position-term weight, repeatable"),
    config: Optional[Path] = ConfigOption,
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Also write the breakdown here"),
):
    """Reference mixed-loss breakdown, one per lambda"""
    cfg = resolve_config(config)
    current = read_labels(labels)
    matched = match_predictions(current, read_predictions(predictions), cfg.loss.match_iou_min)

    breakdowns = [mixed_loss(matched, current, lam) for lam in (lambdas or [cfg.loss.lambda_pos])]
    payload = [b.model_dump(mode="json", by_alias=True) for b in breakdowns]
    text = dump_json(payload[0] if len(payload) == 1 else payload)
    if out is not None:
        write_text(out, text)
    typer.echo(text)


@router.command("sweep")
@handle_errors
def sweep(
    dataset: Path = typer.Argument(..., help="Dataset directory or manifest.json"),
    seed: int = typer.Option(..., "--seed"),
    deltas: Optional[List[float]] = typer.Option(None, "--delta", help="Perturbation factor, repeatable"),
    sparsity: SparsityMode = typer.Option(SparsityMode.all_instances, "--sparsity"),
    config: Optional[Path] = ConfigOption,
    workers: Optional[int] = WorkersOption,
):
    """Label quality as the click perturbation factor grows"""
    cfg = resolve_config(config, seed, workers)
    _, frames = load_sequence(dataset, cfg.workers)
    gt = load_dataset_gt(dataset)

    rows = perturbation_sweep(frames, gt, deltas or [0.25, 0.5, 1.0], sparsity.value, cfg)

    table = Table(title="perturbation sweep")
    for column in ("delta", "clicks", "labels", "skipped", "median BEV IoU", "mean BEV IoU", "recall"):
        table.add_column(column, justify="right")
    for row in rows:
        table.add_row(
            f"{row.delta:.2f}", str(row.clicks), str(row.labels), str(row.skipped),
            f"{row.median_bev_iou:.3f}", f"{row.mean_bev_iou:.3f}", f"{row.recall:.3f}",
        )
    Console(stderr=True).print(table)
    typer.echo(dump_json([row.model_dump(mode="json") for row in rows]))
