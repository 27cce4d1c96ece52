# app/routers/labels.py
import logging
from pathlib import Path
from typing import Optional

import typer

from app.routers.common import ConfigOption, WorkersOption, default_out, handle_errors, report_path, resolve_config
from app.services.labelgen import generate_pseudo_labels, mix_precise_annotations
from app.services.refinement import LabelRefiner
from app.services.sequence import prepare_sequence
from app.utils.file_manager import (
    dump_json,
    load_sequence,
    read_augmentation_specs,
    read_clicks,
    read_ground_truth,
    read_labels,
    read_predictions,
    write_records,
    write_report,
)

logger = logging.getLogger(__name__)

router = typer.Typer()


@router.command("genlabels")
@handle_errors
def genlabels(
    dataset: Path = typer.Argument(..., help="Dataset directory or manifest.json"),
    clicks: Path = typer.Argument(..., help="Click file (JSON lines)"),
    config: Optional[Path] = ConfigOption,
    seed: int = typer.Option(..., "--seed", help="Seed for ground removal and precise-box picks"),
    workers: Optional[int] = WorkersOption,
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Label file (JSON lines)"),
    report: Optional[Path] = typer.Option(None, "--report", help="Generation report (JSON)"),
    precise_gt: Optional[Path] = typer.Option(None, "--precise-gt", help="GT file to draw precise boxes from"),
    precise_count: int = typer.Option(0, "--precise-count", min=0, help="Labels replaced by their GT box"),
):
    """
    Turn clicks into mixed box and mask pseudo-labels

    Points are gathered within labelgen.aggregation_scale times the class
    radius (2x by default, wider than the persistence radius so an off-center
    click still covers the whole vehicle). Set it to 1.0 to gather within the
    class radius itself.
    """
    cfg = resolve_config(config, seed, workers)
    _, frames = load_sequence(dataset, cfg.workers)
    click_list = read_clicks(clicks)

    labels, gen_report = generate_pseudo_labels(frames, click_list, cfg)
    if precise_gt is not None and precise_count > 0:
        labels, gen_report.precise = mix_precise_annotations(
            labels, read_ground_truth(precise_gt), precise_count, cfg.seed
        )
        logger.info("replaced %d labels with precise boxes", gen_report.precise)

    path = default_out(out, "labels.jsonl")
    write_records(path, labels)
    write_report(report_path(path, report), gen_report)
    typer.echo(
        dump_json(
            {
                "labels": len(labels),
                "boxes": gen_report.boxes,
                "masks": gen_report.masks,
                "skipped": len(gen_report.skipped),
                "out": str(path),
            }
        )
    )


@router.command("refine")
@handle_errors
def refine(
    labels: Path = typer.Argument(..., help="Current label file"),
    predictions: Path = typer.Argument(..., help="Detector outputs on the original frames"),
    augmented: Optional[Path] = typer.Option(None, "--augmented", help="Detector outputs on augmented frames"),
    augspec: Optional[Path] = typer.Option(None, "--augspec", help="Augmentation applied per frame"),
    dataset: Optional[Path] = typer.Option(None, "--dataset", help="Dataset, needed for mask expansion"),
    seed: int = typer.Option(..., "--seed", help="Seed for ground removal on the dataset"),
    config: Optional[Path] = ConfigOption,
    workers: Optional[int] = WorkersOption,
    round_index: int = typer.Option(0, "--round", min=0, help="Iteration number recorded in the report"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Refined label file"),
    report: Optional[Path] = typer.Option(None, "--report", help="Refinement report (JSON)"),
):
    """One Mask2Box upgrade and dual-threshold expansion pass"""
    cfg = resolve_config(config, seed, workers)
    current = read_labels(labels)
    preds = read_predictions(predictions)
    aug_preds = read_predictions(augmented) if augmented is not None else []
    specs = read_augmentation_specs(augspec) if augspec is not None else []

    frames = None
    if dataset is not None:
        _, sequence = load_sequence(dataset, cfg.workers)
        prepared = prepare_sequence(sequence, cfg.labelgen.ground, cfg.seed, cfg.workers)
        frames = {f.frame_id: f for f in prepared}

    merged, ref_report = LabelRefiner(cfg).refine(current, preds, aug_preds, specs, frames, round_index)

    path = default_out(out, "labels.refined.jsonl")
    write_records(path, merged)
    write_report(report_path(path, report), ref_report)
    typer.echo(
        dump_json(
            {
                "labels": len(merged),
                "upgraded": ref_report.upgrade.upgraded,
                "expanded": ref_report.expanded_added,
                "out": str(path),
            }
        )
    )
