# app/routers/dataset.py
import logging
from enum import Enum
from pathlib import Path
from typing import Optional

import typer

from app.routers.common import default_out, handle_errors
from app.services.click_simulator import simulate_clicks
from app.services.synthetic import generate_synthetic_scene
from app.utils.file_manager import dump_json, load_dataset_gt, read_scene_spec, save_dataset, write_records

logger = logging.getLogger(__name__)

router = typer.Typer()


class SparsityMode(str, Enum):
    one_per_frame = "one_per_frame"
    all_instances = "all_instances"


@router.command("synth")
@handle_errors
def synth(
    spec_file: Path = typer.Argument(..., help="Synthetic scene spec (YAML)"),
    seed: int = typer.Option(..., "--seed", help="Overrides the seed in the spec"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Dataset directory"),
):
    """Generate a synthetic LiDAR sequence with poses and ground truth"""
    spec = read_scene_spec(spec_file).model_copy(update={"seed": seed})
    frames, gt = generate_synthetic_scene(spec)

    out_dir = out if out is not None else default_out(None, spec.sequence_id)
    manifest_path = save_dataset(out_dir, spec.sequence_id, frames, spec.classes, gt)
    logger.info("wrote %d frames to %s", len(frames), out_dir)
    typer.echo(dump_json({"manifest": str(manifest_path), "frames": len(frames), "gt": len(gt)}))


@router.command("clicks")
@handle_errors
def clicks(
    dataset: Path = typer.Argument(..., help="Dataset directory or manifest.json"),
    seed: int = typer.Option(..., "--seed", help="Seed for offsets and instance choice"),
    delta: float = typer.Option(0.5, "--delta", help="Perturbation factor on the half-extents"),
    sparsity: SparsityMode = typer.Option(SparsityMode.one_per_frame, "--sparsity"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Click file (JSON lines)"),
):
    """Simulate coarse clicks from the dataset's ground truth"""
    gt = load_dataset_gt(dataset)
    result = simulate_clicks(gt, delta, sparsity.value, seed)

    path = default_out(out, "clicks.jsonl")
    write_records(path, result)
    logger.info("simulated %d clicks (delta %.2f, %s)", len(result), delta, sparsity.value)
    typer.echo(dump_json({"clicks": len(result), "out": str(path)}))
