# app/utils/file_manager.py
import concurrent.futures
import json
import logging
import os
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Type, TypeVar, Union

import numpy as np
import yaml
from pydantic import BaseModel, TypeAdapter, ValidationError

from app.exceptions import MissingPose, ParseError
from app.models.geometry import Pose
from app.models.labels import (
    AugmentationSpec,
    ClickAnnotation,
    GroundTruthBox,
    PredictionRecord,
    PseudoLabel,
    pseudo_label_adapter,
)
from app.models.scene import DatasetManifest, PointCloudFrame, SynthSceneSpec

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]
M = TypeVar("M", bound=BaseModel)

# Little-endian float32 x, y, z, intensity
POINT_DTYPE = np.dtype("<f4")
POINT_STRIDE = 4 * POINT_DTYPE.itemsize

MANIFEST_FILE = "manifest.json"
POSES_FILE = "poses.txt"
GT_FILE = "gt.jsonl"
FRAMES_DIR = "frames"


# --- point clouds and poses -----------------------------------------------------


def read_point_file(path: PathLike) -> np.ndarray:
    """(N, 4) float64 points from a KITTI-style binary file"""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise ParseError(path, None, f"cannot read point file: {e}") from e
    if len(raw) % POINT_STRIDE:
        whole = len(raw) - len(raw) % POINT_STRIDE
        raise ParseError(
            path, f"byte {whole}",
            f"size {len(raw)} is not a multiple of the {POINT_STRIDE}-byte point record",
        )
    values = np.frombuffer(raw, dtype=POINT_DTYPE)
    bad = np.flatnonzero(~np.isfinite(values))
    if len(bad):
        raise ParseError(path, f"byte {bad[0] * POINT_DTYPE.itemsize}", "non-finite coordinate")
    return values.reshape(-1, 4).astype(np.float64)


def write_point_file(path: PathLike, points: np.ndarray) -> None:
    np.ascontiguousarray(np.asarray(points)[:, :4], dtype=POINT_DTYPE).tofile(str(path))


def read_poses(path: PathLike) -> List[Pose]:
    """One 3x4 row-major sensor-to-world matrix per line"""
    poses = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ParseError(path, None, f"cannot read pose file: {e}") from e

    for number, line in enumerate(lines, 1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 12:
            raise ParseError(path, f"line {number}", f"expected 12 values, found {len(fields)}")
        try:
            poses.append(Pose.from_matrix([float(v) for v in fields]))
        except ValueError as e:
            raise ParseError(path, f"line {number}", str(e)) from e
    return poses


def write_poses(path: PathLike, poses: Sequence[Pose]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for pose in poses:
            f.write(" ".join(repr(float(v)) for v in pose.to_matrix().ravel()) + "\n")


# --- JSON-lines records -----------------------------------------------------------


def write_records(path: PathLike, records: Iterable[BaseModel]) -> None:
    """One JSON object per line, UTF-8"""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(record.model_dump_json(by_alias=True) + "\n")


def read_records(path: PathLike, model: Union[Type[M], TypeAdapter]) -> List[M]:
    adapter = model if isinstance(model, TypeAdapter) else TypeAdapter(model)
    records = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise ParseError(path, None, f"cannot read records: {e}") from e

    for number, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            records.append(adapter.validate_json(line))
        except ValidationError as e:
            first = e.errors()[0]
            where = ".".join(str(p) for p in first["loc"])
            raise ParseError(path, f"line {number}", f"{where}: {first['msg']}" if where else first["msg"]) from e
    return records


def read_clicks(path: PathLike) -> List[ClickAnnotation]:
    return read_records(path, ClickAnnotation)


def read_labels(path: PathLike) -> List[PseudoLabel]:
    return read_records(path, pseudo_label_adapter)


def read_predictions(path: PathLike) -> List[PredictionRecord]:
    return read_records(path, PredictionRecord)


def read_ground_truth(path: PathLike) -> List[GroundTruthBox]:
    return read_records(path, GroundTruthBox)


def read_augmentation_specs(path: PathLike) -> List[AugmentationSpec]:
    return read_records(path, AugmentationSpec)


def write_report(path: PathLike, report: BaseModel) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(report.model_dump_json(indent=2, by_alias=True) + "\n")


def write_text(path: PathLike, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text + "\n")


def read_yaml_model(path: PathLike, model: Type[M]) -> M:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ParseError(path, None, f"cannot load YAML: {e}") from e
    try:
        return model.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ParseError(path, None, f"field '{field}': {first['msg']}") from e


def read_scene_spec(path: PathLike) -> SynthSceneSpec:
    return read_yaml_model(path, SynthSceneSpec)


# --- datasets -------------------------------------------------------------------


def read_manifest(path: PathLike) -> Tuple[DatasetManifest, Path]:
    """Manifest plus the directory its relative paths resolve against"""
    manifest_path = Path(path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_FILE
    try:
        text = manifest_path.read_text(encoding="utf-8")
        manifest = DatasetManifest.model_validate_json(text)
    except OSError as e:
        raise ParseError(manifest_path, None, f"cannot read manifest: {e}") from e
    except ValidationError as e:
        raise ParseError(manifest_path, None, e.errors()[0]["msg"]) from e

    root = manifest_path.parent
    for rel in [*manifest.frame_paths, manifest.pose_path, *([manifest.gt_path] if manifest.gt_path else [])]:
        if not (root / rel).is_file():
            raise ParseError(root / rel, None, "file referenced by manifest does not exist")
    return manifest, root


def load_sequence(path: PathLike, workers: int = 1) -> Tuple[DatasetManifest, List[PointCloudFrame]]:
    """
    Load every frame of a dataset in order

    Args:
        path: manifest file or the dataset directory holding manifest.json
        workers: parallel point-file readers

    Returns:
        The manifest and its frames (sensor frame, with poses)
    """
    manifest, root = read_manifest(path)
    poses = read_poses(root / manifest.pose_path)
    if len(poses) != len(manifest.frame_paths):
        raise MissingPose(len(poses), len(manifest.frame_paths))
    if manifest.timestamps is not None and len(manifest.timestamps) != len(manifest.frame_paths):
        raise ParseError(root / MANIFEST_FILE, None, "timestamp count does not match frame count")

    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        clouds = list(executor.map(read_point_file, [root / p for p in manifest.frame_paths]))

    frames = [
        PointCloudFrame(
            frame_id=i,
            timestamp=manifest.timestamps[i] if manifest.timestamps else float(i),
            points=points,
            pose=pose,
        )
        for i, (points, pose) in enumerate(zip(clouds, poses))
    ]
    logger.info("loaded sequence %s: %d frames", manifest.sequence_id, len(frames))
    return manifest, frames


def load_dataset_gt(path: PathLike) -> List[GroundTruthBox]:
    manifest, root = read_manifest(path)
    if not manifest.gt_path:
        raise ParseError(root / MANIFEST_FILE, None, "dataset has no ground-truth file")
    return read_ground_truth(root / manifest.gt_path)


def save_dataset(
    out_dir: PathLike,
    sequence_id: str,
    frames: Sequence[PointCloudFrame],
    classes: Sequence[str],
    gt: Optional[Sequence[GroundTruthBox]] = None,
) -> Path:
    """Write frames, poses, ground truth and the manifest; returns the manifest path"""
    root = Path(out_dir)
    (root / FRAMES_DIR).mkdir(parents=True, exist_ok=True)

    frame_paths = []
    for frame in frames:
        rel = f"{FRAMES_DIR}/{frame.frame_id:06d}.bin"
        write_point_file(root / rel, frame.points)
        frame_paths.append(rel)
    write_poses(root / POSES_FILE, [f.pose for f in frames])
    if gt is not None:
        write_records(root / GT_FILE, gt)

    manifest = DatasetManifest(
        sequence_id=sequence_id,
        frame_paths=frame_paths,
        pose_path=POSES_FILE,
        classes=list(classes),
        timestamps=[f.timestamp for f in frames],
        gt_path=GT_FILE if gt is not None else None,
    )
    manifest_path = root / MANIFEST_FILE
    manifest_path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return manifest_path


def dump_json(data) -> str:
    """Stable JSON text for stdout"""
    return json.dumps(data, indent=2, sort_keys=True)
