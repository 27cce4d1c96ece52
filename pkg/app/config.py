# app/config.py
import os
from pathlib import Path
from typing import Dict, List, Literal, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.exceptions import ConfigError

load_dotenv()

DEFAULT_CONFIG_PATH = Path(__file__).parent / "data" / "default_config.yaml"
OUTPUT_DIR = os.environ.get("CLICKLABEL_OUTPUT_DIR", "output")


class ClusterParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    eps: float = Field(gt=0)
    min_pts: int = Field(ge=1)


class GroundConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    distance: float = Field(default=0.2, gt=0)
    iterations: int = Field(default=500, ge=1)
    min_inlier_fraction: float = Field(default=0.1, ge=0, le=1)
    max_normal_angle_deg: float = Field(default=30.0, gt=0, le=90)


def _default_radii() -> Dict[str, float]:
    return {"car": 2.0, "pedestrian": 0.5, "cyclist": 1.0, "truck": 4.0, "bus": 4.0}


def _default_clustering() -> Dict[str, ClusterParams]:
    return {
        "car": ClusterParams(eps=0.7, min_pts=5),
        "pedestrian": ClusterParams(eps=0.4, min_pts=4),
        "cyclist": ClusterParams(eps=0.5, min_pts=4),
        "truck": ClusterParams(eps=0.7, min_pts=5),
        "bus": ClusterParams(eps=0.7, min_pts=5),
    }


class LabelGenConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    k: int = Field(default=5, ge=0)
    tau_duration: float = Field(default=0.6, gt=0, lt=1)
    radii: Dict[str, float] = Field(default_factory=_default_radii)
    # D_t and the Click2Mask neighborhood are gathered within aggregation_scale * r
    aggregation_scale: float = Field(default=2.0, ge=1.0)
    clustering: Dict[str, ClusterParams] = Field(default_factory=_default_clustering)
    projection: Literal["bev", "3d"] = "3d"
    ground: GroundConfig = Field(default_factory=GroundConfig)

    @model_validator(mode="after")
    def _consistent_classes(self):
        if any(r <= 0 for r in self.radii.values()):
            raise ValueError("radii must be positive")
        missing = set(self.radii) ^ set(self.clustering)
        if missing:
            raise ValueError(f"radii and clustering must cover the same classes, mismatch: {sorted(missing)}")
        return self

    def radius_for(self, class_label: str) -> float:
        if class_label not in self.radii:
            raise ConfigError("labelgen.radii", f"no radius configured for class '{class_label}'")
        return self.radii[class_label]

    def cluster_params_for(self, class_label: str) -> ClusterParams:
        if class_label not in self.clustering:
            raise ConfigError("labelgen.clustering", f"no cluster params for class '{class_label}'")
        return self.clustering[class_label]

    @property
    def classes(self) -> List[str]:
        return sorted(self.radii)


class RefinementConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    conf_threshold: float = Field(default=0.7, ge=0, le=1)
    match_iou_min: float = Field(default=0.3, ge=0, le=1)
    expand_min_pts: int = Field(default=5, ge=1)
    histogram_bins: int = Field(default=10, ge=1)


class LossConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda_pos: float = Field(default=0.2, ge=0)
    match_iou_min: float = Field(default=0.1, ge=0, le=1)


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    iou_thresholds: List[float] = Field(default_factory=lambda: [0.5, 0.7])


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    labelgen: LabelGenConfig = Field(default_factory=LabelGenConfig)
    refinement: RefinementConfig = Field(default_factory=RefinementConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    evaluation: EvalConfig = Field(default_factory=EvalConfig)
    seed: int = 0
    workers: int = Field(default=1, ge=1)

    def with_overrides(self, seed: Optional[int] = None, workers: Optional[int] = None) -> "PipelineConfig":
        updates = {}
        if seed is not None:
            updates["seed"] = seed
        if workers is not None:
            if workers < 1:
                raise ConfigError("workers", "must be >= 1")
            updates["workers"] = workers
        return self.model_copy(update=updates)


def _first_error_field(err: ValidationError) -> str:
    first = err.errors()[0]
    return ".".join(str(part) for part in first["loc"]) or "<root>"


def load_config(path: Optional[Path] = None) -> PipelineConfig:
    """
    Load and validate a pipeline config from YAML

    Args:
        path: YAML file; the bundled default config when None

    Returns:
        The validated PipelineConfig
    """
    source = Path(path) if path else DEFAULT_CONFIG_PATH
    try:
        with open(source, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError("<file>", f"cannot read {source}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError("<file>", f"{source} is not valid YAML: {e}") from e

    try:
        return PipelineConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_first_error_field(e), e.errors()[0]["msg"]) from e
