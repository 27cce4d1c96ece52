# app/models/labels.py
import math
from typing import Annotated, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator, model_validator

from app.models.geometry import Box3D

CENTROID_TOL = 1e-6


class ClickAnnotation(BaseModel):
    """A single coarse BEV click, world frame"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    frame_id: int
    x_o: float
    y_o: float
    class_label: str
    # Known only for simulated clicks; used by clicked-instance evaluation
    instance_id: Optional[int] = None

    @field_validator("x_o", "y_o")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("click coordinates must be finite")
        return value

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x_o, self.y_o])


class BoxLabel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["box"] = "box"
    frame_id: int
    box: Box3D
    class_label: str
    source_click: Optional[ClickAnnotation] = None


class MaskLabel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["mask"] = "mask"
    frame_id: int
    points: List[List[float]] = Field(min_length=1)
    centroid: List[float]
    class_label: str
    source_click: Optional[ClickAnnotation] = None

    @model_validator(mode="after")
    def _centroid_is_mean(self):
        if len(self.centroid) != 3:
            raise ValueError("centroid must be a 3-vector")
        mean = np.asarray(self.points, dtype=np.float64)[:, :3].mean(axis=0)
        if not np.allclose(mean, self.centroid, atol=CENTROID_TOL):
            raise ValueError("centroid is not the mean of the mask points")
        return self

    @classmethod
    def from_points(
        cls,
        frame_id: int,
        points: np.ndarray,
        class_label: str,
        source_click: Optional[ClickAnnotation] = None,
    ) -> "MaskLabel":
        pts = np.asarray(points, dtype=np.float64)
        return cls(
            frame_id=frame_id,
            points=pts.tolist(),
            centroid=pts[:, :3].mean(axis=0).tolist(),
            class_label=class_label,
            source_click=source_click,
        )

    @property
    def points_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)


PseudoLabel = Annotated[Union[BoxLabel, MaskLabel], Field(discriminator="kind")]
pseudo_label_adapter = TypeAdapter(PseudoLabel)


class PredictionRecord(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    frame_id: int
    box: Box3D
    class_label: str
    confidence: float = Field(ge=0.0, le=1.0)


class GroundTruthBox(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    frame_id: int
    instance_id: int
    class_label: str
    box: Box3D
    # Set by the scene generator; not used by labeling itself
    dynamic: bool = False


class AugmentationSpec(BaseModel):
    """Global scene augmentation; frame_id None applies to every frame"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    frame_id: Optional[int] = None
    rotation: float = 0.0
    flip_x: bool = False
    flip_y: bool = False
    scale: float = Field(default=1.0, ge=0.5, le=2.0)


class AlignmentScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    prediction: PredictionRecord
    score: float = Field(ge=0.0, le=1.0)


class DualThresholds(BaseModel):
    model_config = ConfigDict(frozen=True)

    mu_low: float = Field(ge=0.0, le=1.0)
    mu_high: float = Field(ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.mu_low > self.mu_high:
            raise ValueError("mu_low must not exceed mu_high")
        return self


class MixedLossBreakdown(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    reg: float = Field(ge=0.0)
    cls: float = Field(ge=0.0)
    pos: float = Field(ge=0.0)
    total: float = Field(ge=0.0)
    lambda_pos: float = Field(ge=0.0, alias="lambda")
    num_box: int
    num_mask: int
    num_mixed: int


# --- reports --------------------------------------------------------------------


class SkippedClick(BaseModel):
    index: int
    frame_id: int
    error: str
    reason: str


class ClickDiagnostic(BaseModel):
    index: int
    frame_id: int
    class_label: str
    motion: Optional[str] = None
    ratio: Optional[float] = None
    delta_t: Optional[int] = None
    T: Optional[int] = None
    cluster_size: Optional[int] = None
    label_kind: Optional[str] = None


class GenerationReport(BaseModel):
    total_clicks: int = 0
    static: int = 0
    dynamic: int = 0
    boxes: int = 0
    masks: int = 0
    precise: int = 0
    skipped: List[SkippedClick] = Field(default_factory=list)
    diagnostics: List[ClickDiagnostic] = Field(default_factory=list)


class Upgrade(BaseModel):
    label_index: int
    frame_id: int
    iou: float


class UpgradeReport(BaseModel):
    masks_in: int = 0
    upgraded: int = 0
    retained: int = 0
    upgrades: List[Upgrade] = Field(default_factory=list)


class ScoreHistogram(BaseModel):
    edges: List[float]
    counts: List[int]


class RefinementReport(BaseModel):
    round: int = 0
    predictions_in: int = 0
    predictions_kept: int = 0
    thresholds: Optional[DualThresholds] = None
    tier_counts: Dict[str, int] = Field(default_factory=lambda: {"box": 0, "mask": 0, "discarded": 0})
    upgrade: UpgradeReport = Field(default_factory=UpgradeReport)
    expanded_added: int = 0
    duplicates_skipped: int = 0
    labels_out: int = 0
    score_histogram: Optional[ScoreHistogram] = None
    expansion_skipped: Optional[str] = None


class ThresholdMetrics(BaseModel):
    threshold: float
    matched: int
    recall: float = Field(ge=0.0, le=1.0)
    precision: float = Field(ge=0.0, le=1.0)
    precision_defined: bool = True
    mean_bev_iou: float = 0.0
    mean_3d_iou: float = 0.0


class ClassMetrics(BaseModel):
    class_label: str
    labels: int
    gt: int
    thresholds: List[ThresholdMetrics]


class EvalReport(BaseModel):
    labels: int
    gt: int
    unfittable_masks: int = 0
    thresholds: List[ThresholdMetrics]
    per_class: List[ClassMetrics] = Field(default_factory=list)
