# app/models/scene.py
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.geometry import Pose

# Point arrays are (N, 4) float64: x, y, z in meters, intensity in [0, 1]
POINT_FIELDS = 4


def as_point_array(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, POINT_FIELDS))
    if arr.ndim != 2 or arr.shape[1] != POINT_FIELDS:
        raise ValueError(f"points must have shape (N, {POINT_FIELDS}), got {arr.shape}")
    return arr


class PointCloudFrame(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frame_id: int
    timestamp: float = 0.0
    points: np.ndarray
    pose: Pose = Field(default_factory=Pose.identity)
    # Set by remove_ground: True when a ground plane was found and removed
    ground_removed: bool = False

    @field_validator("points", mode="before")
    @classmethod
    def _points(cls, value):
        arr = as_point_array(value)
        if not np.all(np.isfinite(arr[:, :3])):
            raise ValueError("point coordinates must be finite")
        return arr

    @property
    def bev(self) -> np.ndarray:
        return self.points[:, :2]

    def __len__(self) -> int:
        return len(self.points)


class FrameWindow(BaseModel):
    """The frames around a clicked frame, in the world frame"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frames: List[PointCloudFrame]
    k: int = Field(ge=0)
    center_frame_id: int

    @model_validator(mode="after")
    def _check_center(self):
        if not self.frames:
            raise ValueError("window has no frames")
        if self.center_frame_id not in [f.frame_id for f in self.frames]:
            raise ValueError("window does not contain its center frame")
        return self

    @property
    def T(self) -> int:
        return len(self.frames)

    @property
    def center_index(self) -> int:
        return [f.frame_id for f in self.frames].index(self.center_frame_id)

    @property
    def center_frame(self) -> PointCloudFrame:
        return self.frames[self.center_index]


class NeighborhoodSeries(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frame_ids: List[int]
    neighbors: List[np.ndarray]
    r: float = Field(gt=0)
    center_index: int

    @property
    def counts(self) -> List[int]:
        return [len(n) for n in self.neighbors]


class PersistenceProfile(BaseModel):
    g: List[int]
    delta_g: List[int]
    delta_t: int
    T: int
    ratio: float = Field(ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _check(self):
        if len(self.g) != self.T or len(self.delta_g) != max(self.T - 1, 0):
            raise ValueError("profile lengths disagree with T")
        if not 0 <= self.delta_t <= self.T:
            raise ValueError("delta_t out of range")
        return self


class MotionState(str, Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


class DatasetManifest(BaseModel):
    """On-disk sequence description; paths are relative to the manifest's directory"""

    model_config = ConfigDict(extra="forbid")

    sequence_id: str
    frame_paths: List[str] = Field(min_length=1)
    pose_path: str
    classes: List[str]
    timestamps: Optional[List[float]] = None
    gt_path: Optional[str] = None


# --- synthetic scene description -------------------------------------------------


class EgoSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    start: Tuple[float, float] = (0.0, 0.0)
    yaw: float = 0.0
    speed: float = Field(default=0.0, ge=0.0)
    sensor_height: float = Field(default=1.8, gt=0.0)


class ObjectSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    class_label: str
    size: Tuple[float, float, float]
    start: Tuple[float, float]
    heading: float = 0.0
    speed: float = Field(default=0.0, ge=0.0)
    dynamic: bool = False
    density: float = Field(default=30.0, gt=0.0)

    @field_validator("size")
    @classmethod
    def _positive_size(cls, value):
        if any(v <= 0 for v in value):
            raise ValueError("object size must be positive")
        return value

    @model_validator(mode="after")
    def _static_has_no_speed(self):
        if not self.dynamic and self.speed > 0:
            raise ValueError("static objects must have speed 0")
        return self


class GroundSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    half_extent: float = Field(default=30.0, gt=0.0)
    density: float = Field(default=3.0, ge=0.0)


class SynthSceneSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sequence_id: str = "synthetic"
    frame_count: int = Field(ge=1)
    frame_dt: float = Field(default=0.5, gt=0.0)
    ego: EgoSpec = Field(default_factory=EgoSpec)
    objects: List[ObjectSpec] = Field(default_factory=list)
    ground: GroundSpec = Field(default_factory=GroundSpec)
    noise_sigma: float = Field(default=0.02, ge=0.0)
    seed: int = 0
    classes: List[str] = Field(default_factory=lambda: ["car", "pedestrian", "cyclist", "truck"])

    @model_validator(mode="after")
    def _known_classes(self):
        unknown = {o.class_label for o in self.objects} - set(self.classes)
        if unknown:
            raise ValueError(f"objects use classes outside the taxonomy: {sorted(unknown)}")
        return self
