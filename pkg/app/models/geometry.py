# app/models/geometry.py
import math
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

ORTHONORMAL_TOL = 1e-9


def normalize_angle(angle: float) -> float:
    """Wrap an angle to [-pi, pi); angles already in range come back unchanged"""
    if -math.pi <= angle < math.pi:
        return angle
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped < 0:
        wrapped += 2.0 * math.pi
    result = wrapped - math.pi
    # fmod can land exactly on +pi after the shift
    return -math.pi if result >= math.pi else result


class Pose(BaseModel):
    """Rigid sensor-to-world transform"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    rotation: np.ndarray
    translation: np.ndarray

    @field_validator("rotation", "translation", mode="before")
    @classmethod
    def _as_float_array(cls, value):
        return np.asarray(value, dtype=np.float64)

    @model_validator(mode="after")
    def _check_rigid(self):
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("pose needs a 3x3 rotation and a 3-vector translation")
        if not (np.all(np.isfinite(self.rotation)) and np.all(np.isfinite(self.translation))):
            raise ValueError("pose contains non-finite values")
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=ORTHONORMAL_TOL):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(self.rotation) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("rotation determinant is not +1")
        return self

    @classmethod
    def identity(cls) -> "Pose":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    @classmethod
    def from_yaw(cls, x: float, y: float, z: float, yaw: float) -> "Pose":
        c, s = math.cos(yaw), math.sin(yaw)
        rotation = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return cls(rotation=rotation, translation=np.array([x, y, z]))

    @classmethod
    def from_matrix(cls, matrix) -> "Pose":
        """Build from a 3x4 [R|t] matrix"""
        m = np.asarray(matrix, dtype=np.float64).reshape(3, 4)
        return cls(rotation=m[:, :3], translation=m[:, 3])

    def to_matrix(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply `other` first, then `self`"""
        return Pose(
            rotation=self.rotation @ other.rotation,
            translation=self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rotation=rt, translation=-rt @ self.translation)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.rotation, np.eye(3)) and not np.any(self.translation))


class BevBox(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    l: float = Field(gt=0)
    w: float = Field(gt=0)
    theta: float

    def corners(self) -> np.ndarray:
        """Footprint corners, counter-clockwise, shape (4, 2)"""
        c, s = math.cos(self.theta), math.sin(self.theta)
        half = np.array(
            [
                [self.l / 2, self.w / 2],
                [-self.l / 2, self.w / 2],
                [-self.l / 2, -self.w / 2],
                [self.l / 2, -self.w / 2],
            ]
        )
        rot = np.array([[c, -s], [s, c]])
        return half @ rot.T + np.array([self.x, self.y])

    @property
    def area(self) -> float:
        return self.l * self.w


class Box3D(BaseModel):
    """Oriented box: center (x, y, z), extents (l, w, h), yaw theta in [-pi, pi)"""

    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    z: float
    l: float = Field(gt=0)
    w: float = Field(gt=0)
    h: float = Field(gt=0)
    theta: float = 0.0

    @field_validator("x", "y", "z", "l", "w", "h", "theta")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("box parameters must be finite")
        return value

    @field_validator("theta")
    @classmethod
    def _wrap_theta(cls, value: float) -> float:
        return normalize_angle(value)

    @classmethod
    def from_array(cls, values) -> "Box3D":
        x, y, z, l, w, h, theta = (float(v) for v in values)
        return cls(x=x, y=y, z=z, l=l, w=w, h=h, theta=theta)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.l, self.w, self.h, self.theta])

    def bev(self) -> BevBox:
        return BevBox(x=self.x, y=self.y, l=self.l, w=self.w, theta=self.theta)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def z_min(self) -> float:
        return self.z - self.h / 2

    @property
    def z_max(self) -> float:
        return self.z + self.h / 2

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    def corners(self) -> np.ndarray:
        """8 corners, bottom face first, shape (8, 3)"""
        bev = self.bev().corners()
        bottom = np.hstack([bev, np.full((4, 1), self.z_min)])
        top = np.hstack([bev, np.full((4, 1), self.z_max)])
        return np.vstack([bottom, top])

    def contains(self, points: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        """Boolean mask of the points (N, >=3) lying inside the box"""
        pts = np.asarray(points, dtype=np.float64)
        if len(pts) == 0:
            return np.zeros(0, dtype=bool)
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx = pts[:, 0] - self.x
        dy = pts[:, 1] - self.y
        local_x = c * dx + s * dy
        local_y = -s * dx + c * dy
        return (
            (np.abs(local_x) <= self.l / 2 + tol)
            & (np.abs(local_y) <= self.w / 2 + tol)
            & (pts[:, 2] >= self.z_min - tol)
            & (pts[:, 2] <= self.z_max + tol)
        )

    def contains_bev(self, points: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        if len(pts) == 0:
            return np.zeros(0, dtype=bool)
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx = pts[:, 0] - self.x
        dy = pts[:, 1] - self.y
        return (np.abs(c * dx + s * dy) <= self.l / 2 + tol) & (
            np.abs(-s * dx + c * dy) <= self.w / 2 + tol
        )


def boxes_to_array(boxes: List[Box3D]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 7))
    return np.stack([b.as_array() for b in boxes])
