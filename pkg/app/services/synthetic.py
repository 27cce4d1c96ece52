# app/services/synthetic.py
import logging
import math
from typing import List, Tuple

import numpy as np

from app.models.geometry import Box3D, Pose
from app.models.labels import GroundTruthBox
from app.models.scene import ObjectSpec, PointCloudFrame, SynthSceneSpec
from app.services.geometry import transform_points

logger = logging.getLogger(__name__)

# Intensity ranges for road and object returns
GROUND_INTENSITY = (0.0, 0.3)
OBJECT_INTENSITY = (0.2, 1.0)


class SceneSynthesizer:
    """
    Desk-scale LiDAR sequence generator

    Frames hold a flat ground plane around the ego vehicle plus box-shaped
    objects sampled on the faces a sensor at the ego position would see. Points
    are returned in the sensor frame together with sensor-to-world poses and
    world-frame ground-truth boxes.
    """

    def __init__(self, spec: SynthSceneSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)

    def ego_pose(self, index: int) -> Pose:
        ego = self.spec.ego
        t = index * self.spec.frame_dt
        x = ego.start[0] + ego.speed * t * math.cos(ego.yaw)
        y = ego.start[1] + ego.speed * t * math.sin(ego.yaw)
        return Pose.from_yaw(x, y, ego.sensor_height, ego.yaw)

    def object_box(self, obj: ObjectSpec, index: int) -> Box3D:
        t = index * self.spec.frame_dt
        travel = obj.speed * t if obj.dynamic else 0.0
        l, w, h = obj.size
        return Box3D(
            x=obj.start[0] + travel * math.cos(obj.heading),
            y=obj.start[1] + travel * math.sin(obj.heading),
            z=h / 2,
            l=l, w=w, h=h,
            theta=obj.heading,
        )

    def _ground_points(self, pose: Pose) -> np.ndarray:
        half = self.spec.ground.half_extent
        count = int(round(self.spec.ground.density * (2 * half) ** 2))
        xy = self.rng.uniform(-half, half, size=(count, 2)) + pose.translation[:2]
        intensity = self.rng.uniform(*GROUND_INTENSITY, size=count)
        return np.column_stack([xy, np.zeros(count), intensity])

    def _face_points(self, box: Box3D, density: float, sensor: np.ndarray) -> np.ndarray:
        """Surface samples on the faces of `box` that face the sensor"""
        l, w, h = box.l, box.w, box.h
        # (outward normal in box frame, face center, u-extent, v-extent, u-axis)
        sides = [
            (np.array([1.0, 0.0]), np.array([l / 2, 0.0]), w, np.array([0.0, 1.0])),
            (np.array([-1.0, 0.0]), np.array([-l / 2, 0.0]), w, np.array([0.0, 1.0])),
            (np.array([0.0, 1.0]), np.array([0.0, w / 2]), l, np.array([1.0, 0.0])),
            (np.array([0.0, -1.0]), np.array([0.0, -w / 2]), l, np.array([1.0, 0.0])),
        ]
        c, s = math.cos(box.theta), math.sin(box.theta)
        rot = np.array([[c, -s], [s, c]])
        center = np.array([box.x, box.y])
        to_sensor = sensor[:2] - center

        chunks = []
        for normal, face_center, extent, axis in sides:
            world_normal = rot @ normal
            if world_normal @ (to_sensor - rot @ face_center) <= 0:
                continue
            count = max(1, int(round(density * extent * h)))
            u = self.rng.uniform(-extent / 2, extent / 2, size=count)
            z = self.rng.uniform(0.0, h, size=count)
            local = face_center + u[:, None] * axis
            chunks.append(np.column_stack([local @ rot.T + center, z]))

        if sensor[2] > h:
            count = max(1, int(round(density * l * w)))
            local = np.column_stack(
                [self.rng.uniform(-l / 2, l / 2, size=count), self.rng.uniform(-w / 2, w / 2, size=count)]
            )
            chunks.append(np.column_stack([local @ rot.T + center, np.full(count, h)]))

        xyz = np.vstack(chunks)
        intensity = self.rng.uniform(*OBJECT_INTENSITY, size=len(xyz))
        return np.column_stack([xyz, intensity])

    def generate(self) -> Tuple[List[PointCloudFrame], List[GroundTruthBox]]:
        frames: List[PointCloudFrame] = []
        gt: List[GroundTruthBox] = []

        for index in range(self.spec.frame_count):
            pose = self.ego_pose(index)
            parts = [self._ground_points(pose)]
            for instance_id, obj in enumerate(self.spec.objects):
                box = self.object_box(obj, index)
                gt.append(
                    GroundTruthBox(
                        frame_id=index, instance_id=instance_id,
                        class_label=obj.class_label, box=box, dynamic=obj.dynamic,
                    )
                )
                parts.append(self._face_points(box, obj.density, pose.translation))

            world = np.vstack(parts)
            if self.spec.noise_sigma > 0:
                world[:, :3] += self.rng.normal(0.0, self.spec.noise_sigma, size=(len(world), 3))
            sensor = transform_points(pose.inverse(), world)
            # Round through float32 so in-memory frames equal what the point files hold
            sensor = sensor.astype("<f4").astype(np.float64)
            frames.append(
                PointCloudFrame(
                    frame_id=index, timestamp=index * self.spec.frame_dt, points=sensor, pose=pose
                )
            )

        logger.info(
            "synthesized %d frames with %d objects (%d dynamic)",
            len(frames), len(self.spec.objects), sum(o.dynamic for o in self.spec.objects),
        )
        return frames, gt


def generate_synthetic_scene(spec: SynthSceneSpec) -> Tuple[List[PointCloudFrame], List[GroundTruthBox]]:
    """Frames in the sensor frame with ego poses, plus per-frame world-frame ground truth"""
    return SceneSynthesizer(spec).generate()
