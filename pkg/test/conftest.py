import math

import numpy as np
import pytest

from app.config import GroundConfig, PipelineConfig
from app.models.geometry import Box3D
from app.models.labels import PredictionRecord
from app.models.scene import EgoSpec, ObjectSpec, PointCloudFrame, SynthSceneSpec
from app.services.sequence import prepare_sequence
from app.services.synthetic import generate_synthetic_scene


def box(x=0.0, y=0.0, z=0.0, l=4.0, w=2.0, h=1.5, theta=0.0) -> Box3D:
    return Box3D(x=x, y=y, z=z, l=l, w=w, h=h, theta=theta)


def prediction(frame_id=0, confidence=0.9, class_label="car", **box_kwargs) -> PredictionRecord:
    return PredictionRecord(frame_id=frame_id, box=box(**box_kwargs), class_label=class_label, confidence=confidence)


def frame(frame_id, xyz, timestamp=None) -> PointCloudFrame:
    xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
    points = np.column_stack([xyz, np.full(len(xyz), 0.5)]) if len(xyz) else np.zeros((0, 4))
    return PointCloudFrame(frame_id=frame_id, timestamp=float(frame_id if timestamp is None else timestamp), points=points)


def car(x, y, heading=0.0, size=(4.2, 1.8, 1.5)) -> ObjectSpec:
    return ObjectSpec(class_label="car", size=size, start=(x, y), heading=heading)


def walker(x, y, heading=0.0, speed=2.0, class_label="pedestrian", size=(0.6, 0.6, 1.7)) -> ObjectSpec:
    return ObjectSpec(
        class_label=class_label, size=size, start=(x, y), heading=heading, speed=speed, dynamic=speed > 0
    )


def scene(objects, frame_count=11, ego=None, seed=3, noise_sigma=0.02) -> SynthSceneSpec:
    return SynthSceneSpec(
        sequence_id="test",
        frame_count=frame_count,
        ego=ego or EgoSpec(start=(-10.0, 0.0), speed=2.0),
        objects=objects,
        noise_sigma=noise_sigma,
        seed=seed,
    )


def prepared(spec: SynthSceneSpec):
    """Frames, GT and the world-frame ground-removed frames of a spec"""
    frames, gt = generate_synthetic_scene(spec)
    return frames, gt, prepare_sequence(frames, GroundConfig(), seed=0)


@pytest.fixture
def config():
    return PipelineConfig()


@pytest.fixture(scope="session")
def parked_car():
    return prepared(scene([car(0.0, 5.0, heading=0.3)]))


@pytest.fixture(scope="session")
def two_parked_cars():
    return prepared(scene([car(0.0, 5.0), car(0.0, 8.3)]))


@pytest.fixture(scope="session")
def mixed_street():
    # One parked car and one pedestrian walking at 2 m/s past it
    return prepared(
        scene(
            [car(10.0, 6.0), walker(-10.0, -4.0, speed=2.0)],
            frame_count=50,
            ego=EgoSpec(start=(0.0, 0.0), speed=1.0),
        )
    )


@pytest.fixture(scope="session")
def parked_row():
    # Three parked vehicles at least 10 m apart, ego driving past
    return prepared(
        scene(
            [car(0.0, 6.0, heading=0.1), car(12.0, -6.0, heading=-0.2), car(24.0, 6.5, heading=math.pi / 2)],
            frame_count=16,
            ego=EgoSpec(start=(-6.0, 0.0), speed=3.0),
        )
    )
