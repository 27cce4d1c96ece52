import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.models.scene import EgoSpec, ObjectSpec, SynthSceneSpec
from app.services.sequence import to_world
from app.services.synthetic import generate_synthetic_scene
from conftest import car, scene, walker


def test_static_objects_keep_their_box():
    spec = scene([car(0.0, 5.0, heading=0.4)], frame_count=4)
    frames, gt = generate_synthetic_scene(spec)
    assert len(frames) == 4 and len(gt) == 4
    assert all(g.box == gt[0].box and not g.dynamic for g in gt)


def test_object_points_lie_on_their_box():
    frames, gt = generate_synthetic_scene(scene([car(0.0, 5.0, heading=0.4)], frame_count=3))
    for f, g in zip(frames, gt):
        world = to_world(f).points
        near = np.linalg.norm(world[:, :2] - [g.box.x, g.box.y], axis=1) < 4.0
        above_ground = world[:, 2] > 0.15
        grown = g.box.model_copy(update={"l": g.box.l + 0.2, "w": g.box.w + 0.2, "h": g.box.h + 0.2})
        assert grown.contains(world[near & above_ground]).all()


def test_ground_is_flat_in_world_frame():
    frames, _ = generate_synthetic_scene(scene([], frame_count=2, noise_sigma=0.01))
    for f in frames:
        assert np.abs(to_world(f).points[:, 2]).max() < 0.1


def test_dynamic_object_advances_every_frame():
    spec = scene([walker(0.0, 3.0, heading=0.5, speed=5.0)], frame_count=6)
    _, gt = generate_synthetic_scene(spec)
    step = 5.0 * spec.frame_dt
    for before, after in zip(gt, gt[1:]):
        moved = (after.box.x - before.box.x, after.box.y - before.box.y)
        assert moved == pytest.approx((step * math.cos(0.5), step * math.sin(0.5)))
        assert after.dynamic


def test_points_are_in_sensor_frame():
    spec = scene([], frame_count=3, ego=EgoSpec(start=(100.0, -50.0), speed=4.0))
    frames, _ = generate_synthetic_scene(spec)
    for f in frames:
        # Ground sits sensor_height below the sensor and around it
        assert np.median(f.points[:, 2]) == pytest.approx(-spec.ego.sensor_height, abs=0.05)
        assert np.abs(np.median(f.points[:, :2], axis=0)).max() < 3.0


def test_same_seed_same_scene():
    spec = scene([car(0.0, 5.0), walker(-4.0, -3.0)], frame_count=3)
    first, _ = generate_synthetic_scene(spec)
    second, _ = generate_synthetic_scene(spec)
    other, _ = generate_synthetic_scene(spec.model_copy(update={"seed": spec.seed + 1}))
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.points, b.points)
    assert not np.array_equal(first[0].points, other[0].points)


def test_static_object_with_speed_is_rejected():
    with pytest.raises(ValidationError):
        ObjectSpec(class_label="car", size=(4.0, 2.0, 1.5), start=(0.0, 0.0), speed=3.0)


def test_unknown_class_is_rejected():
    with pytest.raises(ValidationError):
        SynthSceneSpec(frame_count=1, objects=[car(0.0, 0.0).model_copy(update={"class_label": "tram"})])
