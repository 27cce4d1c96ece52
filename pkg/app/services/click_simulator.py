# app/services/click_simulator.py
import math
from collections import defaultdict
from typing import Dict, List, Literal, Sequence

import numpy as np

from app.exceptions import ConfigError
from app.models.labels import ClickAnnotation, GroundTruthBox

Sparsity = Literal["one_per_frame", "all_instances"]


def _perturbed_click(box: GroundTruthBox, delta: float, rng: np.random.Generator) -> ClickAnnotation:
    b = box.box
    u = rng.uniform(-delta * b.l / 2, delta * b.l / 2)
    v = rng.uniform(-delta * b.w / 2, delta * b.w / 2)
    c, s = math.cos(b.theta), math.sin(b.theta)
    return ClickAnnotation(
        frame_id=box.frame_id,
        x_o=b.x + c * u - s * v,
        y_o=b.y + s * u + c * v,
        class_label=box.class_label,
        instance_id=box.instance_id,
    )


def simulate_clicks(
    gt: Sequence[GroundTruthBox], delta: float, sparsity: Sparsity, seed: int
) -> List[ClickAnnotation]:
    """
    Coarse clicks: the BEV center of a ground-truth box plus a uniform offset of
    up to delta * l / 2 along the box and delta * w / 2 across it

    one_per_frame clicks a single uniformly chosen instance per frame,
    all_instances clicks every instance. Output is sorted by frame, then instance.
    """
    if delta < 0:
        raise ConfigError("delta", "perturbation factor must be >= 0")
    if sparsity not in ("one_per_frame", "all_instances"):
        raise ConfigError("sparsity", f"unknown mode '{sparsity}'")

    rng = np.random.default_rng(seed)
    by_frame: Dict[int, List[GroundTruthBox]] = defaultdict(list)
    for box in sorted(gt, key=lambda g: (g.frame_id, g.instance_id)):
        by_frame[box.frame_id].append(box)

    clicks = []
    for frame_id in sorted(by_frame):
        boxes = by_frame[frame_id]
        if sparsity == "one_per_frame":
            boxes = [boxes[int(rng.integers(len(boxes)))]]
        clicks.extend(_perturbed_click(b, delta, rng) for b in boxes)
    return clicks
