# app/services/mixed_loss.py
import math
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict

from app.exceptions import InvariantViolation, NegativeLambda
from app.models.labels import BoxLabel, MaskLabel, MixedLossBreakdown, PredictionRecord, PseudoLabel
from app.services.geometry import bev_iou
from app.services.refinement import group_indices, greedy_match, label_box


class SupervisionAssignment(BaseModel):
    """Which labels feed which loss term"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    reg_targets: List[BoxLabel]
    cls_targets: List[PseudoLabel]
    pos_targets: List[MaskLabel]


def assign_supervision(labels: Sequence[PseudoLabel]) -> SupervisionAssignment:
    """Boxes supervise regression and classification; masks classification and position"""
    return SupervisionAssignment(
        reg_targets=[l for l in labels if isinstance(l, BoxLabel)],
        cls_targets=list(labels),
        pos_targets=[l for l in labels if isinstance(l, MaskLabel)],
    )


def match_predictions(
    labels: Sequence[PseudoLabel], preds: Sequence[PredictionRecord], iou_min: float
) -> List[Optional[PredictionRecord]]:
    """Greedy one-to-one label/prediction pairing per frame and class; None when unpaired"""
    matched: List[Optional[PredictionRecord]] = [None] * len(labels)
    label_groups = group_indices(labels, lambda l: (l.frame_id, l.class_label))
    pred_groups = group_indices(preds, lambda p: (p.frame_id, p.class_label))

    for key in sorted(label_groups):
        l_idx, p_idx = label_groups[key], pred_groups.get(key, [])
        if not p_idx:
            continue
        boxes = [label_box(labels[i]) for i in l_idx]
        ious = np.zeros((len(l_idx), len(p_idx)))
        for a, box in enumerate(boxes):
            if box is None:
                continue
            for b, j in enumerate(p_idx):
                ious[a, b] = bev_iou(box, preds[j].box)
        for a, b, _ in greedy_match(ious, iou_min):
            matched[l_idx[a]] = preds[p_idx[b]]
    return matched


def _wrap_half_pi(angle: float) -> float:
    """Wrap a heading residual to [-pi/2, pi/2)"""
    return (angle + math.pi / 2) % math.pi - math.pi / 2


def mixed_loss(
    matched_predictions: Sequence[Optional[PredictionRecord]],
    labels: Sequence[PseudoLabel],
    lambda_pos: float,
) -> MixedLossBreakdown:
    """
    Reference evaluation of the mixed loss

    reg: smooth-L1 (beta 1) over the 7 box parameters, summed over matched box
         labels and divided by |L_b|.
    cls: binary cross-entropy of the matched confidence against target 1, mean
         over all labels; an unmatched label scores confidence 0.
    pos: smooth-L1 between predicted BEV center and mask centroid, summed over
         matched masks and divided by |L_m|.
    total = reg + cls + lambda_pos * pos.
    """
    if lambda_pos < 0:
        raise NegativeLambda(lambda_pos)
    if len(matched_predictions) != len(labels):
        raise InvariantViolation("matched predictions must align one-to-one with labels")

    box_idx = [i for i, l in enumerate(labels) if isinstance(l, BoxLabel)]
    mask_idx = [i for i, l in enumerate(labels) if isinstance(l, MaskLabel)]

    reg = 0.0
    residuals = []
    for i in box_idx:
        pred = matched_predictions[i]
        if pred is None:
            continue
        diff = pred.box.as_array() - labels[i].box.as_array()
        diff[6] = _wrap_half_pi(diff[6])
        residuals.append(diff)
    if residuals:
        r = torch.tensor(np.stack(residuals), dtype=torch.float64)
        reg = F.smooth_l1_loss(r, torch.zeros_like(r), reduction="sum", beta=1.0).item() / len(box_idx)

    cls = 0.0
    if labels:
        conf = torch.tensor(
            [p.confidence if p is not None else 0.0 for p in matched_predictions], dtype=torch.float64
        )
        cls = F.binary_cross_entropy(conf, torch.ones_like(conf), reduction="mean").item()

    pos = 0.0
    offsets = []
    for i in mask_idx:
        pred = matched_predictions[i]
        if pred is None:
            continue
        offsets.append([pred.box.x - labels[i].centroid[0], pred.box.y - labels[i].centroid[1]])
    if offsets:
        o = torch.tensor(offsets, dtype=torch.float64)
        pos = F.smooth_l1_loss(o, torch.zeros_like(o), reduction="sum", beta=1.0).item() / len(mask_idx)

    return MixedLossBreakdown(
        reg=reg,
        cls=cls,
        pos=pos,
        total=reg + cls + lambda_pos * pos,
        lambda_pos=lambda_pos,
        num_box=len(box_idx),
        num_mask=len(mask_idx),
        num_mixed=len(labels),
    )
