# app/services/evaluation.py
import logging
from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from app.config import PipelineConfig
from app.exceptions import ScopeMismatch
from app.models.geometry import Box3D
from app.models.labels import (
    ClassMetrics,
    ClickAnnotation,
    EvalReport,
    GroundTruthBox,
    PseudoLabel,
    ThresholdMetrics,
)
from app.models.scene import PointCloudFrame
from app.services.click_simulator import Sparsity, simulate_clicks
from app.services.geometry import bev_iou, iou_3d
from app.services.labelgen import generate_pseudo_labels
from app.services.refinement import greedy_match, label_box

logger = logging.getLogger(__name__)


def _match_group(
    label_boxes: List[Optional[Box3D]], gt_boxes: List[Box3D], threshold: float
) -> List[Tuple[float, float]]:
    """(bev IoU, 3D IoU) of each greedy match at the threshold"""
    ious = np.zeros((len(label_boxes), len(gt_boxes)))
    for i, box in enumerate(label_boxes):
        if box is None:
            continue
        for j, truth in enumerate(gt_boxes):
            ious[i, j] = bev_iou(box, truth)
    return [(iou, iou_3d(label_boxes[i], gt_boxes[j])) for i, j, iou in greedy_match(ious, threshold)]


def _metrics(threshold: float, pairs: List[Tuple[float, float]], n_labels: int, n_gt: int) -> ThresholdMetrics:
    matched = len(pairs)
    return ThresholdMetrics(
        threshold=threshold,
        matched=matched,
        recall=matched / n_gt if n_gt else 0.0,
        precision=matched / n_labels if n_labels else 0.0,
        precision_defined=n_labels > 0,
        mean_bev_iou=float(np.mean([p[0] for p in pairs])) if pairs else 0.0,
        mean_3d_iou=float(np.mean([p[1] for p in pairs])) if pairs else 0.0,
    )


def restrict_to_clicked(gt: Sequence[GroundTruthBox], clicks: Sequence[ClickAnnotation]) -> List[GroundTruthBox]:
    """Ground truth of the instances the clicks point at (clicks need instance ids)"""
    clicked = {(c.frame_id, c.instance_id) for c in clicks if c.instance_id is not None}
    return [g for g in gt if (g.frame_id, g.instance_id) in clicked]


def evaluate_labels(
    labels: Sequence[PseudoLabel], gt: Sequence[GroundTruthBox], iou_thresholds: Sequence[float]
) -> EvalReport:
    """
    Label quality against ground truth

    Matching is greedy one-to-one by descending BEV IoU within each frame and
    class, separately per threshold. Mask labels are scored through their
    L-shape box; unfittable masks count as labels that never match. With no
    labels, precision is reported as 0 and flagged undefined.
    """
    gt_frames = {g.frame_id for g in gt}
    stray = {l.frame_id for l in labels} - gt_frames
    if stray:
        raise ScopeMismatch("labels reference frames without ground truth", stray)

    boxes = [label_box(l) for l in labels]
    groups: Dict[tuple, Tuple[List[int], List[int]]] = defaultdict(lambda: ([], []))
    for i, label in enumerate(labels):
        groups[(label.frame_id, label.class_label)][0].append(i)
    for j, truth in enumerate(gt):
        groups[(truth.frame_id, truth.class_label)][1].append(j)

    classes = sorted({k[1] for k in groups})
    overall, per_class = [], {c: [] for c in classes}
    for threshold in iou_thresholds:
        pairs_by_class: Dict[str, List[Tuple[float, float]]] = defaultdict(list)
        for key in sorted(groups):
            l_idx, g_idx = groups[key]
            if l_idx and g_idx:
                pairs_by_class[key[1]].extend(
                    _match_group([boxes[i] for i in l_idx], [gt[j].box for j in g_idx], threshold)
                )
        all_pairs = [p for c in classes for p in pairs_by_class[c]]
        overall.append(_metrics(threshold, all_pairs, len(labels), len(gt)))
        for c in classes:
            n_l = sum(len(v[0]) for k, v in groups.items() if k[1] == c)
            n_g = sum(len(v[1]) for k, v in groups.items() if k[1] == c)
            per_class[c].append(_metrics(threshold, pairs_by_class[c], n_l, n_g))

    return EvalReport(
        labels=len(labels),
        gt=len(gt),
        unfittable_masks=sum(1 for b in boxes if b is None),
        thresholds=overall,
        per_class=[
            ClassMetrics(
                class_label=c,
                labels=sum(1 for l in labels if l.class_label == c),
                gt=sum(1 for g in gt if g.class_label == c),
                thresholds=per_class[c],
            )
            for c in classes
        ],
    )


class SweepRow(BaseModel):
    delta: float
    clicks: int
    labels: int
    skipped: int
    median_bev_iou: float
    mean_bev_iou: float
    recall: float


def perturbation_sweep(
    frames: Sequence[PointCloudFrame],
    gt: Sequence[GroundTruthBox],
    deltas: Sequence[float],
    sparsity: Sparsity,
    config: PipelineConfig,
) -> List[SweepRow]:
    """
    Label quality as a function of the click perturbation factor

    Each delta runs simulate -> generate -> evaluate with the same seed. IoU
    statistics are over the labels' best BEV overlap with their own clicked
    instance; recall is clicked-instance recall at the first eval threshold.
    """
    threshold = config.evaluation.iou_thresholds[0]
    gt_index = {(g.frame_id, g.instance_id): g for g in gt}
    rows = []
    for delta in deltas:
        clicks = simulate_clicks(gt, delta, sparsity, config.seed)
        labels, report = generate_pseudo_labels(frames, clicks, config)
        ious = []
        for label in labels:
            box = label_box(label)
            truth = gt_index.get((label.frame_id, label.source_click.instance_id)) if label.source_click else None
            ious.append(bev_iou(box, truth.box) if box is not None and truth is not None else 0.0)
        clicked_gt = restrict_to_clicked(gt, clicks)
        evaluation = evaluate_labels(labels, clicked_gt, [threshold])
        rows.append(
            SweepRow(
                delta=delta,
                clicks=len(clicks),
                labels=len(labels),
                skipped=len(report.skipped),
                median_bev_iou=float(np.median(ious)) if ious else 0.0,
                mean_bev_iou=float(np.mean(ious)) if ious else 0.0,
                recall=evaluation.thresholds[0].recall,
            )
        )
        logger.info("delta %.2f: mean BEV IoU %.3f over %d labels", delta, rows[-1].mean_bev_iou, len(labels))
    return rows
