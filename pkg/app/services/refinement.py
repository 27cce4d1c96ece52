# app/services/refinement.py
import logging
import math
from collections import defaultdict
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import PipelineConfig
from app.exceptions import ConfigError, DegenerateCluster, InsufficientScores, ScopeMismatch
from app.models.geometry import Box3D, normalize_angle
from app.models.labels import (
    AlignmentScore,
    AugmentationSpec,
    BoxLabel,
    DualThresholds,
    MaskLabel,
    PredictionRecord,
    PseudoLabel,
    RefinementReport,
    ScoreHistogram,
    Upgrade,
    UpgradeReport,
)
from app.models.scene import PointCloudFrame
from app.services.geometry import bev_iou, fit_lshape_box

logger = logging.getLogger(__name__)

MIN_SCORES = 3


def filter_high_confidence(preds: Sequence[PredictionRecord], conf_threshold: float) -> List[PredictionRecord]:
    """Predictions with confidence >= conf_threshold, input order kept"""
    if not 0.0 <= conf_threshold <= 1.0:
        raise ConfigError("conf_threshold", "must lie in [0, 1]")
    return [p for p in preds if p.confidence >= conf_threshold]


def label_box(label: PseudoLabel) -> Optional[Box3D]:
    """Box of a label; masks go through the L-shape fit, None if unfittable"""
    if isinstance(label, BoxLabel):
        return label.box
    try:
        return fit_lshape_box(label.points_array)
    except DegenerateCluster:
        return None


def greedy_match(ious: np.ndarray, iou_min: float) -> List[Tuple[int, int, float]]:
    """
    One-to-one matching by descending IoU

    Pairs below iou_min (or with zero overlap) never match. Ties resolve to the
    lower row index, then the lower column index.
    """
    rows, cols = np.nonzero((ious >= iou_min) & (ious > 0))
    candidates = sorted(zip(rows.tolist(), cols.tolist()), key=lambda rc: (-ious[rc], rc[0], rc[1]))
    used_rows, used_cols, matches = set(), set(), []
    for r, c in candidates:
        if r in used_rows or c in used_cols:
            continue
        used_rows.add(r)
        used_cols.add(c)
        matches.append((r, c, float(ious[r, c])))
    return matches


def group_indices(items, key) -> Dict[tuple, List[int]]:
    groups: Dict[tuple, List[int]] = defaultdict(list)
    for i, item in enumerate(items):
        groups[key(item)].append(i)
    return groups


def mask2box(
    labels: Sequence[PseudoLabel], preds: Sequence[PredictionRecord], match_iou_min: float
) -> Tuple[List[PseudoLabel], UpgradeReport]:
    """
    Upgrade mask labels to the best-overlapping prediction box

    Each mask is compared, through its fitted L-shape box, with predictions of
    the same frame and class. Matching is greedy one-to-one by descending BEV
    IoU; matches at or above match_iou_min replace the mask with a BoxLabel
    carrying the prediction's box. Box labels pass through untouched.
    """
    result = list(labels)
    report = UpgradeReport(masks_in=sum(1 for l in labels if isinstance(l, MaskLabel)))

    mask_groups = group_indices(labels, lambda l: (l.frame_id, l.class_label))
    pred_groups = group_indices(preds, lambda p: (p.frame_id, p.class_label))

    for key in sorted(mask_groups):
        mask_idx = [i for i in mask_groups[key] if isinstance(labels[i], MaskLabel)]
        pred_idx = pred_groups.get(key, [])
        if not mask_idx or not pred_idx:
            continue
        fitted = [label_box(labels[i]) for i in mask_idx]
        ious = np.zeros((len(mask_idx), len(pred_idx)))
        for a, box in enumerate(fitted):
            if box is None:
                continue
            for b, j in enumerate(pred_idx):
                ious[a, b] = bev_iou(box, preds[j].box)

        for a, b, iou in greedy_match(ious, match_iou_min):
            i, mask = mask_idx[a], labels[mask_idx[a]]
            result[i] = BoxLabel(
                frame_id=mask.frame_id,
                box=preds[pred_idx[b]].box,
                class_label=mask.class_label,
                source_click=mask.source_click,
            )
            report.upgrades.append(Upgrade(label_index=i, frame_id=mask.frame_id, iou=iou))

    report.upgrades.sort(key=lambda u: u.label_index)
    report.upgraded = len(report.upgrades)
    report.retained = report.masks_in - report.upgraded
    return result, report


# --- transformation equivariance -------------------------------------------------


def _rotate_xy(x: np.ndarray, y: np.ndarray, angle: float):
    c, s = math.cos(angle), math.sin(angle)
    return c * x - s * y, s * x + c * y


def _augment_points(spec: AugmentationSpec, points: np.ndarray, inverse: bool) -> np.ndarray:
    out = np.asarray(points, dtype=np.float64).copy()
    if len(out) == 0:
        return out
    if not inverse:
        if spec.flip_x:
            out[:, 0] = -out[:, 0]
        if spec.flip_y:
            out[:, 1] = -out[:, 1]
        out[:, 0], out[:, 1] = _rotate_xy(out[:, 0], out[:, 1], spec.rotation)
        out[:, :3] *= spec.scale
    else:
        out[:, :3] /= spec.scale
        out[:, 0], out[:, 1] = _rotate_xy(out[:, 0], out[:, 1], -spec.rotation)
        if spec.flip_y:
            out[:, 1] = -out[:, 1]
        if spec.flip_x:
            out[:, 0] = -out[:, 0]
    return out


def _augment_box(spec: AugmentationSpec, box: Box3D, inverse: bool) -> Box3D:
    center = _augment_points(spec, box.center[None, :], inverse)[0]
    size = spec.scale if not inverse else 1.0 / spec.scale
    theta = box.theta
    if not inverse:
        if spec.flip_x:
            theta = math.pi - theta
        if spec.flip_y:
            theta = -theta
        theta += spec.rotation
    else:
        theta -= spec.rotation
        if spec.flip_y:
            theta = -theta
        if spec.flip_x:
            theta = math.pi - theta
    return Box3D(
        x=center[0], y=center[1], z=center[2],
        l=box.l * size, w=box.w * size, h=box.h * size,
        theta=normalize_angle(theta),
    )


BoxesOrPoints = Union[Sequence[Box3D], np.ndarray]


def apply_augmentation(spec: AugmentationSpec, items: BoxesOrPoints) -> BoxesOrPoints:
    """Flip x, flip y, rotate about z, then scale; points (N, >=3) or a list of boxes"""
    if isinstance(items, np.ndarray):
        return _augment_points(spec, items, inverse=False)
    return [_augment_box(spec, b, inverse=False) for b in items]


def invert_augmentation(spec: AugmentationSpec, items: BoxesOrPoints) -> BoxesOrPoints:
    """Undo apply_augmentation"""
    if isinstance(items, np.ndarray):
        return _augment_points(spec, items, inverse=True)
    return [_augment_box(spec, b, inverse=True) for b in items]


def spec_for_frame(specs: Sequence[AugmentationSpec], frame_id: int) -> Optional[AugmentationSpec]:
    fallback = None
    for spec in specs:
        if spec.frame_id == frame_id:
            return spec
        if spec.frame_id is None:
            fallback = spec
    return fallback


def realign_predictions(
    augmented: Sequence[PredictionRecord], specs: Sequence[AugmentationSpec]
) -> List[PredictionRecord]:
    """Map detections made on augmented scenes back to the original frame"""
    realigned = []
    for pred in augmented:
        spec = spec_for_frame(specs, pred.frame_id)
        if spec is None:
            raise ScopeMismatch("no augmentation spec for augmented predictions", [pred.frame_id])
        box = invert_augmentation(spec, [pred.box])[0]
        realigned.append(pred.model_copy(update={"box": box}))
    return realigned


def alignment_scores(
    original: Sequence[PredictionRecord], realigned: Sequence[PredictionRecord]
) -> List[AlignmentScore]:
    """
    Alignment score per original prediction: BEV IoU of its greedy match among
    the realigned predictions of the same frame and class, 0 when unmatched
    """
    scores = [0.0] * len(original)
    orig_groups = group_indices(original, lambda p: (p.frame_id, p.class_label))
    real_groups = group_indices(realigned, lambda p: (p.frame_id, p.class_label))

    for key in sorted(orig_groups):
        o_idx, r_idx = orig_groups[key], real_groups.get(key, [])
        if not r_idx:
            continue
        ious = np.array([[bev_iou(original[i].box, realigned[j].box) for j in r_idx] for i in o_idx])
        for a, _, iou in greedy_match(ious, 0.0):
            scores[o_idx[a]] = iou

    return [AlignmentScore(prediction=p, score=s) for p, s in zip(original, scores)]


def _three_means(values: np.ndarray) -> np.ndarray:
    """
    Centers of the optimal 3-means split of sorted 1-D `values`

    Optimal 1-D clusters are contiguous runs of the sorted values, so every
    pair of cut points is scored from prefix sums and the lowest within-group
    squared error wins; ties go to the earliest cuts.
    """
    n = len(values)
    centered = values - values.mean()
    s = np.concatenate([[0.0], np.cumsum(centered)])
    q = np.concatenate([[0.0], np.cumsum(centered ** 2)])

    def sse(a, b):
        return q[b] - q[a] - (s[b] - s[a]) ** 2 / (b - a)

    best, cut_i, cut_j = np.inf, 1, 2
    for i in range(1, n - 1):
        j = np.arange(i + 1, n)
        cost = sse(0, i) + sse(i, j) + sse(j, n)
        k = int(np.argmin(cost))
        if cost[k] < best:
            best, cut_i, cut_j = float(cost[k]), i, i + 1 + k
    return np.array([values[:cut_i].mean(), values[cut_i:cut_j].mean(), values[cut_j:].mean()])


def dual_thresholds(scores: Sequence[AlignmentScore]) -> DualThresholds:
    """
    Two score boundaries from 1-D k-means with three clusters

    The clustering is the global optimum of the k-means objective rather than
    a Lloyd run from a fixed start. mu_low is the midpoint of the two lower
    centers and mu_high of the two upper ones. All-equal scores give (v, v);
    exactly two distinct values give their midpoint twice.
    """
    if len(scores) < MIN_SCORES:
        raise InsufficientScores(len(scores))
    values = np.array(sorted(s.score for s in scores), dtype=np.float64)
    distinct = np.unique(values)
    if len(distinct) == 1:
        return DualThresholds(mu_low=float(distinct[0]), mu_high=float(distinct[0]))
    if len(distinct) == 2:
        mid = float(distinct.mean())
        return DualThresholds(mu_low=mid, mu_high=mid)

    centers = _three_means(values)
    mu_low = float(np.clip((centers[0] + centers[1]) / 2, 0.0, 1.0))
    mu_high = float(np.clip((centers[1] + centers[2]) / 2, mu_low, 1.0))
    return DualThresholds(mu_low=mu_low, mu_high=mu_high)


def _expand(
    scored: Sequence[AlignmentScore],
    thresholds: DualThresholds,
    frames: Optional[Mapping[int, PointCloudFrame]],
    min_pts: int,
) -> Tuple[List[PseudoLabel], Dict[str, int]]:
    tiers = {"box": 0, "mask": 0, "discarded": 0}
    out: List[PseudoLabel] = []
    for item in scored:
        pred = item.prediction
        if item.score > thresholds.mu_high:
            out.append(BoxLabel(frame_id=pred.frame_id, box=pred.box, class_label=pred.class_label))
            tiers["box"] += 1
            continue
        if item.score >= thresholds.mu_low:
            frame = frames.get(pred.frame_id) if frames else None
            if frame is not None:
                inside = frame.points[pred.box.contains(frame.points)]
                if len(inside) >= min_pts:
                    out.append(MaskLabel.from_points(pred.frame_id, inside, pred.class_label))
                    tiers["mask"] += 1
                    continue
        tiers["discarded"] += 1
    return out, tiers


def expand_supervision(
    scored: Sequence[AlignmentScore],
    thresholds: DualThresholds,
    frames: Optional[Mapping[int, PointCloudFrame]],
    min_pts: int = 5,
) -> List[PseudoLabel]:
    """
    Turn scored predictions into new supervision

    Above mu_high: box label. Between the thresholds (inclusive): mask label
    from the ground-removed points inside the predicted box, kept only with at
    least min_pts points. Below mu_low: dropped.
    """
    return _expand(scored, thresholds, frames, min_pts)[0]


def score_histogram(scores: Sequence[AlignmentScore], bins: int) -> ScoreHistogram:
    counts, edges = np.histogram([s.score for s in scores], bins=bins, range=(0.0, 1.0))
    return ScoreHistogram(edges=edges.tolist(), counts=counts.tolist())


class LabelRefiner:
    """
    One refine/expand pass over externally produced detector outputs
    """

    def __init__(self, config: PipelineConfig):
        self.cfg = config.refinement

    @staticmethod
    def check_scope(
        preds: Sequence[PredictionRecord],
        augmented: Sequence[PredictionRecord],
        frames: Optional[Mapping[int, PointCloudFrame]],
    ) -> None:
        pred_frames = {p.frame_id for p in preds}
        aug_frames = {p.frame_id for p in augmented}
        if augmented and pred_frames != aug_frames:
            raise ScopeMismatch("predictions and augmented predictions cover different frames", pred_frames ^ aug_frames)
        if frames is not None:
            missing = pred_frames - set(frames)
            if missing:
                raise ScopeMismatch("predictions reference frames absent from the dataset", missing)

    def _is_duplicate(self, candidate: PseudoLabel, existing: Sequence[PseudoLabel], boxes: List[Optional[Box3D]]) -> bool:
        cand_box = label_box(candidate)
        if cand_box is None:
            return False
        for label, box in zip(existing, boxes):
            if box is None or label.frame_id != candidate.frame_id or label.class_label != candidate.class_label:
                continue
            if bev_iou(cand_box, box) >= self.cfg.match_iou_min:
                return True
        return False

    def refine(
        self,
        labels: Sequence[PseudoLabel],
        preds: Sequence[PredictionRecord],
        augmented: Sequence[PredictionRecord],
        specs: Sequence[AugmentationSpec],
        frames: Optional[Mapping[int, PointCloudFrame]] = None,
        round_index: int = 0,
    ) -> Tuple[List[PseudoLabel], RefinementReport]:
        """
        Run filter -> realign -> score -> thresholds -> Mask2Box -> expand

        Args:
            labels: current mixed labels
            preds: detector outputs on the original frames
            augmented: detector outputs on the augmented frames
            specs: the augmentation applied per frame (or one global spec)
            frames: world-frame ground-removed frames by id, for mask expansion
            round_index: iteration number recorded in the report

        Returns:
            Merged labels (upgraded originals first, then new ones) and the report
        """
        self.check_scope(preds, augmented, frames)
        report = RefinementReport(round=round_index, predictions_in=len(preds))

        kept = filter_high_confidence(preds, self.cfg.conf_threshold)
        report.predictions_kept = len(kept)

        upgraded, report.upgrade = mask2box(labels, kept, self.cfg.match_iou_min)
        merged: List[PseudoLabel] = list(upgraded)

        realigned = realign_predictions(augmented, specs)
        scored = alignment_scores(kept, realigned)
        if scored:
            report.score_histogram = score_histogram(scored, self.cfg.histogram_bins)

        if len(scored) < MIN_SCORES:
            report.expansion_skipped = f"{len(scored)} alignment scores, need {MIN_SCORES}"
            logger.warning("expansion skipped: %s", report.expansion_skipped)
        else:
            report.thresholds = dual_thresholds(scored)
            if frames is None:
                logger.warning("no dataset given: mid-band predictions cannot become mask labels")
            expanded, report.tier_counts = _expand(scored, report.thresholds, frames, self.cfg.expand_min_pts)

            existing_boxes = [label_box(l) for l in merged]
            for label in expanded:
                if self._is_duplicate(label, merged, existing_boxes):
                    report.duplicates_skipped += 1
                    continue
                merged.append(label)
                existing_boxes.append(label_box(label))
                report.expanded_added += 1

        report.labels_out = len(merged)
        logger.info(
            "round %d: %d masks upgraded, %d labels added, %d total",
            round_index, report.upgrade.upgraded, report.expanded_added, report.labels_out,
        )
        return merged, report
