# app/services/labelgen.py
import concurrent.futures
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from tqdm import tqdm

from app.config import LabelGenConfig, PipelineConfig
from app.exceptions import ClickLabelError, NoClusterFound
from app.models.labels import (
    BoxLabel,
    ClickAnnotation,
    ClickDiagnostic,
    GenerationReport,
    GroundTruthBox,
    MaskLabel,
    PseudoLabel,
    SkippedClick,
)
from app.models.scene import FrameWindow, MotionState, PointCloudFrame
from app.services.clustering import dbscan, nearest_cluster
from app.services.geometry import fit_lshape_box
from app.services.sequence import (
    bev_neighbors,
    build_window,
    classify_motion,
    neighborhood_series,
    persistence_profile,
    prepare_sequence,
)

logger = logging.getLogger(__name__)


def _foreground(points: np.ndarray, click: ClickAnnotation, cfg: LabelGenConfig) -> np.ndarray:
    """Points of the density cluster nearest to the click"""
    params = cfg.cluster_params_for(click.class_label)
    clusters = dbscan(points, params, cfg.projection)
    if not clusters:
        raise NoClusterFound(
            f"no density cluster among {len(points)} points near ({click.x_o:.2f}, {click.y_o:.2f})"
        )
    chosen = nearest_cluster(clusters, click.xy)
    return points[chosen.member_indices]


def _gather_radius(click: ClickAnnotation, cfg: LabelGenConfig) -> float:
    return cfg.radius_for(click.class_label) * cfg.aggregation_scale


def _click2box(window: FrameWindow, click: ClickAnnotation, cfg: LabelGenConfig) -> Tuple[BoxLabel, int]:
    radius = _gather_radius(click, cfg)
    dense = [bev_neighbors(f.points, click.xy, radius) for f in window.frames]
    dense_points = np.vstack(dense) if dense else np.zeros((0, 4))
    foreground = _foreground(dense_points, click, cfg)
    box = fit_lshape_box(foreground)
    label = BoxLabel(frame_id=click.frame_id, box=box, class_label=click.class_label, source_click=click)
    return label, len(foreground)


def _click2mask(frame: PointCloudFrame, click: ClickAnnotation, cfg: LabelGenConfig) -> Tuple[MaskLabel, int]:
    local = bev_neighbors(frame.points, click.xy, _gather_radius(click, cfg))
    foreground = _foreground(local, click, cfg)
    label = MaskLabel.from_points(click.frame_id, foreground, click.class_label, source_click=click)
    return label, len(foreground)


def click2box(window: FrameWindow, click: ClickAnnotation, cfg: LabelGenConfig) -> BoxLabel:
    """
    Box label for a static click from the multi-frame dense cloud D_t

    The window's frames must already be ground-removed and in world coordinates.

    Raises:
        NoClusterFound: D_t holds no density cluster
        DegenerateCluster: the chosen cluster cannot be box-fitted
    """
    return _click2box(window, click, cfg)[0]


def click2mask(frame: PointCloudFrame, click: ClickAnnotation, cfg: LabelGenConfig) -> MaskLabel:
    """Mask label for a dynamic click from the clicked frame alone"""
    return _click2mask(frame, click, cfg)[0]


class ClickOutcome(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    label: Optional[PseudoLabel] = None
    diagnostic: ClickDiagnostic
    skipped: Optional[SkippedClick] = None


class PseudoLabelGenerator:
    """
    Runs the per-click mixed pseudo-label pipeline over one sequence
    """

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.cfg = config.labelgen

    def label_click(
        self, prepared: Sequence[PointCloudFrame], index: int, click: ClickAnnotation
    ) -> ClickOutcome:
        """
        Classify one click's motion state and produce its label

        Args:
            prepared: world-frame, ground-removed frames of the sequence
            index: position of the click in the input batch
            click: the click annotation

        Returns:
            The outcome; label is None and skipped is set when the click fails
        """
        diagnostic = ClickDiagnostic(index=index, frame_id=click.frame_id, class_label=click.class_label)
        try:
            window = build_window(prepared, click.frame_id, self.cfg.k)
            series = neighborhood_series(window, click, self.cfg.radius_for(click.class_label))
            profile = persistence_profile(series)
            motion = classify_motion(profile, self.cfg.tau_duration)
            diagnostic = diagnostic.model_copy(
                update={"motion": motion.value, "ratio": profile.ratio, "delta_t": profile.delta_t, "T": profile.T}
            )

            if motion is MotionState.STATIC:
                label, size = _click2box(window, click, self.cfg)
            else:
                label, size = _click2mask(window.center_frame, click, self.cfg)
            diagnostic = diagnostic.model_copy(update={"cluster_size": size, "label_kind": label.kind})
            return ClickOutcome(label=label, diagnostic=diagnostic)

        except ClickLabelError as e:
            logger.warning("click %d (frame %d) skipped: %s", index, click.frame_id, e.detail)
            skipped = SkippedClick(index=index, frame_id=click.frame_id, error=type(e).__name__, reason=e.detail)
            return ClickOutcome(diagnostic=diagnostic, skipped=skipped)

    def generate(
        self, frames: Sequence[PointCloudFrame], clicks: Sequence[ClickAnnotation]
    ) -> Tuple[List[PseudoLabel], GenerationReport]:
        report = GenerationReport(total_clicks=len(clicks))
        if not clicks:
            return [], report

        prepared = prepare_sequence(frames, self.cfg.ground, self.config.seed, self.config.workers)
        logger.info("labeling %d clicks over %d frames", len(clicks), len(prepared))

        with concurrent.futures.ThreadPoolExecutor(max_workers=self.config.workers) as executor:
            outcomes = list(
                tqdm(
                    executor.map(lambda item: self.label_click(prepared, *item), enumerate(clicks)),
                    total=len(clicks),
                    desc="clicks",
                    disable=None,
                )
            )

        labels: List[PseudoLabel] = []
        for outcome in outcomes:
            report.diagnostics.append(outcome.diagnostic)
            if outcome.diagnostic.motion == MotionState.STATIC.value:
                report.static += 1
            elif outcome.diagnostic.motion == MotionState.DYNAMIC.value:
                report.dynamic += 1
            if outcome.skipped is not None:
                report.skipped.append(outcome.skipped)
                continue
            labels.append(outcome.label)
            if outcome.label.kind == "box":
                report.boxes += 1
            else:
                report.masks += 1

        logger.info(
            "generated %d box and %d mask labels, %d clicks skipped",
            report.boxes, report.masks, len(report.skipped),
        )
        return labels, report


def generate_pseudo_labels(
    frames: Sequence[PointCloudFrame], clicks: Sequence[ClickAnnotation], config: PipelineConfig
) -> Tuple[List[PseudoLabel], GenerationReport]:
    """Public entry point: labels in click order plus the generation report"""
    return PseudoLabelGenerator(config).generate(frames, clicks)


def mix_precise_annotations(
    labels: Sequence[PseudoLabel],
    gt: Sequence[GroundTruthBox],
    count: int,
    seed: int,
) -> Tuple[List[PseudoLabel], int]:
    """
    Replace `count` randomly chosen click labels with their ground-truth boxes

    Only labels whose source click names an instance present in the GT of its
    frame are candidates. Returns the new label list and the number replaced.
    """
    gt_index = {(g.frame_id, g.instance_id): g for g in gt}
    candidates = [
        i
        for i, label in enumerate(labels)
        if label.source_click is not None
        and label.source_click.instance_id is not None
        and (label.frame_id, label.source_click.instance_id) in gt_index
    ]
    if count <= 0 or not candidates:
        return list(labels), 0

    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(candidates, size=min(count, len(candidates)), replace=False).tolist())

    mixed: List[PseudoLabel] = []
    for i, label in enumerate(labels):
        if i in chosen:
            truth = gt_index[(label.frame_id, label.source_click.instance_id)]
            label = BoxLabel(
                frame_id=label.frame_id,
                box=truth.box,
                class_label=label.class_label,
                source_click=label.source_click,
            )
        mixed.append(label)
    return mixed, len(chosen)
