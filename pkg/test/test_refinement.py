import math

import numpy as np
import pytest

from app.config import PipelineConfig
from app.exceptions import InsufficientScores, ScopeMismatch
from app.models.geometry import Box3D
from app.models.labels import AlignmentScore, AugmentationSpec, BoxLabel, DualThresholds, MaskLabel
from app.services.geometry import angle_diff
from app.services.refinement import (
    LabelRefiner,
    alignment_scores,
    apply_augmentation,
    dual_thresholds,
    expand_supervision,
    filter_high_confidence,
    greedy_match,
    invert_augmentation,
    mask2box,
    realign_predictions,
)
from conftest import box, frame, prediction


def shift_for_iou(target: float, length: float = 4.0) -> float:
    """Shift along the length of an l x w box that leaves `target` BEV IoU with the original"""
    return length * (1 - target) / (1 + target)


def scored(*values):
    return [AlignmentScore(prediction=prediction(x=10.0 * i), score=v) for i, v in enumerate(values)]


def mask_of(b: Box3D, frame_id=0, class_label="car") -> MaskLabel:
    return MaskLabel.from_points(frame_id, b.corners(), class_label)


def exhaustive_thresholds(values):
    """Thresholds from the best of all splits of the sorted values into three runs"""
    v = np.sort(values)
    best_cost, centers = np.inf, None
    for i in range(1, len(v) - 1):
        for j in range(i + 1, len(v)):
            groups = (v[:i], v[i:j], v[j:])
            cost = sum(float(((g - g.mean()) ** 2).sum()) for g in groups)
            if cost < best_cost:
                best_cost, centers = cost, [g.mean() for g in groups]
    return (centers[0] + centers[1]) / 2, (centers[1] + centers[2]) / 2


class TestFilterHighConfidence:
    preds = [prediction(confidence=c) for c in (0.2, 0.6, 0.9)]

    def test_threshold_keeps_order(self):
        assert [p.confidence for p in filter_high_confidence(self.preds, 0.5)] == [0.6, 0.9]

    def test_zero_keeps_everything(self):
        assert filter_high_confidence(self.preds, 0.0) == self.preds

    def test_one_keeps_only_certain(self):
        assert filter_high_confidence(self.preds + [prediction(confidence=1.0)], 1.0) == [prediction(confidence=1.0)]


class TestMask2Box:
    def test_matching_prediction_upgrades_mask(self):
        target = box(x=3.0, y=1.0, theta=0.4)
        labels, report = mask2box([mask_of(target)], [prediction(x=3.0, y=1.0, theta=0.4)], 0.5)
        assert isinstance(labels[0], BoxLabel)
        assert labels[0].box == target
        assert (report.upgraded, report.retained) == (1, 0)
        assert report.upgrades[0].iou == pytest.approx(1.0, abs=1e-6)

    def test_no_prediction_within_threshold(self):
        labels, report = mask2box([mask_of(box())], [prediction(x=3.5)], 0.5)
        assert isinstance(labels[0], MaskLabel) and report.retained == 1

    def test_other_class_never_matches(self):
        labels, _ = mask2box([mask_of(box())], [prediction(class_label="truck")], 0.1)
        assert isinstance(labels[0], MaskLabel)

    def test_box_labels_pass_through(self):
        existing = BoxLabel(frame_id=0, box=box(), class_label="car")
        labels, report = mask2box([existing], [prediction()], 0.1)
        assert labels == [existing] and report.masks_in == 0

    def test_greedy_takes_best_pair_first(self):
        ious = np.array([[0.8, 0.6], [0.7, 0.0]])
        assert greedy_match(ious, 0.5) == [(0, 0, 0.8)]

    def test_best_overlapping_mask_claims_the_prediction(self):
        first = box()
        second = box(x=shift_for_iou(0.8), y=shift_for_iou(0.7, length=2.0))
        best = prediction(x=shift_for_iou(0.8))
        other = prediction(y=-shift_for_iou(0.6, length=2.0))
        labels, report = mask2box([mask_of(first), mask_of(second)], [other, best], 0.5)

        assert isinstance(labels[0], BoxLabel) and labels[0].box == best.box
        assert isinstance(labels[1], MaskLabel)
        assert (report.upgraded, report.retained) == (1, 1)
        assert report.upgrades[0].iou == pytest.approx(0.8, abs=1e-6)

    def test_greedy_respects_minimum(self):
        assert greedy_match(np.array([[0.2]]), 0.3) == []


class TestAugmentation:
    def test_scale_doubles_box(self):
        out = apply_augmentation(AugmentationSpec(scale=2.0), [box(x=1.0, y=2.0, z=0.5)])[0]
        assert (out.x, out.y, out.z, out.l, out.w, out.h) == pytest.approx((2.0, 4.0, 1.0, 8.0, 4.0, 3.0))

    def test_flip_x_mirrors_heading(self):
        out = apply_augmentation(AugmentationSpec(flip_x=True), [box(x=1.0, theta=0.3)])[0]
        assert out.x == pytest.approx(-1.0)
        assert out.theta == pytest.approx(math.pi - 0.3)

    def test_points_follow_boxes(self):
        spec = AugmentationSpec(rotation=0.7, flip_y=True, scale=1.3)
        b = box(x=2.0, y=-1.0, z=0.4, theta=0.2)
        pts = np.random.default_rng(0).uniform(-0.5, 0.5, size=(30, 3)) + b.center
        assert apply_augmentation(spec, [b])[0].contains(apply_augmentation(spec, pts)).all()

    def test_invert_undoes_apply(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            spec = AugmentationSpec(
                rotation=rng.uniform(-math.pi, math.pi),
                flip_x=bool(rng.integers(2)),
                flip_y=bool(rng.integers(2)),
                scale=rng.uniform(0.5, 2.0),
            )
            b = Box3D.from_array([*rng.uniform(-50, 50, 3), *rng.uniform(0.5, 6, 3), rng.uniform(-math.pi, math.pi)])
            back = invert_augmentation(spec, apply_augmentation(spec, [b]))[0]
            np.testing.assert_allclose(back.as_array()[:6], b.as_array()[:6], atol=1e-9)
            assert angle_diff(back.theta, b.theta) < 1e-9

    def test_realign_uses_frame_spec_before_global(self):
        specs = [AugmentationSpec(scale=2.0), AugmentationSpec(frame_id=1, rotation=math.pi / 2)]
        augmented = [prediction(frame_id=0, x=2.0), prediction(frame_id=1, y=1.0)]
        back = realign_predictions(augmented, specs)
        assert back[0].box.x == pytest.approx(1.0)
        assert back[1].box.x == pytest.approx(1.0) and back[1].box.y == pytest.approx(0.0, abs=1e-12)

    def test_realign_without_spec(self):
        with pytest.raises(ScopeMismatch):
            realign_predictions([prediction(frame_id=3)], [AugmentationSpec(frame_id=0)])


class TestAlignmentScores:
    def test_identical_predictions_score_one(self):
        preds = [prediction(x=0.0), prediction(x=10.0, theta=0.5)]
        assert [s.score for s in alignment_scores(preds, preds)] == pytest.approx([1.0, 1.0])

    def test_nothing_realigned_scores_zero(self):
        assert [s.score for s in alignment_scores([prediction()], [])] == [0.0]

    def test_best_overlap_wins(self):
        realigned = [prediction(x=shift_for_iou(0.4)), prediction(x=shift_for_iou(0.9))]
        assert alignment_scores([prediction()], realigned)[0].score == pytest.approx(0.9)

    def test_frames_are_kept_apart(self):
        assert alignment_scores([prediction(frame_id=0)], [prediction(frame_id=1)])[0].score == 0.0


class TestDualThresholds:
    def test_trimodal_scores(self):
        rng = np.random.default_rng(2)
        values = np.concatenate([rng.normal(m, 0.02, 50) for m in (0.1, 0.5, 0.9)])
        thresholds = dual_thresholds(scored(*np.clip(values, 0, 1)))
        assert thresholds.mu_low == pytest.approx(0.3, abs=0.03)
        assert thresholds.mu_high == pytest.approx(0.7, abs=0.03)

    def test_all_equal_scores(self):
        assert dual_thresholds(scored(0.7, 0.7, 0.7, 0.7)) == DualThresholds(mu_low=0.7, mu_high=0.7)

    def test_two_distinct_values(self):
        t = dual_thresholds(scored(0.2, 0.2, 0.8))
        assert t.mu_low == pytest.approx(0.5) and t.mu_high == pytest.approx(0.5)

    def test_too_few_scores(self):
        with pytest.raises(InsufficientScores):
            dual_thresholds(scored(0.1, 0.9))

    def test_thresholds_are_ordered(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            t = dual_thresholds(scored(*rng.uniform(0, 1, int(rng.integers(3, 40)))))
            assert 0.0 <= t.mu_low <= t.mu_high <= 1.0

    def test_matches_exhaustive_partition_search(self):
        rng = np.random.default_rng(12)
        for _ in range(300):
            values = rng.uniform(0, 1, int(rng.integers(3, 31)))
            expected = exhaustive_thresholds(values)
            t = dual_thresholds(scored(*values))
            assert (t.mu_low, t.mu_high) == pytest.approx(expected, abs=1e-9)

    def test_trimodal_tiers_split_evenly(self):
        rng = np.random.default_rng(7)
        values = np.concatenate([m + rng.uniform(-0.02, 0.02, 50) for m in (0.1, 0.5, 0.9)])
        items = scored(*values)
        inside = np.vstack(
            [rng.uniform([10.0 * i - 1.5, -0.8, 0.0], [10.0 * i + 1.5, 0.8, 0.5], size=(6, 3)) for i in range(150)]
        )
        thresholds = dual_thresholds(items)
        assert 0.2 < thresholds.mu_low < 0.4 and 0.6 < thresholds.mu_high < 0.8

        out = expand_supervision(items, thresholds, {0: frame(0, inside)})
        kinds = [label.kind for label in out]
        assert (kinds.count("box"), kinds.count("mask"), len(items) - len(out)) == (50, 50, 50)


class TestExpandSupervision:
    thresholds = DualThresholds(mu_low=0.3, mu_high=0.7)

    def test_tiers(self):
        items = [
            AlignmentScore(prediction=prediction(x=0.0), score=0.95),
            AlignmentScore(prediction=prediction(x=20.0), score=0.5),
            AlignmentScore(prediction=prediction(x=40.0), score=0.1),
        ]
        inside = np.random.default_rng(4).uniform([19.0, -0.5, 0.0], [21.0, 0.5, 0.5], size=(12, 3))
        out = expand_supervision(items, self.thresholds, {0: frame(0, inside)})
        assert [label.kind for label in out] == ["box", "mask"]
        assert out[0].box == items[0].prediction.box
        assert len(out[1].points) == 12

    def test_mid_band_needs_points(self):
        items = [AlignmentScore(prediction=prediction(), score=0.5)]
        assert expand_supervision(items, self.thresholds, None) == []
        assert expand_supervision(items, self.thresholds, {0: frame(0, [[0.0, 0.0, 0.2]])}, min_pts=5) == []

    def test_boundaries(self):
        items = [
            AlignmentScore(prediction=prediction(), score=0.7),
            AlignmentScore(prediction=prediction(), score=0.3),
        ]
        inside = np.random.default_rng(5).uniform([-1.0, -0.5, 0.0], [1.0, 0.5, 0.5], size=(8, 3))
        out = expand_supervision(items, self.thresholds, {0: frame(0, inside)})
        assert [label.kind for label in out] == ["mask", "mask"]


class TestLabelRefiner:
    spec = AugmentationSpec(rotation=0.5, scale=1.2)

    def test_without_predictions_labels_pass_through(self):
        labels = [mask_of(box())]
        merged, report = LabelRefiner(PipelineConfig()).refine(labels, [], [], [self.spec])
        assert merged == labels
        assert report.expansion_skipped is not None and report.labels_out == 1

    def test_augmented_frames_must_match(self):
        with pytest.raises(ScopeMismatch):
            LabelRefiner(PipelineConfig()).refine([], [prediction(frame_id=0)], [prediction(frame_id=1)], [self.spec])

    def test_predictions_outside_dataset(self):
        with pytest.raises(ScopeMismatch):
            LabelRefiner(PipelineConfig()).refine([], [prediction(frame_id=4)], [], [], frames={0: frame(0, [[0.0, 0.0, 0.0]])})

    def test_full_round(self):
        a, b, c = prediction(x=0.0), prediction(x=20.0), prediction(x=40.0)
        shifted = [a, prediction(x=20.0 + shift_for_iou(0.5)), prediction(x=40.0 + shift_for_iou(0.1))]
        augmented = [
            p.model_copy(update={"box": apply_augmentation(self.spec, [p.box])[0]}) for p in shifted
        ]
        inside = np.random.default_rng(6).uniform([19.0, -0.5, 0.0], [21.0, 0.5, 0.5], size=(10, 3))

        merged, report = LabelRefiner(PipelineConfig()).refine(
            [mask_of(a.box)], [a, b, c], augmented, [self.spec], frames={0: frame(0, inside)}, round_index=2
        )

        assert [label.kind for label in merged] == ["box", "mask"]
        assert merged[0].box == a.box
        assert report.round == 2
        assert report.thresholds.mu_low == pytest.approx(0.3, abs=1e-6)
        assert report.thresholds.mu_high == pytest.approx(0.75, abs=1e-6)
        assert report.tier_counts == {"box": 1, "mask": 1, "discarded": 1}
        assert (report.upgrade.upgraded, report.duplicates_skipped, report.expanded_added) == (1, 1, 1)
        assert report.labels_out == 2
