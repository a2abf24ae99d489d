from fractions import Fraction

import numpy as np
import pytest

from eyecontact import net
from eyecontact.data import AnnotatedInstance, Box, ImageRecord, Split, Vote
from eyecontact.metrics import (
    EvalReport,
    ScoredInstance,
    average_precision,
    detection_recall,
    evaluate,
    match_records,
    quartile_breakdown,
)
from eyecontact.pose import N_KEYPOINTS, Pose, Subset
from eyecontact.synth import SynthConfig, synth_generate


def items_from(scores, labels, heights=None):
    heights = heights if heights is not None else [0.0] * len(scores)
    return [
        ScoredInstance(score=s, label=l, gt_height=h)
        for s, l, h in zip(scores, labels, heights)
    ]


def brute_force_ap(scores, labels) -> float:
    """Independent oracle: walk every cutoff rank, recount precision/recall
    from scratch, and accumulate (R_k - R_{k-1}) * P_k in exact arithmetic."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    n_pos = sum(labels)
    ap = Fraction(0)
    prev_recall = Fraction(0)
    for k in range(1, len(order) + 1):
        kept = order[:k]
        tp = sum(1 for i in kept if labels[i] == 1)
        precision = Fraction(tp, k)
        recall = Fraction(tp, n_pos)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return float(ap)


class TestAveragePrecision:
    def test_perfect_ranking(self):
        assert average_precision(items_from([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])) == 1.0

    def test_hand_computed(self):
        # positives at ranks 1 and 3: (1/1 + 2/3) / 2 = 5/6
        ap = average_precision(items_from([0.9, 0.8, 0.7], [1, 0, 1]))
        assert ap == float(Fraction(5, 6))

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            average_precision(items_from([0.4, 0.6], [1, 1]))
        with pytest.raises(ValueError, match="positive"):
            average_precision(items_from([0.4, 0.6], [0, 0]))

    def test_brute_force_equivalence(self):
        rng = np.random.default_rng(123)
        for _ in range(2000):
            n = int(rng.integers(2, 9))
            labels = rng.integers(0, 2, size=n)
            if labels.sum() in (0, n):
                labels[0] = 1 - labels[0]
            scores = rng.choice([0.1, 0.25, 0.5, 0.75, 0.9], size=n)  # many ties
            ap = average_precision(items_from(scores.tolist(), labels.tolist()))
            assert ap == brute_force_ap(scores.tolist(), labels.tolist())

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(5)
        scores = rng.uniform(0.01, 0.99, size=20)
        labels = ([1, 0] * 10)[:20]
        base = average_precision(items_from(scores, labels))
        squeezed = 1.0 / (1.0 + np.exp(-(scores * 4 - 2)))  # strictly increasing
        assert average_precision(items_from(squeezed, labels)) == base

    def test_perfect_iff_separated(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            n = int(rng.integers(2, 10))
            labels = rng.integers(0, 2, size=n)
            if labels.sum() in (0, n):
                labels[0] = 1 - labels[0]
            scores = rng.uniform(0.01, 0.99, size=n)
            ap = average_precision(items_from(scores, labels))
            min_pos = scores[labels == 1].min()
            max_neg = scores[labels == 0].max()
            assert (ap == 1.0) == bool(min_pos > max_neg)

    def test_tie_break_by_input_order(self):
        # All scores equal: ranking is input order, so AP is sensitive to
        # where the positives sit in the list.
        front = average_precision(items_from([0.5, 0.5, 0.5], [1, 0, 0]))
        back = average_precision(items_from([0.5, 0.5, 0.5], [0, 0, 1]))
        assert front == 1.0
        assert back == float(Fraction(1, 3))


class TestDetectionRecall:
    def test_all_matched(self):
        boxes = [Box(0, 0, 10, 20), Box(50, 0, 10, 20)]
        assert detection_recall(boxes, list(boxes)) == 1.0

    def test_no_detections(self):
        assert detection_recall([Box(0, 0, 10, 20)], []) == 0.0

    def test_three_of_four(self):
        gt = [Box(i * 100, 0, 10, 20) for i in range(4)]
        assert detection_recall(gt, gt[:3]) == 0.75

    def test_empty_gt_rejected(self):
        with pytest.raises(ValueError, match="ground-truth"):
            detection_recall([], [Box(0, 0, 1, 1)])

    def test_monotone_in_detections(self):
        rng = np.random.default_rng(9)
        gt = [Box(rng.uniform(0, 80), rng.uniform(0, 80), 10, 20) for _ in range(6)]
        dets: list[Box] = []
        prev = 0.0
        for box in gt:
            dets.append(box)
            cur = detection_recall(gt, dets)
            assert cur >= prev
            prev = cur


class TestQuartileBreakdown:
    def test_boundaries_nearest_rank(self):
        items = items_from(
            [0.6, 0.4] * 4, [1, 0] * 4, heights=[1, 2, 3, 4, 5, 6, 7, 8]
        )
        quartiles = quartile_breakdown(items)
        assert [q.lo_px for q in quartiles] == [1, 2, 4, 6]
        assert [q.hi_px for q in quartiles] == [2, 4, 6, 8]

    def test_degenerate_heights_single_bucket(self):
        items = items_from([0.6, 0.4, 0.7, 0.3], [1, 0, 1, 0], heights=[5, 5, 5, 5])
        quartiles = quartile_breakdown(items)
        assert quartiles[0].n_items == 4
        assert quartiles[0].ap is not None
        assert all(q.n_items == 0 and q.ap is None for q in quartiles[1:])

    def test_single_class_quartile_undefined(self):
        items = items_from(
            [0.9, 0.8, 0.6, 0.4, 0.7, 0.3, 0.2, 0.5],
            [1, 1, 1, 0, 1, 0, 1, 0],
            heights=[1, 1, 2, 2, 3, 3, 4, 4],
        )
        quartiles = quartile_breakdown(items)
        assert quartiles[0].ap is None  # both positives
        assert quartiles[1].ap is not None

    def test_needs_four_items(self):
        with pytest.raises(ValueError, match="at least 4"):
            quartile_breakdown(items_from([0.5, 0.6], [0, 1]))


def zeroed_checkpoint(subset=Subset.FULL):
    arch = net.NetworkArch(input_dim=subset.input_dim)
    params = net.init_network(arch, 0)
    params.tensors["stem.fc.w"][:] = 0.0
    return params


def shifted_pose(u0: float, v0: float, w: float, h: float) -> Pose:
    """A pose whose positive-confidence keypoints exactly span (u0, v0, w, h)."""
    kps = np.zeros((N_KEYPOINTS, 3))
    kps[:, 0] = u0 + w / 2
    kps[:, 1] = v0 + h / 2
    kps[:, 2] = 0.8
    kps[0] = (u0, v0, 0.9)
    kps[16] = (u0 + w, v0 + h, 0.9)
    kps[11] = (u0 + w / 2 - 1, v0 + h / 2, 1.0)
    kps[12] = (u0 + w / 2 + 1, v0 + h / 2, 1.0)
    return Pose(kps)


class TestEvaluate:
    def test_report_shape_and_determinism(self):
        records = synth_generate(SynthConfig(n_images=120, noise_sigma=1.0, seed=4))
        params = zeroed_checkpoint()
        a = evaluate(params, Subset.FULL, records, "synth")
        b = evaluate(params, Subset.FULL, records, "synth")
        assert len(a.ap_seeds) == 10
        assert a.to_dict() == b.to_dict()
        # Uninformative scores: balanced AP sits near 1/2 up to tie effects.
        assert 0.3 <= a.ap_mean <= 0.7

    def test_requires_test_split(self):
        records = [r for r in synth_generate(SynthConfig(n_images=10, seed=0)) if r.split is Split.TRAIN]
        with pytest.raises(ValueError, match="test split"):
            evaluate(zeroed_checkpoint(), Subset.FULL, records)

    def test_matched_at_iou_between_03_and_05_scored_but_not_recalled(self):
        # Pose box (0, 0, 10, 8) against GT (0, 0, 10, 20): IoU = 0.4, so the
        # instance enters the classification set but does not count as recalled.
        pose = shifted_pose(0, 0, 10, 8)
        inst = AnnotatedInstance(gt_box=Box(0, 0, 10, 20), label=Vote.LOOKING, pose=pose)
        neg = AnnotatedInstance(
            gt_box=Box(100, 0, 10, 20),
            label=Vote.NOT_LOOKING,
            pose=shifted_pose(100, 0, 10, 20),
        )
        record = ImageRecord("t", 640, 480, Split.TEST, [inst, neg])
        report = evaluate(zeroed_checkpoint(), Subset.FULL, [record], "x")
        assert report.n_matched == 2
        assert report.recall_iou50 == 0.5

    def test_unmatched_gt_excluded_from_ap_but_counted_in_recall(self):
        matched_pos = AnnotatedInstance(
            gt_box=Box(0, 0, 10, 20), label=Vote.LOOKING, pose=shifted_pose(0, 0, 10, 20)
        )
        matched_neg = AnnotatedInstance(
            gt_box=Box(200, 0, 10, 20), label=Vote.NOT_LOOKING, pose=shifted_pose(200, 0, 10, 20)
        )
        bare = AnnotatedInstance(gt_box=Box(400, 0, 10, 20), label=Vote.LOOKING)
        record = ImageRecord("t", 640, 480, Split.TEST, [matched_pos, matched_neg, bare])
        report = evaluate(zeroed_checkpoint(), Subset.FULL, [record], "x")
        assert report.n_gt == 3
        assert report.n_matched == 2
        assert report.recall_iou50 == pytest.approx(2 / 3)

    def test_no_matches_rejected(self):
        bare = AnnotatedInstance(gt_box=Box(0, 0, 10, 20), label=Vote.LOOKING)
        record = ImageRecord("t", 640, 480, Split.TEST, [bare])
        with pytest.raises(ValueError, match="matched"):
            evaluate(zeroed_checkpoint(), Subset.FULL, [record])


class TestMatchRecords:
    def test_labeled_only_filter(self):
        labeled = AnnotatedInstance(
            gt_box=Box(0, 0, 10, 20), label=Vote.LOOKING, pose=shifted_pose(0, 0, 10, 20)
        )
        unlabeled = AnnotatedInstance(
            gt_box=Box(100, 0, 10, 20), label=None, pose=shifted_pose(100, 0, 10, 20)
        )
        record = ImageRecord("m", 640, 480, Split.TRAIN, [labeled, unlabeled])
        assert len(match_records([record], labeled_only=True)) == 1
        assert len(match_records([record], labeled_only=False)) == 2

    def test_features_are_full_vectors(self):
        records = synth_generate(SynthConfig(n_images=5, seed=0))
        matched = match_records(records)
        assert matched and all(m.features.shape == (51,) for m in matched)
        assert all(m.match_iou >= 0.3 for m in matched)


class TestReportRendering:
    def test_text_row_contains_numbers(self):
        report = EvalReport(
            dataset="synth",
            recall_iou50=1.0,
            ap_mean=0.9514,
            ap_std=0.012,
            ap_seeds=[0.95] * 10,
            quartiles=[],
            n_gt=10,
            n_matched=10,
        )
        text = report.to_text()
        assert "95.1" in text and "100.0" in text and "synth" in text
