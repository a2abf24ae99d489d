"""Evaluation protocol: detection recall, balanced average precision, quartiles.

Detection and classification are scored separately.  Recall counts labeled
ground-truth boxes matched by a detected pose at IoU >= 0.5.  Classification
AP is computed only over detections matched to labeled ground truth at
IoU >= 0.3 (unmatched ground truth counts against recall, not AP), on
class-balanced subsamples drawn with 10 fixed seeds; the mean and standard
deviation over seeds are reported, plus a per-box-height-quartile breakdown.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import ceil
from typing import Sequence

import numpy as np

from .data import (
    Box,
    ImageRecord,
    N_BALANCED_SEEDS,
    Split,
    Vote,
    balanced_samples,
)
from .matching import MATCH_IOU_THRESHOLD, RECALL_IOU_THRESHOLD, match_instances
from .net import Mode, NetworkParams, forward
from .pose import Pose, Subset, enclosing_box, normalize_pose

__all__ = [
    "ScoredInstance",
    "QuartileResult",
    "EvalReport",
    "MatchedInstance",
    "average_precision",
    "detection_recall",
    "match_records",
    "quartile_breakdown",
    "evaluate",
]


@dataclass(frozen=True)
class ScoredInstance:
    """A matched instance with its predicted probability and binary label."""

    score: float
    label: int
    gt_height: float = 0.0
    dataset_tag: str = ""

    def __post_init__(self) -> None:
        if not 0.0 < self.score < 1.0:
            raise ValueError(f"score must lie strictly in (0, 1), got {self.score}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class QuartileResult:
    lo_px: float
    hi_px: float
    ap: float | None
    n_items: int

    def to_dict(self) -> dict:
        return {"lo_px": self.lo_px, "hi_px": self.hi_px, "ap": self.ap}


@dataclass
class EvalReport:
    dataset: str
    recall_iou50: float
    ap_mean: float
    ap_std: float
    ap_seeds: list[float]
    quartiles: list[QuartileResult]
    n_gt: int
    n_matched: int

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "recall_iou50": self.recall_iou50,
            "ap_mean": self.ap_mean,
            "ap_std": self.ap_std,
            "ap_seeds": self.ap_seeds,
            "quartiles": [q.to_dict() for q in self.quartiles],
            "n_gt": self.n_gt,
            "n_matched": self.n_matched,
        }

    def to_text(self) -> str:
        """Aligned one-row rendering: AP mean +/- std with recall in brackets."""
        name = self.dataset or "dataset"
        lines = [
            "eye-contact AP (%) [detection recall (%)]",
            f"{name:<20} {100 * self.ap_mean:5.1f} +/- {100 * self.ap_std:4.1f} "
            f"[{100 * self.recall_iou50:5.1f}]",
            f"{'':<20} matched {self.n_matched} / {self.n_gt} labeled instances",
            f"{'':<20} AP by box height quartile:",
        ]
        for q in self.quartiles:
            ap = f"{100 * q.ap:5.1f}" if q.ap is not None else "  n/a"
            lines.append(f"{'':<20}   {q.lo_px:7.1f} - {q.hi_px:7.1f} px: {ap}")
        return "\n".join(lines)


def average_precision(items: Sequence[ScoredInstance]) -> float:
    """Step-interpolated average precision.

    Items are ranked by descending score with ties kept in input order
    (AP is tie-sensitive, so the rule is part of the contract).  The sum
    of precision-at-positive-ranks is accumulated in exact rational
    arithmetic and rounded once at the end, so any two correct computations
    of the same ranking agree bit for bit.
    """
    scores = np.array([it.score for it in items], dtype=np.float64)
    labels = np.array([it.label for it in items], dtype=np.int64)
    return _ap(scores, labels)


def _ap(scores: np.ndarray, labels: np.ndarray) -> float:
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise ValueError("average precision needs both a positive and a negative")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    total = Fraction(0)
    tp = 0
    for rank, is_pos in enumerate(ranked, start=1):
        if is_pos:
            tp += 1
            total += Fraction(tp, rank)
    return float(total / n_pos)


def detection_recall(gt_labeled: Sequence[Box], detections: Sequence[Box]) -> float:
    """Fraction of labeled ground-truth boxes matched one-to-one at IoU >= 0.5."""
    if not gt_labeled:
        raise ValueError("detection recall needs at least one labeled ground-truth box")
    matches = match_instances(gt_labeled, detections, RECALL_IOU_THRESHOLD)
    return len(matches) / len(gt_labeled)


def _balanced_ap_seeds(items: Sequence[ScoredInstance]) -> list[float]:
    labels = [it.label for it in items]
    seed_sets = balanced_samples(labels, N_BALANCED_SEEDS)
    return [_ap_subset(items, idx) for idx in seed_sets]


def _ap_subset(items: Sequence[ScoredInstance], indices: Sequence[int]) -> float:
    scores = np.array([items[i].score for i in indices], dtype=np.float64)
    labels = np.array([items[i].label for i in indices], dtype=np.int64)
    return _ap(scores, labels)


def _nearest_rank(sorted_values: np.ndarray, percentile: float) -> float:
    rank = ceil(percentile / 100.0 * len(sorted_values))
    return float(sorted_values[max(rank, 1) - 1])


def quartile_breakdown(items: Sequence[ScoredInstance]) -> list[QuartileResult]:
    """Balanced AP per box-height quartile of the evaluated set.

    Boundaries are the nearest-rank 25/50/75 percentiles of gt_height.  A
    quartile whose items cannot support the balanced protocol (single class,
    or fewer negatives than positives) is reported with ap None; the others
    are still computed.
    """
    if len(items) < 4:
        raise ValueError("quartile breakdown needs at least 4 items")
    heights = np.sort(np.array([it.gt_height for it in items], dtype=np.float64))
    b25 = _nearest_rank(heights, 25.0)
    b50 = _nearest_rank(heights, 50.0)
    b75 = _nearest_rank(heights, 75.0)
    lo, hi = float(heights[0]), float(heights[-1])
    bounds = [(lo, b25), (b25, b50), (b50, b75), (b75, hi)]

    def bucket_of(h: float) -> int:
        if h <= b25:
            return 0
        if h <= b50:
            return 1
        if h <= b75:
            return 2
        return 3

    buckets: list[list[ScoredInstance]] = [[], [], [], []]
    for it in items:
        buckets[bucket_of(it.gt_height)].append(it)

    results = []
    for (q_lo, q_hi), bucket in zip(bounds, buckets):
        ap = None
        if bucket:
            try:
                ap = float(np.mean(_balanced_ap_seeds(bucket)))
            except ValueError:
                ap = None
        results.append(QuartileResult(lo_px=q_lo, hi_px=q_hi, ap=ap, n_items=len(bucket)))
    return results


# --------------------------------------------------------------------------
# Record-level pipeline


@dataclass(frozen=True)
class MatchedInstance:
    """A ground-truth instance paired with a detected pose at IoU >= 0.3."""

    image_id: str
    instance_index: int
    label: Vote | None
    features: np.ndarray  # full normalized vector, length 51
    gt_height: float
    match_iou: float


def match_records(
    records: Sequence[ImageRecord], labeled_only: bool = True
) -> list[MatchedInstance]:
    """Re-derive the pose-to-ground-truth assignment for every record.

    Detections are all poses present in a record; ground truth is the
    record's instances (restricted to consensus-labeled ones when
    ``labeled_only``).  Matched instances come back with their full
    normalized feature vector.
    """
    out: list[MatchedInstance] = []
    for record in records:
        poses: list[Pose] = [i.pose for i in record.instances if i.pose is not None]
        if not poses:
            continue
        det_boxes = [Box(*enclosing_box(p)) for p in poses]
        gt_indices = [
            i
            for i, inst in enumerate(record.instances)
            if not labeled_only or inst.label in (Vote.LOOKING, Vote.NOT_LOOKING)
        ]
        gt_boxes = [record.instances[i].gt_box for i in gt_indices]
        for gi, di, overlap in match_instances(gt_boxes, det_boxes, MATCH_IOU_THRESHOLD):
            inst_index = gt_indices[gi]
            inst = record.instances[inst_index]
            features = normalize_pose(poses[di], record.width).values
            out.append(
                MatchedInstance(
                    image_id=record.image_id,
                    instance_index=inst_index,
                    label=inst.label,
                    features=features,
                    gt_height=inst.gt_box.h,
                    match_iou=overlap,
                )
            )
    return out


def score_matched(
    params: NetworkParams,
    subset: Subset,
    matched: Sequence[MatchedInstance],
) -> np.ndarray:
    """Deterministic probabilities for matched instances (batched EVAL forward)."""
    if not matched:
        return np.zeros(0, dtype=np.float64)
    full = np.stack([m.features for m in matched])
    batch = full[:, list(subset.value_indices)]
    probs, _ = forward(params, batch, Mode.EVAL)
    return probs


def _recall_counts(records: Sequence[ImageRecord]) -> tuple[int, int]:
    """(matched labeled GT at IoU >= 0.5, total labeled GT) across records."""
    n_hit = 0
    n_gt = 0
    for record in records:
        gt_boxes = [
            inst.gt_box
            for inst in record.instances
            if inst.label in (Vote.LOOKING, Vote.NOT_LOOKING)
        ]
        if not gt_boxes:
            continue
        n_gt += len(gt_boxes)
        det_boxes = [
            Box(*enclosing_box(inst.pose))
            for inst in record.instances
            if inst.pose is not None
        ]
        n_hit += len(match_instances(gt_boxes, det_boxes, RECALL_IOU_THRESHOLD))
    return n_hit, n_gt


def evaluate(
    params: NetworkParams,
    subset: Subset,
    records: Sequence[ImageRecord],
    dataset_tag: str = "",
) -> EvalReport:
    """Run the full protocol on the test split of ``records``.

    Pipeline: match detections to labeled ground truth at IoU 0.3, normalize
    and slice each matched pose, score it with an EVAL-mode forward pass,
    then report recall at IoU 0.5 plus balanced AP over 10 fixed seeds and
    its quartile breakdown.  Deterministic for a fixed (params, records).
    """
    test_records = [r for r in records if r.split is Split.TEST]
    if not test_records:
        raise ValueError("dataset has no test split")

    matched = [m for m in match_records(test_records, labeled_only=True) if m.label is not None]
    if not matched:
        raise ValueError("no labeled ground-truth instance was matched by a pose")

    n_hit, n_gt = _recall_counts(test_records)
    scores = score_matched(params, subset, matched)
    items = [
        ScoredInstance(
            score=float(s),
            label=1 if m.label is Vote.LOOKING else 0,
            gt_height=m.gt_height,
            dataset_tag=dataset_tag,
        )
        for s, m in zip(scores, matched)
    ]

    ap_seeds = _balanced_ap_seeds(items)
    return EvalReport(
        dataset=dataset_tag,
        recall_iou50=n_hit / n_gt,
        ap_mean=float(np.mean(ap_seeds)),
        ap_std=float(np.std(ap_seeds)),
        ap_seeds=[float(a) for a in ap_seeds],
        quartiles=quartile_breakdown(items) if len(items) >= 4 else [],
        n_gt=n_gt,
        n_matched=len(matched),
    )
