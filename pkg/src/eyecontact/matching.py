"""Box overlap and one-to-one assignment of detections to ground truth."""

from __future__ import annotations

from typing import Sequence

from .data import Box, MATCH_IOU_THRESHOLD, iou

RECALL_IOU_THRESHOLD = 0.5


def match_instances(
    gt_boxes: Sequence[Box],
    det_boxes: Sequence[Box],
    threshold: float = MATCH_IOU_THRESHOLD,
) -> list[tuple[int, int, float]]:
    """Greedy one-to-one matching by descending overlap.

    Pairs below ``threshold`` are never matched.  Exact overlap ties are
    broken toward the lower detection index, then the lower ground-truth
    index, so the result is independent of candidate enumeration order.
    Returns (gt_index, det_index, iou) triples.
    """
    candidates: list[tuple[float, int, int]] = []
    for gi, gt in enumerate(gt_boxes):
        for di, det in enumerate(det_boxes):
            overlap = iou(gt, det)
            if overlap >= threshold:
                candidates.append((overlap, di, gi))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

    matched_gt: set[int] = set()
    matched_det: set[int] = set()
    matches: list[tuple[int, int, float]] = []
    for overlap, di, gi in candidates:
        if gi in matched_gt or di in matched_det:
            continue
        matched_gt.add(gi)
        matched_det.add(di)
        matches.append((gi, di, overlap))
    matches.sort(key=lambda m: m[0])
    return matches
