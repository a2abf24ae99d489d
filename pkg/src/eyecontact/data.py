"""Canonical annotation schema, consensus labeling, and balanced sampling.

A dataset is a list of image records, each holding ground-truth pedestrian
instances (bounding box, eye-contact label, optional annotator votes,
optional detected pose).  The on-disk form is UTF-8 JSONL with one record
per line:

    {"image_id": str, "width": int, "height": int,
     "split": "train"|"val"|"test",
     "instances": [{"bbox": [x, y, w, h],
                    "label": "looking"|"not_looking"|"ambiguous"|null,
                    "votes": [str]|null,
                    "keypoints": [[u, v, c] x 17]|null,
                    "track_id": str|null}]}

Unknown fields are rejected in strict mode and logged otherwise.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .pose import N_KEYPOINTS, Pose, enclosing_box

log = logging.getLogger(__name__)

N_ANNOTATORS = 4
CONSENSUS_MIN_AGREEMENT = 3
N_BALANCED_SEEDS = 10
MATCH_IOU_THRESHOLD = 0.3


class SchemaError(ValueError):
    """A dataset file violates the canonical schema.

    ``where`` pinpoints the offending file/line or record so malformed
    entries are reported rather than silently dropped.
    """

    def __init__(self, message: str, where: str = ""):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class Vote(str, enum.Enum):
    LOOKING = "looking"
    NOT_LOOKING = "not_looking"
    AMBIGUOUS = "ambiguous"


class ConsensusResult(str, enum.Enum):
    LOOKING = "looking"
    NOT_LOOKING = "not_looking"
    DISCARDED = "discarded"


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class Box:
    """Axis-aligned pixel box, top-left corner plus size."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h


def iou(a: Box, b: Box) -> float:
    """Intersection area over union area, in [0, 1]."""
    ix = max(a.x, b.x)
    iy = max(a.y, b.y)
    ix2 = min(a.x + a.w, b.x + b.w)
    iy2 = min(a.y + a.h, b.y + b.h)
    iw = max(0.0, ix2 - ix)
    ih = max(0.0, iy2 - iy)
    inter = iw * ih
    if inter <= 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def _pose_box_iou(gt_box: Box, pose: Pose) -> float:
    return iou(gt_box, Box(*enclosing_box(pose)))


@dataclass
class AnnotatedInstance:
    """One ground-truth pedestrian: box, label state, votes, optional matched pose."""

    gt_box: Box
    label: Vote | None = None
    votes: list[Vote] | None = None
    pose: Pose | None = None
    match_iou: float | None = None
    track_id: str | None = None

    def __post_init__(self) -> None:
        if self.votes is not None and len(self.votes) > N_ANNOTATORS:
            raise ValueError(f"at most {N_ANNOTATORS} votes per instance")
        if self.match_iou is not None:
            if self.pose is None:
                raise ValueError("match_iou requires a matched pose")
            if not MATCH_IOU_THRESHOLD <= self.match_iou <= 1.0:
                raise ValueError(
                    f"match_iou must lie in [{MATCH_IOU_THRESHOLD}, 1], got {self.match_iou}"
                )


@dataclass
class ImageRecord:
    image_id: str
    width: int
    height: int
    split: Split
    instances: list[AnnotatedInstance] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")


def consensus_label(votes: Sequence[Vote]) -> ConsensusResult:
    """Resolve exactly four annotator votes into a label.

    An instance keeps a looking/not-looking label only when at least three
    of the four votes agree on it; everything else (including an ambiguous
    majority) is discarded.
    """
    if len(votes) != N_ANNOTATORS:
        raise ValueError(f"consensus needs exactly {N_ANNOTATORS} votes, got {len(votes)}")
    counts = {v: 0 for v in Vote}
    for vote in votes:
        counts[Vote(vote)] += 1
    if counts[Vote.LOOKING] >= CONSENSUS_MIN_AGREEMENT:
        return ConsensusResult.LOOKING
    if counts[Vote.NOT_LOOKING] >= CONSENSUS_MIN_AGREEMENT:
        return ConsensusResult.NOT_LOOKING
    return ConsensusResult.DISCARDED


def balanced_samples(labels: Sequence[int], n_seeds: int = N_BALANCED_SEEDS) -> list[list[int]]:
    """Index sets for class-balanced scoring.

    Each set keeps every positive and draws an equal number of negatives
    uniformly without replacement; set ``s`` uses seed ``s``, so the same
    label vector always yields the same samples.  Indices are returned
    sorted, preserving the original instance order within each set.
    """
    labels_arr = np.asarray(labels, dtype=np.int64)
    pos = np.flatnonzero(labels_arr == 1)
    neg = np.flatnonzero(labels_arr == 0)
    if len(pos) < 1:
        raise ValueError("balanced sampling needs at least one positive")
    if len(neg) < len(pos):
        raise ValueError(
            f"balanced sampling needs at least as many negatives as positives "
            f"({len(neg)} < {len(pos)})"
        )
    sets: list[list[int]] = []
    for seed in range(n_seeds):
        rng = np.random.default_rng(seed)
        chosen = rng.choice(neg, size=len(pos), replace=False)
        sets.append(sorted(int(i) for i in np.concatenate([pos, chosen])))
    return sets


# --------------------------------------------------------------------------
# Canonical JSONL serialization

_RECORD_FIELDS = {"image_id", "width", "height", "split", "instances"}
_INSTANCE_FIELDS = {"bbox", "label", "votes", "keypoints", "track_id"}


def instance_to_dict(inst: AnnotatedInstance) -> dict:
    keypoints = None
    if inst.pose is not None:
        keypoints = [[float(u), float(v), float(c)] for u, v, c in inst.pose.keypoints]
    return {
        "bbox": [inst.gt_box.x, inst.gt_box.y, inst.gt_box.w, inst.gt_box.h],
        "label": inst.label.value if inst.label is not None else None,
        "votes": [v.value for v in inst.votes] if inst.votes is not None else None,
        "keypoints": keypoints,
        "track_id": inst.track_id,
    }


def record_to_dict(record: ImageRecord) -> dict:
    return {
        "image_id": record.image_id,
        "width": record.width,
        "height": record.height,
        "split": record.split.value,
        "instances": [instance_to_dict(i) for i in record.instances],
    }


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise SchemaError(f"missing required field {key!r}", where)
    return obj[key]


def _check_unknown(obj: dict, allowed: set[str], where: str, strict: bool) -> None:
    unknown = set(obj) - allowed
    if not unknown:
        return
    if strict:
        raise SchemaError(f"unknown fields: {sorted(unknown)}", where)
    log.warning("%s: ignoring unknown fields %s", where, sorted(unknown))


def instance_from_dict(obj: dict, where: str, strict: bool = False) -> AnnotatedInstance:
    if not isinstance(obj, dict):
        raise SchemaError("instance must be an object", where)
    _check_unknown(obj, _INSTANCE_FIELDS, where, strict)

    bbox = _require(obj, "bbox", where)
    if not (isinstance(bbox, list) and len(bbox) == 4):
        raise SchemaError("bbox must be a list [x, y, w, h]", where)
    try:
        gt_box = Box(*(float(v) for v in bbox))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"invalid bbox {bbox!r}: {exc}", where) from None

    raw_label = obj.get("label")
    label = None
    if raw_label is not None:
        try:
            label = Vote(raw_label)
        except ValueError:
            raise SchemaError(f"unknown label {raw_label!r}", where) from None

    raw_votes = obj.get("votes")
    votes = None
    if raw_votes is not None:
        if not isinstance(raw_votes, list):
            raise SchemaError("votes must be a list of strings", where)
        try:
            votes = [Vote(v) for v in raw_votes]
        except ValueError as exc:
            raise SchemaError(f"invalid vote in {raw_votes!r}: {exc}", where) from None
        if len(votes) > N_ANNOTATORS:
            raise SchemaError(f"at most {N_ANNOTATORS} votes per instance", where)

    raw_kps = obj.get("keypoints")
    pose = None
    match_iou = None
    if raw_kps is not None:
        if not (isinstance(raw_kps, list) and len(raw_kps) == N_KEYPOINTS):
            raise SchemaError(f"keypoints must be a list of {N_KEYPOINTS} [u, v, c] triples", where)
        try:
            pose = Pose(np.asarray(raw_kps, dtype=np.float64))
        except ValueError as exc:
            raise SchemaError(f"invalid keypoints: {exc}", where) from None
        # A stored pose must plausibly belong to its instance: the keypoint
        # enclosing box has to overlap the ground-truth box at the matching
        # threshold.  The overlap is derived, not serialized.
        match_iou = _pose_box_iou(gt_box, pose)
        if match_iou < MATCH_IOU_THRESHOLD:
            raise SchemaError(
                f"keypoints overlap their bbox at IoU {match_iou:.3f} (< 0.3)", where
            )

    track_id = obj.get("track_id")
    if track_id is not None and not isinstance(track_id, str):
        raise SchemaError("track_id must be a string or null", where)

    # Resolve a missing label from a complete vote set; verify a stored one.
    if votes is not None and len(votes) == N_ANNOTATORS:
        resolved = consensus_label(votes)
        resolved_label = None if resolved is ConsensusResult.DISCARDED else Vote(resolved.value)
        if label is None:
            label = resolved_label if resolved_label is not None else Vote.AMBIGUOUS
        elif label in (Vote.LOOKING, Vote.NOT_LOOKING) and label is not resolved_label:
            raise SchemaError(
                f"label {label.value!r} contradicts the vote consensus", where
            )

    return AnnotatedInstance(
        gt_box=gt_box, label=label, votes=votes, pose=pose,
        match_iou=match_iou, track_id=track_id,
    )


def record_from_dict(obj: dict, where: str = "<record>", strict: bool = False) -> ImageRecord:
    if not isinstance(obj, dict):
        raise SchemaError("record must be an object", where)
    _check_unknown(obj, _RECORD_FIELDS, where, strict)

    image_id = _require(obj, "image_id", where)
    if not isinstance(image_id, str) or not image_id:
        raise SchemaError("image_id must be a non-empty string", where)
    width = _require(obj, "width", where)
    height = _require(obj, "height", where)
    if not isinstance(width, int) or isinstance(width, bool) or width <= 0:
        raise SchemaError(f"width must be a positive integer, got {width!r}", where)
    if not isinstance(height, int) or isinstance(height, bool) or height <= 0:
        raise SchemaError(f"height must be a positive integer, got {height!r}", where)
    raw_split = _require(obj, "split", where)
    try:
        split = Split(raw_split)
    except ValueError:
        raise SchemaError(f"unknown split {raw_split!r}", where) from None
    raw_instances = _require(obj, "instances", where)
    if not isinstance(raw_instances, list):
        raise SchemaError("instances must be a list", where)

    instances = [
        instance_from_dict(inst, f"{where} instance[{i}]", strict)
        for i, inst in enumerate(raw_instances)
    ]
    return ImageRecord(
        image_id=image_id, width=width, height=height, split=split, instances=instances
    )


def write_jsonl(records: Iterable[ImageRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record)))
            fh.write("\n")


def read_jsonl(path: str | Path, strict: bool = False) -> list[ImageRecord]:
    records: list[ImageRecord] = []
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}", where) from None
            record = record_from_dict(obj, where, strict)
            if record.image_id in seen_ids:
                raise SchemaError(f"duplicate image_id {record.image_id!r}", where)
            seen_ids.add(record.image_id)
            records.append(record)
    return records
