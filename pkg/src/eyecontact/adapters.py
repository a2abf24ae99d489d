"""Import adapters that convert external annotation layouts to canonical records.

Source images and labels are never bundled; adapters read user-provided
local copies.  Two directory layouts are supported besides the canonical
JSONL file:

``jaad-like`` (per-video clip annotations)
    <root>/annotations/<video_id>.json with
    {"video_id": str, "width": int, "height": int, "split": "train"|"val"|"test",
     "frames": {"<frame>": [{"track_id": str|null, "bbox": [x, y, w, h],
                             "look": bool|null}]}}
    Image ids become "<video_id>/<frame:05d>".

``look-like`` (flat per-instance CSV)
    <root>/annotations.csv with header
    image_id,width,height,split,x,y,w,h,look where look is 1 (looking),
    0 (not looking) or -1 (unlabeled).  The directory part of image_id is
    treated as the scene; a scene must not straddle splits.

Both layouts optionally provide detector output under
<root>/poses/<image_id>.predictions.json: a JSON list of
{"keypoints": [u0, v0, c0, ...]} entries in COCO-17 order (51 numbers).
Detections are attached to ground-truth instances by one-to-one box
matching at the standard 0.3 overlap threshold.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
from pathlib import Path

from .data import (
    AnnotatedInstance,
    Box,
    ImageRecord,
    SchemaError,
    Split,
    Vote,
    read_jsonl,
)
from .matching import MATCH_IOU_THRESHOLD, match_instances
from .pose import Pose, enclosing_box

log = logging.getLogger(__name__)


class Layout(str, enum.Enum):
    JAAD_LIKE = "jaad-like"
    LOOK_LIKE = "look-like"
    CANONICAL = "canonical"


def import_dataset(layout: Layout | str, path: str | Path, strict: bool = False) -> list[ImageRecord]:
    """Read a dataset in the given layout and return canonical records."""
    layout = Layout(layout)
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"dataset path does not exist: {path}")
    if layout is Layout.CANONICAL:
        return read_jsonl(path, strict=strict)
    if layout is Layout.JAAD_LIKE:
        return _import_jaad_like(path, strict)
    return _import_look_like(path, strict)


def _load_poses(root: Path, image_id: str) -> list[Pose]:
    pred_path = root / "poses" / f"{image_id}.predictions.json"
    if not pred_path.exists():
        return []
    where = str(pred_path)
    try:
        entries = json.loads(pred_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}", where) from None
    if not isinstance(entries, list):
        raise SchemaError("predictions file must hold a list", where)
    poses = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "keypoints" not in entry:
            raise SchemaError(f"entry [{i}] is missing 'keypoints'", where)
        try:
            poses.append(Pose.from_flat(entry["keypoints"]))
        except ValueError as exc:
            raise SchemaError(f"entry [{i}]: {exc}", where) from None
    return poses


def _attach_poses(instances: list[AnnotatedInstance], poses: list[Pose]) -> None:
    if not poses:
        return
    det_boxes = [Box(*enclosing_box(p)) for p in poses]
    gt_boxes = [inst.gt_box for inst in instances]
    for gi, di, overlap in match_instances(gt_boxes, det_boxes, MATCH_IOU_THRESHOLD):
        instances[gi].pose = poses[di]
        instances[gi].match_iou = overlap


def _import_jaad_like(root: Path, strict: bool) -> list[ImageRecord]:
    ann_dir = root / "annotations"
    if not ann_dir.is_dir():
        raise SchemaError(f"missing annotations directory under {root}")
    records: list[ImageRecord] = []
    for ann_path in sorted(ann_dir.glob("*.json")):
        where = str(ann_path)
        try:
            doc = json.loads(ann_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}", where) from None
        if not isinstance(doc, dict):
            raise SchemaError("clip annotation must be an object", where)
        for key in ("video_id", "width", "height", "split", "frames"):
            if key not in doc:
                raise SchemaError(f"missing required field {key!r}", where)
        try:
            split = Split(doc["split"])
        except ValueError:
            raise SchemaError(f"unknown split {doc['split']!r}", where) from None
        video_id = doc["video_id"]
        frames = doc["frames"]
        if not isinstance(frames, dict):
            raise SchemaError("frames must be an object keyed by frame number", where)
        for frame_key in sorted(frames, key=lambda k: int(k)):
            frame_where = f"{where} frame {frame_key}"
            try:
                frame_no = int(frame_key)
            except ValueError:
                raise SchemaError(f"frame key {frame_key!r} is not an integer", frame_where) from None
            image_id = f"{video_id}/{frame_no:05d}"
            entries = frames[frame_key]
            if not isinstance(entries, list):
                raise SchemaError("frame entries must be a list", frame_where)
            instances = []
            for i, entry in enumerate(entries):
                entry_where = f"{frame_where} entry[{i}]"
                if not isinstance(entry, dict) or "bbox" not in entry:
                    raise SchemaError("entry needs a bbox", entry_where)
                try:
                    gt_box = Box(*(float(v) for v in entry["bbox"]))
                except (TypeError, ValueError) as exc:
                    raise SchemaError(f"invalid bbox: {exc}", entry_where) from None
                look = entry.get("look")
                if look is None:
                    label = None
                elif isinstance(look, bool):
                    label = Vote.LOOKING if look else Vote.NOT_LOOKING
                else:
                    raise SchemaError(f"look must be a bool or null, got {look!r}", entry_where)
                track_id = entry.get("track_id")
                if track_id is not None:
                    track_id = str(track_id)
                instances.append(
                    AnnotatedInstance(gt_box=gt_box, label=label, track_id=track_id)
                )
            _attach_poses(instances, _load_poses(root, image_id))
            records.append(
                ImageRecord(
                    image_id=image_id,
                    width=int(doc["width"]),
                    height=int(doc["height"]),
                    split=split,
                    instances=instances,
                )
            )
    if not records:
        raise SchemaError(f"no clip annotations found under {ann_dir}")
    return records


_LOOK_COLUMNS = ["image_id", "width", "height", "split", "x", "y", "w", "h", "look"]


def _import_look_like(root: Path, strict: bool) -> list[ImageRecord]:
    csv_path = root / "annotations.csv"
    if not csv_path.is_file():
        raise SchemaError(f"missing annotations.csv under {root}")
    by_image: dict[str, ImageRecord] = {}
    scene_split: dict[str, Split] = {}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c for c in _LOOK_COLUMNS if c not in reader.fieldnames]:
            raise SchemaError(
                f"annotations.csv must have columns {_LOOK_COLUMNS}", str(csv_path)
            )
        for row_no, row in enumerate(reader, start=2):
            where = f"{csv_path}:{row_no}"
            image_id = row["image_id"]
            if not image_id:
                raise SchemaError("empty image_id", where)
            try:
                split = Split(row["split"])
            except ValueError:
                raise SchemaError(f"unknown split {row['split']!r}", where) from None

            scene = image_id.rsplit("/", 1)[0] if "/" in image_id else image_id
            if scene in scene_split and scene_split[scene] is not split:
                raise SchemaError(
                    f"scene {scene!r} appears in both {scene_split[scene].value} "
                    f"and {split.value} splits",
                    where,
                )
            scene_split[scene] = split

            try:
                width, height = int(row["width"]), int(row["height"])
                gt_box = Box(
                    float(row["x"]), float(row["y"]), float(row["w"]), float(row["h"])
                )
                look = int(row["look"])
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"invalid row: {exc}", where) from None
            if look not in (-1, 0, 1):
                raise SchemaError(f"look must be -1, 0 or 1, got {look}", where)
            label = {1: Vote.LOOKING, 0: Vote.NOT_LOOKING, -1: None}[look]

            record = by_image.get(image_id)
            if record is None:
                record = ImageRecord(
                    image_id=image_id, width=width, height=height, split=split, instances=[]
                )
                by_image[image_id] = record
            elif record.width != width or record.height != height or record.split is not split:
                raise SchemaError(
                    f"inconsistent image metadata for {image_id!r}", where
                )
            record.instances.append(AnnotatedInstance(gt_box=gt_box, label=label))
    if not by_image:
        raise SchemaError(f"annotations.csv under {root} holds no rows")
    records = list(by_image.values())
    for record in records:
        _attach_poses(record.instances, _load_poses(root, record.image_id))
    return records
