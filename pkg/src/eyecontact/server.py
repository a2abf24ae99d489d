"""Annotation store and HTTP review service.

The store couples canonical dataset records with a mutable vote ledger
keyed by (image_id, instance_index, annotator_id).  Every write bumps a
monotonically increasing revision and persists the whole store atomically
(write to a temp file, then rename), so a crash can never leave a
half-written file.  Labels are always derived by replaying the ledger over
the imported baseline, which makes recomputation idempotent.

The service exposes the review API consumed by the browser frontend:

    GET  /api/v1/images?split=S&offset=O&limit=L
    GET  /api/v1/images/{image_id}
    POST /api/v1/images/{image_id}/instances/{idx}/votes
    GET  /api/v1/progress
    GET  /api/v1/export
    GET  /media/{image_id}           (pixels from a user-supplied directory)

Errors: 400 malformed, 404 unknown id, 409 duplicate (instance, annotator)
vote or full vote set.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
from pathlib import Path
from typing import Sequence

from .data import (
    ConsensusResult,
    ImageRecord,
    N_ANNOTATORS,
    Vote,
    consensus_label,
    record_from_dict,
    record_to_dict,
)
from .metrics import match_records, score_matched
from .net import NetworkParams
from .pose import Subset

log = logging.getLogger(__name__)

STORE_VERSION = 1
DEFAULT_PRELABEL_THRESHOLD = 0.5

_MEDIA_EXTENSIONS = ("", ".png", ".jpg", ".jpeg")


class StoreError(ValueError):
    """The store file cannot be used; the service must refuse to start."""


class UnknownInstanceError(LookupError):
    pass


class DuplicateVoteError(ValueError):
    pass


class AnnotationStore:
    """Dataset records plus a serialized-writer vote ledger."""

    def __init__(self, records: Sequence[ImageRecord], store_path: str | Path | None = None):
        self.records = list(records)
        self.by_id = {r.image_id: r for r in self.records}
        if len(self.by_id) != len(self.records):
            raise StoreError("duplicate image ids in dataset")
        self.store_path = Path(store_path) if store_path is not None else None
        self.revision = 0
        self._lock = threading.Lock()
        # Baseline labels from import; replaying the ledger on top of these
        # reproduces the current labels from scratch.
        self._baseline: dict[tuple[str, int], Vote | None] = {}
        self._votes: dict[tuple[str, int], dict[str, Vote]] = {}
        for record in self.records:
            for idx, inst in enumerate(record.instances):
                self._baseline[(record.image_id, idx)] = inst.label
                if inst.votes:
                    ledger = {
                        f"annotator-{i + 1}": vote for i, vote in enumerate(inst.votes)
                    }
                    self._votes[(record.image_id, idx)] = ledger
        self._replay_all()

    # -- ledger -----------------------------------------------------------

    def votes_for(self, image_id: str, index: int) -> list[tuple[str, Vote]]:
        return list(self._votes.get((image_id, index), {}).items())

    def _instance(self, image_id: str, index: int):
        record = self.by_id.get(image_id)
        if record is None:
            raise UnknownInstanceError(f"unknown image {image_id!r}")
        if not 0 <= index < len(record.instances):
            raise UnknownInstanceError(f"image {image_id!r} has no instance {index}")
        return record.instances[index]

    def _recompute(self, image_id: str, index: int) -> None:
        inst = self._instance(image_id, index)
        ledger = self._votes.get((image_id, index), {})
        if len(ledger) == N_ANNOTATORS:
            result = consensus_label(list(ledger.values()))
            if result is ConsensusResult.DISCARDED:
                inst.label = Vote.AMBIGUOUS
            else:
                inst.label = Vote(result.value)
            inst.votes = list(ledger.values())
        else:
            inst.label = self._baseline[(image_id, index)]
            inst.votes = list(ledger.values()) if ledger else None

    def _replay_all(self) -> None:
        for record in self.records:
            for idx in range(len(record.instances)):
                self._recompute(record.image_id, idx)

    def add_vote(self, image_id: str, index: int, annotator_id: str, vote: Vote) -> dict:
        """Record one vote; returns the updated instance state.

        All mutations pass through this single serialized writer.
        """
        if not annotator_id:
            raise ValueError("annotator_id must be non-empty")
        vote = Vote(vote)
        with self._lock:
            self._instance(image_id, index)  # raises on unknown ids
            ledger = self._votes.setdefault((image_id, index), {})
            if annotator_id in ledger:
                raise DuplicateVoteError(
                    f"annotator {annotator_id!r} already voted on "
                    f"{image_id!r}[{index}]"
                )
            if len(ledger) >= N_ANNOTATORS:
                raise DuplicateVoteError(
                    f"{image_id!r}[{index}] already carries {N_ANNOTATORS} votes"
                )
            ledger[annotator_id] = vote
            self._recompute(image_id, index)
            self.revision += 1
            self._persist()
            inst = self._instance(image_id, index)
            return {
                "image_id": image_id,
                "instance_index": index,
                "votes": [
                    {"annotator_id": a, "vote": v.value} for a, v in ledger.items()
                ],
                "label": inst.label.value if inst.label is not None else None,
                "revision": self.revision,
            }

    # -- persistence ------------------------------------------------------

    def _persist(self) -> None:
        if self.store_path is None:
            return
        doc = {
            "version": STORE_VERSION,
            "revision": self.revision,
            "records": [self._baseline_record_dict(r) for r in self.records],
            "votes": [
                {"image_id": key[0], "instance_index": key[1], "annotator_id": a, "vote": v.value}
                for key, ledger in self._votes.items()
                for a, v in ledger.items()
            ],
        }
        directory = self.store_path.parent
        fd, tmp_name = tempfile.mkstemp(dir=directory, prefix=self.store_path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(doc, fh)
            os.replace(tmp_name, self.store_path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise

    def _baseline_record_dict(self, record: ImageRecord) -> dict:
        doc = record_to_dict(record)
        for idx, inst_doc in enumerate(doc["instances"]):
            baseline = self._baseline[(record.image_id, idx)]
            inst_doc["label"] = baseline.value if baseline is not None else None
            inst_doc["votes"] = None
        return doc

    @classmethod
    def load(cls, store_path: str | Path) -> "AnnotationStore":
        store_path = Path(store_path)
        try:
            doc = json.loads(store_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise StoreError(f"cannot read store {store_path}: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("version") != STORE_VERSION:
            raise StoreError(f"unsupported store version in {store_path}")
        try:
            records = [
                record_from_dict(obj, f"{store_path} record[{i}]")
                for i, obj in enumerate(doc.get("records", []))
            ]
            store = cls(records, store_path)
            for i, entry in enumerate(doc.get("votes", [])):
                key = (entry["image_id"], int(entry["instance_index"]))
                store._instance(*key)
                ledger = store._votes.setdefault(key, {})
                ledger[str(entry["annotator_id"])] = Vote(entry["vote"])
        except (KeyError, TypeError, ValueError) as exc:
            raise StoreError(f"store {store_path} is corrupt: {exc}") from exc
        store._replay_all()
        store.revision = int(doc.get("revision", 0))
        return store

    @classmethod
    def open(
        cls, records: Sequence[ImageRecord], store_path: str | Path | None
    ) -> "AnnotationStore":
        """Resume from an existing store file, else initialize from ``records``."""
        if store_path is not None and Path(store_path).exists():
            return cls.load(store_path)
        store = cls(records, store_path)
        store._persist()
        return store

    # -- views ------------------------------------------------------------

    def progress(self) -> dict:
        labeled = discarded = pending = 0
        for record in self.records:
            for inst in record.instances:
                if inst.label in (Vote.LOOKING, Vote.NOT_LOOKING):
                    labeled += 1
                elif inst.label is Vote.AMBIGUOUS:
                    discarded += 1
                else:
                    pending += 1
        return {
            "labeled": labeled,
            "discarded": discarded,
            "pending": pending,
            "revision": self.revision,
        }

    def export_lines(self):
        for record in self.records:
            yield json.dumps(record_to_dict(record)) + "\n"


def _compute_prelabels(
    records: Sequence[ImageRecord],
    params: NetworkParams,
    subset: Subset,
    threshold: float,
) -> dict[tuple[str, int], dict]:
    matched = match_records(records, labeled_only=False)
    scores = score_matched(params, subset, matched)
    out = {}
    for m, score in zip(matched, scores):
        out[(m.image_id, m.instance_index)] = {
            "score": float(score),
            "pre_label": "looking" if score >= threshold else "not_looking",
        }
    return out


def create_app(
    store: AnnotationStore,
    checkpoint: tuple[NetworkParams, Subset] | None = None,
    media_dir: str | Path | None = None,
    frontend_dir: str | Path | None = None,
    prelabel_threshold: float = DEFAULT_PRELABEL_THRESHOLD,
):
    """Build the FastAPI application around an annotation store."""
    from fastapi import Body, FastAPI, HTTPException, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.responses import FileResponse, JSONResponse, StreamingResponse
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="eyecontact review service", docs_url=None, redoc_url=None)

    prelabels: dict[tuple[str, int], dict] = {}
    if checkpoint is not None:
        params, subset = checkpoint
        prelabels = _compute_prelabels(store.records, params, subset, prelabel_threshold)

    @app.exception_handler(RequestValidationError)
    async def _malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": "malformed request"})

    def instance_payload(record: ImageRecord, idx: int) -> dict:
        inst = record.instances[idx]
        pre = prelabels.get((record.image_id, idx), {})
        keypoints = None
        if inst.pose is not None:
            keypoints = [[float(u), float(v), float(c)] for u, v, c in inst.pose.keypoints]
        return {
            "instance_index": idx,
            "bbox": [inst.gt_box.x, inst.gt_box.y, inst.gt_box.w, inst.gt_box.h],
            "label": inst.label.value if inst.label is not None else None,
            "votes": [
                {"annotator_id": a, "vote": v.value}
                for a, v in store.votes_for(record.image_id, idx)
            ],
            "keypoints": keypoints,
            "track_id": inst.track_id,
            "score": pre.get("score"),
            "pre_label": pre.get("pre_label"),
        }

    @app.get("/api/v1/images")
    def list_images(split: str | None = None, offset: int = 0, limit: int = 50):
        if offset < 0 or limit < 1:
            raise HTTPException(status_code=400, detail="offset/limit out of range")
        records = store.records
        if split is not None:
            if split not in ("train", "val", "test"):
                raise HTTPException(status_code=400, detail=f"unknown split {split!r}")
            records = [r for r in records if r.split.value == split]
        page = records[offset : offset + limit]
        return {
            "total": len(records),
            "offset": offset,
            "items": [
                {
                    "image_id": r.image_id,
                    "width": r.width,
                    "height": r.height,
                    "split": r.split.value,
                    "n_instances": len(r.instances),
                }
                for r in page
            ],
        }

    @app.get("/api/v1/images/{image_id:path}")
    def get_image(image_id: str):
        record = store.by_id.get(image_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        return {
            "image_id": record.image_id,
            "width": record.width,
            "height": record.height,
            "split": record.split.value,
            "instances": [instance_payload(record, i) for i in range(len(record.instances))],
        }

    @app.post("/api/v1/images/{image_id:path}/instances/{idx}/votes")
    def post_vote(image_id: str, idx: int, payload: dict = Body(...)):
        annotator_id = payload.get("annotator_id")
        raw_vote = payload.get("vote")
        if not isinstance(annotator_id, str) or not annotator_id:
            raise HTTPException(status_code=400, detail="annotator_id must be a non-empty string")
        try:
            vote = Vote(raw_vote)
        except ValueError:
            raise HTTPException(status_code=400, detail=f"unknown vote {raw_vote!r}") from None
        try:
            return store.add_vote(image_id, idx, annotator_id, vote)
        except UnknownInstanceError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        except DuplicateVoteError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None

    @app.get("/api/v1/progress")
    def progress():
        return store.progress()

    @app.get("/api/v1/export")
    def export():
        return StreamingResponse(store.export_lines(), media_type="application/x-ndjson")

    if media_dir is not None:
        media_root = Path(media_dir).resolve()

        @app.get("/media/{image_id:path}")
        def media(image_id: str):
            for ext in _MEDIA_EXTENSIONS:
                candidate = (media_root / f"{image_id}{ext}").resolve()
                if candidate.is_file() and candidate.is_relative_to(media_root):
                    return FileResponse(candidate)
            raise HTTPException(status_code=404, detail=f"no media for {image_id!r}")

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="frontend")

    return app
