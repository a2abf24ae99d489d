"""Synthetic pedestrian skeletons for end-to-end testing.

Generates images of parametric stick figures whose facial keypoints are
placed by projecting a rigid head turned by a yaw angle; the instance is
labeled as looking at the camera iff the absolute yaw is below a threshold.
Detections are the ground-truth poses themselves, so pose-to-box matching
is exact and test recall is 1.  The skeleton proportions are a fixed
template, chosen for reproducibility rather than anatomical realism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import AnnotatedInstance, Box, ImageRecord, Split, Vote
from .pose import N_KEYPOINTS, Pose, enclosing_box

# Body-joint template: (keypoint index, horizontal offset, vertical offset)
# in units of body height, relative to the hip midpoint (screen-down = +v).
_BODY_TEMPLATE = (
    (5, -0.100, -0.350),  # left shoulder
    (6, 0.100, -0.350),   # right shoulder
    (7, -0.125, -0.175),  # left elbow
    (8, 0.125, -0.175),   # right elbow
    (9, -0.140, -0.010),  # left wrist
    (10, 0.140, -0.010),  # right wrist
    (11, -0.055, 0.000),  # left hip
    (12, 0.055, 0.000),   # right hip
    (13, -0.065, 0.230),  # left knee
    (14, 0.065, 0.230),   # right knee
    (15, -0.075, 0.460),  # left ankle
    (16, 0.075, 0.460),   # right ankle
)

# Facial landmarks ride on a rigid head of this radius (body-height units),
# each at a fixed azimuth from the facing direction.  Confidence decays with
# the cosine of the view angle, mimicking a detector losing sight of
# landmarks that rotate away from the camera.
_HEAD_RADIUS = 0.045
_HEAD_CENTER_V = -0.435
_FACE_TEMPLATE = (
    (0, 0.00, 0.010),    # nose: azimuth 0, slightly below head center
    (1, 0.45, -0.012),   # left eye
    (2, -0.45, -0.012),  # right eye
    (3, 1.25, 0.000),    # left ear
    (4, -1.25, 0.000),   # right ear
)
_MIN_FACE_CONFIDENCE = 0.05

_SPLIT_CYCLE = 20
_SPLIT_TRAIN = 14  # image index mod 20: 0-13 train, 14-16 val, 17-19 test
_SPLIT_VAL = 17


@dataclass(frozen=True)
class SynthConfig:
    n_images: int
    peds_per_image: tuple[int, int] = (1, 3)
    yaw_threshold: float = 0.35
    noise_sigma: float = 0.0
    seed: int = 0
    image_width: int = 1920
    image_height: int = 1080

    def __post_init__(self) -> None:
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")
        lo, hi = self.peds_per_image
        if not (1 <= lo <= hi):
            raise ValueError(f"invalid peds_per_image range {self.peds_per_image}")
        if not 0.0 < self.yaw_threshold < math.pi / 2:
            raise ValueError("yaw_threshold must lie in (0, pi/2)")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")
        if self.image_width < 120 or self.image_height < 120:
            raise ValueError("image dimensions must be at least 120 px")


def _make_pedestrian(cfg: SynthConfig, rng: np.random.Generator) -> tuple[Pose, bool]:
    height = rng.uniform(90.0, min(420.0, 0.85 * cfg.image_height))
    hip_u = rng.uniform(0.08 * cfg.image_width, 0.92 * cfg.image_width)
    hip_v = rng.uniform(0.50 * height, cfg.image_height - 0.50 * height)
    yaw = rng.uniform(-math.pi / 2, math.pi / 2)
    looking = abs(yaw) < cfg.yaw_threshold

    kps = np.zeros((N_KEYPOINTS, 3), dtype=np.float64)
    for idx, du, dv in _BODY_TEMPLATE:
        kps[idx, 0] = hip_u + du * height
        kps[idx, 1] = hip_v + dv * height
        kps[idx, 2] = rng.uniform(0.75, 0.95)
    for idx, azimuth, dv in _FACE_TEMPLATE:
        view = azimuth + yaw
        kps[idx, 0] = hip_u + math.sin(view) * _HEAD_RADIUS * height
        kps[idx, 1] = hip_v + (_HEAD_CENTER_V + dv) * height
        kps[idx, 2] = rng.uniform(0.85, 0.95) * max(_MIN_FACE_CONFIDENCE, math.cos(view))

    if cfg.noise_sigma > 0.0:
        kps[:, :2] += rng.normal(0.0, cfg.noise_sigma, size=(N_KEYPOINTS, 2))
    return Pose(kps), looking


def _split_for(index: int) -> Split:
    phase = index % _SPLIT_CYCLE
    if phase < _SPLIT_TRAIN:
        return Split.TRAIN
    if phase < _SPLIT_VAL:
        return Split.VAL
    return Split.TEST


def synth_generate(cfg: SynthConfig) -> list[ImageRecord]:
    """Deterministic-in-seed synthetic dataset with poses attached as detections."""
    rng = np.random.default_rng(cfg.seed)
    records: list[ImageRecord] = []
    for i in range(cfg.n_images):
        n_peds = int(rng.integers(cfg.peds_per_image[0], cfg.peds_per_image[1] + 1))
        instances = []
        for _ in range(n_peds):
            pose, looking = _make_pedestrian(cfg, rng)
            gt_box = Box(*enclosing_box(pose))
            instances.append(
                AnnotatedInstance(
                    gt_box=gt_box,
                    label=Vote.LOOKING if looking else Vote.NOT_LOOKING,
                    pose=pose,
                    match_iou=1.0,
                )
            )
        records.append(
            ImageRecord(
                image_id=f"synth-{i:06d}",
                width=cfg.image_width,
                height=cfg.image_height,
                split=_split_for(i),
                instances=instances,
            )
        )
    return records
