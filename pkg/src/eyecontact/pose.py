"""Pose representation and hip-centered keypoint normalization.

A pose is the 17-keypoint COCO skeleton with per-keypoint confidences.
Before classification every pose is mapped into a scale- and
vertical-translation-invariant frame: coordinates are centered on the hip
midpoint, divided by the keypoint enclosing box, and the horizontal hip
position is re-injected as a fraction of the image width.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

COCO_KEYPOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

N_KEYPOINTS = 17
LEFT_HIP = 11
RIGHT_HIP = 12

# Lower clamp for the enclosing-box sides, in pixels.  Near-collinear poses
# would otherwise divide by ~0 during normalization.
MIN_BOX_SIDE = 1.0


class DegeneratePoseError(ValueError):
    """Raised when an operation needs at least one positive-confidence keypoint."""


class Subset(enum.Enum):
    """Which keypoints feed the classifier.

    HEAD is the five facial keypoints (nose, eyes, ears); BODY is everything
    else; FULL is all seventeen.
    """

    FULL = "full"
    HEAD = "head"
    BODY = "body"

    @property
    def keypoint_indices(self) -> tuple[int, ...]:
        if self is Subset.HEAD:
            return tuple(range(0, 5))
        if self is Subset.BODY:
            return tuple(range(5, 17))
        return tuple(range(N_KEYPOINTS))

    @property
    def n_keypoints(self) -> int:
        return len(self.keypoint_indices)

    @property
    def input_dim(self) -> int:
        """Length of the flattened (u, v, c) feature vector."""
        return 3 * self.n_keypoints

    @property
    def value_indices(self) -> tuple[int, ...]:
        """Indices into a FULL feature vector that this subset keeps."""
        return tuple(3 * k + j for k in self.keypoint_indices for j in range(3))

    @property
    def keypoint_names(self) -> tuple[str, ...]:
        return tuple(COCO_KEYPOINT_NAMES[k] for k in self.keypoint_indices)


class Keypoint(NamedTuple):
    u: float
    v: float
    c: float


@dataclass(frozen=True)
class Pose:
    """17 COCO-ordered keypoints as a read-only (17, 3) float array of (u, v, c)."""

    keypoints: np.ndarray

    def __post_init__(self) -> None:
        kps = np.asarray(self.keypoints, dtype=np.float64)
        if kps.shape != (N_KEYPOINTS, 3):
            raise ValueError(f"pose must have shape (17, 3), got {kps.shape}")
        if not np.all(np.isfinite(kps[:, :2])):
            raise ValueError("keypoint coordinates must be finite")
        if np.any(kps[:, 2] < 0.0) or np.any(kps[:, 2] > 1.0):
            raise ValueError("keypoint confidences must lie in [0, 1]")
        if not np.any(kps[:, 2] > 0.0):
            raise ValueError("pose needs at least one keypoint with confidence > 0")
        kps = kps.copy()
        kps.flags.writeable = False
        object.__setattr__(self, "keypoints", kps)

    @classmethod
    def from_flat(cls, values: Iterable[float]) -> "Pose":
        """Build from a flat [u0, v0, c0, u1, v1, c1, ...] sequence of 51 numbers."""
        arr = np.asarray(list(values), dtype=np.float64)
        if arr.shape != (3 * N_KEYPOINTS,):
            raise ValueError(f"expected {3 * N_KEYPOINTS} values, got {arr.shape}")
        return cls(arr.reshape(N_KEYPOINTS, 3))

    def keypoint(self, index: int) -> Keypoint:
        u, v, c = self.keypoints[index]
        return Keypoint(float(u), float(v), float(c))

    @property
    def visible(self) -> np.ndarray:
        """Boolean mask of keypoints with confidence > 0."""
        return self.keypoints[:, 2] > 0.0


@dataclass(frozen=True)
class PoseGeometry:
    """Hip center and enclosing-box geometry used by the normalization."""

    u_hip: float
    v_hip: float
    w_box: float
    h_box: float
    w_image: float


@dataclass(frozen=True)
class NormalizedPose:
    """Flat (u, v, c) feature vector in the normalized frame."""

    values: np.ndarray
    subset: Subset = Subset.FULL

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.subset.input_dim,):
            raise ValueError(
                f"{self.subset.value} subset expects {self.subset.input_dim} values, "
                f"got {vals.shape}"
            )
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)


def hip_center(pose: Pose) -> tuple[float, float]:
    """Mean of the left/right hip coordinates.

    Falls back to the single visible hip when only one has confidence > 0,
    and to the enclosing-box center when neither does, so every valid pose
    yields a usable center.
    """
    left = pose.keypoint(LEFT_HIP)
    right = pose.keypoint(RIGHT_HIP)
    if left.c > 0.0 and right.c > 0.0:
        return (left.u + right.u) / 2.0, (left.v + right.v) / 2.0
    if left.c > 0.0:
        return left.u, left.v
    if right.c > 0.0:
        return right.u, right.v
    x, y, w, h = enclosing_box(pose)
    return x + w / 2.0, y + h / 2.0


def enclosing_box(pose: Pose) -> tuple[float, float, float, float]:
    """Tight (x, y, w, h) box over positive-confidence keypoints.

    Sides are clamped below by MIN_BOX_SIDE so downstream divisions stay
    well-behaved on single-point or collinear poses.
    """
    mask = pose.visible
    if not np.any(mask):
        raise DegeneratePoseError("degenerate pose: no keypoint has confidence > 0")
    pts = pose.keypoints[mask, :2]
    x_min, y_min = pts.min(axis=0)
    x_max, y_max = pts.max(axis=0)
    w = max(float(x_max - x_min), MIN_BOX_SIDE)
    h = max(float(y_max - y_min), MIN_BOX_SIDE)
    return float(x_min), float(y_min), w, h


def pose_geometry(pose: Pose, w_image: float) -> PoseGeometry:
    if w_image <= 0:
        raise ValueError(f"image width must be positive, got {w_image}")
    u_hip, v_hip = hip_center(pose)
    _, _, w_box, h_box = enclosing_box(pose)
    return PoseGeometry(u_hip=u_hip, v_hip=v_hip, w_box=w_box, h_box=h_box, w_image=float(w_image))


def normalize_pose(pose: Pose, w_image: float) -> NormalizedPose:
    """Map a pose into the normalized feature frame.

    Per keypoint:

        u' = (u - u_hip) / w_box + u_hip / w_image
        v' = (v - v_hip) / h_box

    Confidence passes through unchanged (it is already in [0, 1]).  The
    result is invariant to vertical translation and to uniform scaling about
    the hip center; horizontal translation by d shifts u' by exactly
    d / w_image.
    """
    geo = pose_geometry(pose, w_image)
    kps = pose.keypoints
    out = np.empty((N_KEYPOINTS, 3), dtype=np.float64)
    out[:, 0] = (kps[:, 0] - geo.u_hip) / geo.w_box + geo.u_hip / geo.w_image
    out[:, 1] = (kps[:, 1] - geo.v_hip) / geo.h_box
    out[:, 2] = kps[:, 2]
    return NormalizedPose(out.reshape(-1), Subset.FULL)


def select_subset(normalized: NormalizedPose, subset: Subset) -> NormalizedPose:
    """Slice a FULL normalized vector down to the requested keypoint subset.

    Selection always happens after normalization so that HEAD/BODY features
    share the geometry (hip center, enclosing box) of the full pose.
    """
    if normalized.subset is not Subset.FULL:
        raise ValueError("subset selection expects a FULL normalized pose")
    if subset is Subset.FULL:
        return normalized
    return NormalizedPose(normalized.values[list(subset.value_indices)], subset)
