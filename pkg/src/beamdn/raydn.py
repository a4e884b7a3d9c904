"""Ray-denoising reference points.

For each ground-truth box seen by a camera, the box center is projected to
(u, v, d), N depths are drawn around d with Beta offsets scaled by the box's
mean half-extent, and each depth is pulled back through K^-1 at the same
(u, v). The point closest to the box center is the positive; the rest are
background.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .beta import BetaParams, DomainError, SeededRng, sample_offsets
from .geometry import CameraModel, GeometryError, as_vec3, project, unproject_many, visible

MAX_RESAMPLE = 16
MIN_DEPTH = 0.1


class NotVisibleError(GeometryError):
    pass


@dataclass(frozen=True)
class GroundTruthBox:
    center: np.ndarray
    size: tuple[float, float, float]  # (w, h, l)
    yaw: float = 0.0
    class_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "center", as_vec3(self.center))
        size = tuple(float(s) for s in self.size)
        if len(size) != 3 or not all(s > 0.0 and math.isfinite(s) for s in size):
            raise DomainError(f"box sizes must be finite and > 0, got {self.size}")
        object.__setattr__(self, "size", size)
        yaw = float(self.yaw)
        # canonical yaw in (-pi, pi]
        yaw = math.atan2(math.sin(yaw), math.cos(yaw))
        if yaw == -math.pi:
            yaw = math.pi
        object.__setattr__(self, "yaw", yaw)
        object.__setattr__(self, "class_id", int(self.class_id))

    def corners(self) -> np.ndarray:
        """(8, 3) world-frame corners; w along the box x axis, l along y, h along z."""
        w, h, l = self.size
        sx = np.array([1, 1, 1, 1, -1, -1, -1, -1]) * (w / 2)
        sy = np.array([1, 1, -1, -1, 1, 1, -1, -1]) * (l / 2)
        sz = np.array([1, -1, 1, -1, 1, -1, 1, -1]) * (h / 2)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        x = c * sx - s * sy
        y = s * sx + c * sy
        return self.center + np.stack([x, y, sz], axis=1)

    def to_dict(self) -> dict:
        return {
            "center": [float(x) for x in self.center],
            "size": list(self.size),
            "yaw": self.yaw,
            "class_id": self.class_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthBox":
        return cls(d["center"], tuple(d["size"]), d.get("yaw", 0.0), d.get("class_id", 0))

    def __eq__(self, other):
        if not isinstance(other, GroundTruthBox):
            return NotImplemented
        return (
            np.array_equal(self.center, other.center)
            and self.size == other.size
            and self.yaw == other.yaw
            and self.class_id == other.class_id
        )

    __hash__ = None


@dataclass(frozen=True)
class RaySpec:
    params: BetaParams = field(default_factory=BetaParams)
    radius_k: float = 3.0
    n_per_ray: int = 5

    def __post_init__(self):
        if not (self.radius_k > 0.0):
            raise DomainError("radius_k must be > 0")
        if int(self.n_per_ray) < 2:
            raise DomainError("n_per_ray must be >= 2 (one positive, at least one negative)")


POSITIVE = 1
NEGATIVE = 0


@dataclass(frozen=True, eq=False)
class RayQueryGroup:
    gt_index: int
    camera_index: int
    ref_points: np.ndarray  # (N, 3)
    depths: np.ndarray  # (N,)
    labels: np.ndarray  # (N,) of POSITIVE / NEGATIVE
    target: GroundTruthBox
    center_depth: float
    extent: float

    @property
    def positive_index(self) -> int:
        return int(np.flatnonzero(self.labels == POSITIVE)[0])

    def __len__(self):
        return len(self.depths)

    def to_dict(self) -> dict:
        return {
            "gt_index": self.gt_index,
            "camera_index": self.camera_index,
            "center_depth": self.center_depth,
            "extent": self.extent,
            "ref_points": [[float(x) for x in p] for p in self.ref_points],
            "depths": [float(x) for x in self.depths],
            "labels": ["positive" if lab == POSITIVE else "negative" for lab in self.labels],
            "target": self.target.to_dict(),
        }


def scale_extent(box: GroundTruthBox, k: float) -> float:
    if not (k > 0.0):
        raise DomainError("k must be > 0")
    w, h, l = box.size
    if min(w, h, l) <= 0.0:
        raise DomainError("box sizes must be > 0")
    return k * (w + h + l) / 6.0


def sample_depths(rng: SeededRng, d: float, extent: float, params: BetaParams, n: int) -> np.ndarray:
    """Depths d + offset*extent with Beta offsets; nonpositive depths are redrawn.

    A slot that stays nonpositive after MAX_RESAMPLE redraws is clamped to
    MIN_DEPTH.
    """
    if not (d > 0.0):
        raise DomainError(f"center depth must be > 0, got {d}")
    if not (extent > 0.0):
        raise DomainError(f"extent must be > 0, got {extent}")
    depths = d + sample_offsets(rng, params, n) * extent
    for i in np.flatnonzero(depths <= 0.0):
        for _ in range(MAX_RESAMPLE):
            depths[i] = d + sample_offsets(rng, params, 1)[0] * extent
            if depths[i] > 0.0:
                break
        else:
            depths[i] = MIN_DEPTH
    return depths


def assign_labels(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    dist = np.linalg.norm(points - center, axis=1)
    labels = np.full(len(points), NEGATIVE, dtype=np.int8)
    labels[int(np.argmin(dist))] = POSITIVE  # argmin keeps the lowest index on ties
    return labels


def build_ray_group(
    camera: CameraModel,
    box: GroundTruthBox,
    spec: RaySpec,
    rng: SeededRng,
    gt_index: int = 0,
    camera_index: int = 0,
) -> RayQueryGroup:
    if not visible(camera, box.center):
        raise NotVisibleError(f"box center {box.center} is not visible in camera {camera_index}")
    u, v, d = project(camera, box.center)
    extent = scale_extent(box, spec.radius_k)
    depths = sample_depths(rng, d, extent, spec.params, spec.n_per_ray)
    uvd = np.c_[np.full_like(depths, u), np.full_like(depths, v), depths]
    points = unproject_many(camera, uvd)
    return RayQueryGroup(
        gt_index=gt_index,
        camera_index=camera_index,
        ref_points=points,
        depths=depths,
        labels=assign_labels(points, box.center),
        target=box,
        center_depth=d,
        extent=extent,
    )


@dataclass
class BuildResult:
    groups: list[RayQueryGroup]
    skipped: int  # boxes visible in no camera

    def __iter__(self):
        return iter(self.groups)

    def __len__(self):
        return len(self.groups)


def build_all(
    cameras: Sequence[CameraModel],
    boxes: Sequence[GroundTruthBox],
    spec: RaySpec,
    rng: SeededRng,
) -> BuildResult:
    """One group per (box, camera) pair with the box center in view.

    Each pair samples from its own child stream keyed on (box, camera), so a
    group does not depend on which other pairs happen to be visible.
    """
    if len(cameras) < 1:
        raise DomainError("build_all needs at least one camera")
    streams = rng.spawn_many(len(boxes) * len(cameras))
    groups = []
    skipped = 0
    for bi, box in enumerate(boxes):
        seen = False
        for ci, cam in enumerate(cameras):
            if not visible(cam, box.center):
                continue
            seen = True
            groups.append(
                build_ray_group(cam, box, spec, streams[bi * len(cameras) + ci], bi, ci)
            )
        if not seen:
            skipped += 1
    return BuildResult(groups, skipped)
