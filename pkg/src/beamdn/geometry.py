"""Projective camera math: world <-> frustum (u, v, d) and camera rays.

A camera is a single fused 4x4 world-to-frustum matrix ``K`` (intrinsics
times extrinsics). ``K @ (x, y, z, 1)`` gives ``(u*d, v*d, d, 1)`` up to a
positive homogeneous scale.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

DEPTH_EPS = 1e-12
DET_EPS = 1e-12
RAY_EPS = 1e-9


class GeometryError(ValueError):
    pass


class DegenerateDepthError(GeometryError):
    pass


class SingularTransformError(GeometryError):
    pass


class DegenerateRayError(GeometryError):
    pass


def as_vec3(p) -> np.ndarray:
    v = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(v)):
        raise GeometryError(f"non-finite point {v!r}")
    return v


class FrustumCoord(NamedTuple):
    u: float
    v: float
    d: float


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def point_at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction

    def distance_to(self, p) -> float:
        """Perpendicular distance from ``p`` to the (infinite) ray line."""
        w = as_vec3(p) - self.origin
        return float(np.linalg.norm(w - np.dot(w, self.direction) * self.direction))


@dataclass(frozen=True, eq=False)
class CameraModel:
    world_to_frustum: np.ndarray
    image_width: int
    image_height: int
    _inverse: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        k = np.array(self.world_to_frustum, dtype=np.float64).reshape(4, 4)
        if not np.all(np.isfinite(k)):
            raise SingularTransformError("camera transform has non-finite entries")
        if abs(np.linalg.det(k)) <= DET_EPS:
            raise SingularTransformError("camera transform is not invertible")
        if int(self.image_width) < 1 or int(self.image_height) < 1:
            raise GeometryError("image width and height must be >= 1")
        k.setflags(write=False)
        inv = np.linalg.inv(k)
        inv.setflags(write=False)
        object.__setattr__(self, "world_to_frustum", k)
        object.__setattr__(self, "image_width", int(self.image_width))
        object.__setattr__(self, "image_height", int(self.image_height))
        object.__setattr__(self, "_inverse", inv)

    @property
    def frustum_to_world(self) -> np.ndarray:
        return self._inverse

    @property
    def center(self) -> np.ndarray:
        """World-frame optical center: the frustum origin pulled back through K^-1."""
        h = self._inverse[:, 3]
        return h[:3] / h[3]

    def to_dict(self) -> dict:
        return {
            "world_to_frustum": [float(x) for x in self.world_to_frustum.reshape(-1)],
            "width": self.image_width,
            "height": self.image_height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        vals = d["world_to_frustum"]
        if len(vals) != 16:
            raise GeometryError("world_to_frustum needs 16 row-major values")
        return cls(np.asarray(vals, dtype=np.float64).reshape(4, 4), d["width"], d["height"])

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (
            self.image_width == other.image_width
            and self.image_height == other.image_height
            and np.array_equal(self.world_to_frustum, other.world_to_frustum)
        )

    __hash__ = None


def pinhole(fx, fy, cx, cy, rotation, translation, width, height) -> CameraModel:
    """Fuse pinhole intrinsics with a world-to-camera rigid transform."""
    intr = np.eye(4)
    intr[0, 0], intr[1, 1], intr[0, 2], intr[1, 2] = fx, fy, cx, cy
    ext = np.eye(4)
    ext[:3, :3] = rotation
    ext[:3, 3] = translation
    return CameraModel(intr @ ext, width, height)


def project(camera: CameraModel, point) -> FrustumCoord:
    p = as_vec3(point)
    h = camera.world_to_frustum @ np.append(p, 1.0)
    if abs(h[3]) < DEPTH_EPS:
        raise DegenerateDepthError(f"point {p} maps to infinity")
    h = h / h[3]
    d = h[2]
    if abs(d) < DEPTH_EPS:
        raise DegenerateDepthError(f"point {p} lies on the camera plane")
    return FrustumCoord(float(h[0] / d), float(h[1] / d), float(d))


def unproject(camera: CameraModel, fc) -> np.ndarray:
    u, v, d = (float(x) for x in fc)
    if not d > 0.0:
        raise GeometryError(f"unproject needs positive depth, got {d}")
    h = camera.frustum_to_world @ np.array([u * d, v * d, d, 1.0])
    return h[:3] / h[3]


def project_many(camera: CameraModel, points: np.ndarray) -> np.ndarray:
    """Vectorised project; returns (n, 3) of (u, v, d). Degenerate rows get NaN."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    h = np.c_[pts, np.ones(len(pts))] @ camera.world_to_frustum.T
    with np.errstate(divide="ignore", invalid="ignore"):
        h = h / h[:, 3:4]
        d = h[:, 2]
        bad = np.abs(d) < DEPTH_EPS
        out = np.c_[h[:, 0] / d, h[:, 1] / d, d]
    out[bad] = np.nan
    return out


def unproject_many(camera: CameraModel, uvd: np.ndarray) -> np.ndarray:
    uvd = np.asarray(uvd, dtype=np.float64).reshape(-1, 3)
    d = uvd[:, 2]
    h = np.c_[uvd[:, 0] * d, uvd[:, 1] * d, d, np.ones(len(d))] @ camera.frustum_to_world.T
    return h[:, :3] / h[:, 3:4]


def visible(camera: CameraModel, point) -> bool:
    try:
        u, v, d = project(camera, point)
    except DegenerateDepthError:
        return False
    return d > 0.0 and 0.0 <= u < camera.image_width and 0.0 <= v < camera.image_height


def ray_through(camera: CameraModel, point) -> Ray:
    p = as_vec3(point)
    origin = camera.center
    delta = p - origin
    norm = float(np.linalg.norm(delta))
    if norm <= RAY_EPS:
        raise DegenerateRayError("point coincides with the optical center")
    return Ray(origin, delta / norm)


def ray_through_pixel(camera: CameraModel, u: float, v: float) -> Ray:
    """Ray from the optical center through pixel (u, v), pointing forward (d > 0)."""
    return ray_through(camera, unproject(camera, (u, v, 1.0)))


def angle_between(a: Ray, b: Ray) -> float:
    c = float(np.clip(np.dot(a.direction, b.direction), -1.0, 1.0))
    # arctan2 form stays accurate for nearly parallel directions
    s = float(np.linalg.norm(np.cross(a.direction, b.direction)))
    return float(np.arctan2(s, c))


def rig_to_list(rig: Sequence[CameraModel]) -> list[dict]:
    return [cam.to_dict() for cam in rig]


def rig_from_list(items: Sequence[dict]) -> list[CameraModel]:
    return [CameraModel.from_dict(d) for d in items]
