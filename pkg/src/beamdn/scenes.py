"""Synthetic surround-view scenes and depth-blind feature tokens.

Token content carries a box's class and its projected 2D extent, never its
depth; token position embeddings encode only the viewing direction. A box
slid along its camera ray and scaled to keep its footprint renders the same
tokens, which is the ambiguity that produces colinear duplicate detections.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .beta import SeededRng
from .geometry import CameraModel, pinhole, project_many, rig_from_list, rig_to_list, unproject_many, visible
from .raydn import GroundTruthBox
from .toynet.encoding import PE_DIM, ray_direction_pe

SCHEMA_VERSION = 1
MIN_SEPARATION = 2.0
MAX_TRIES = 1000
SIZE_RANGE = (1.0, 6.0)
FOOTPRINT_QUANTUM = 1.0 / 1024.0
DEFAULT_RANGE = (-30.0, 30.0, -30.0, 30.0, -3.0, 3.0)
# base boxes sit near ground level; colinear partners may land anywhere in DEFAULT_RANGE
PLACEMENT_RANGE = (-20.0, 20.0, -20.0, 20.0, -0.1, 0.1)


class CapacityError(RuntimeError):
    pass


class SceneFormatError(ValueError):
    pass


@dataclass(eq=False)
class Scene:
    scene_id: str
    rig: list[CameraModel]
    boxes: list[GroundTruthBox] = field(default_factory=list)

    def __post_init__(self):
        if not self.rig:
            raise ValueError("a scene needs at least one camera")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "scene_id": self.scene_id,
            "rig": rig_to_list(self.rig),
            "boxes": [b.to_dict() for b in self.boxes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise SceneFormatError(f"unsupported scene schema {d.get('schema_version')!r}")
        return cls(
            str(d["scene_id"]),
            rig_from_list(d["rig"]),
            [GroundTruthBox.from_dict(b) for b in d["boxes"]],
        )

    def inside(self, prange) -> bool:
        return all(_in_range(b.center, prange) for b in self.boxes)


def save_scene(scene: Scene, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_scene(path) -> Scene:
    with open(path) as fh:
        return Scene.from_dict(json.load(fh))


def load_scene_dir(path) -> list[Scene]:
    names = sorted(n for n in os.listdir(path) if n.endswith(".json"))
    return [load_scene(os.path.join(path, n)) for n in names]


def _in_range(p, prange) -> bool:
    return all(prange[2 * i] <= p[i] <= prange[2 * i + 1] for i in range(3))


def make_rig(
    n_cameras: int,
    radius: float = 1.0,
    width: int = 800,
    height: int = 450,
    focal: float = 400.0,
    mount_height: float = 1.6,
) -> list[CameraModel]:
    """Outward-facing ring of cameras at equal azimuth spacing, sharing intrinsics.

    World frame is x forward, y left, z up; camera frames are x right, y down,
    z along the optical axis. Camera 0 looks along +x.
    """
    if n_cameras < 1:
        raise ValueError("n_cameras must be >= 1")
    rig = []
    for i in range(n_cameras):
        az = 2.0 * math.pi * i / n_cameras
        fwd = np.array([math.cos(az), math.sin(az), 0.0])
        right = np.array([math.sin(az), -math.cos(az), 0.0])
        down = np.array([0.0, 0.0, -1.0])
        rot = np.stack([right, down, fwd])
        pos = np.array([radius * math.cos(az), radius * math.sin(az), mount_height])
        rig.append(pinhole(focal, focal, width / 2.0, height / 2.0, rot, -rot @ pos, width, height))
    return rig


def optical_axis(camera: CameraModel) -> np.ndarray:
    """World-frame unit optical axis: the ray through the principal point."""
    ahead = unproject_many(camera, np.array([[camera.image_width / 2.0, camera.image_height / 2.0, 1.0]]))[0]
    axis = ahead - camera.center
    return axis / np.linalg.norm(axis)


def _random_box(rng: SeededRng, prange, n_classes: int) -> GroundTruthBox:
    u = rng.uniform(8)
    center = [prange[2 * i] + u[i] * (prange[2 * i + 1] - prange[2 * i]) for i in range(3)]
    lo, hi = math.log(SIZE_RANGE[0]), math.log(SIZE_RANGE[1])
    size = tuple(math.exp(lo + u[3 + i] * (hi - lo)) for i in range(3))
    yaw = math.pi * (2.0 * u[6] - 1.0)
    cls = min(int(u[7] * n_classes), n_classes - 1)
    return GroundTruthBox(center, size, yaw, cls)


def _separated(box: GroundTruthBox, boxes: Sequence[GroundTruthBox]) -> bool:
    return all(np.linalg.norm(box.center - b.center) >= MIN_SEPARATION for b in boxes)


def sample_scene(
    rng: SeededRng,
    n_boxes: int,
    prange=DEFAULT_RANGE,
    class_count: int = 3,
    rig: Sequence[CameraModel] | None = None,
    scene_id: str = "scene",
) -> Scene:
    """Uniform centers, log-uniform sizes in [1, 6] m, uniform yaw, >= 2 m apart."""
    if n_boxes < 0:
        raise ValueError("n_boxes must be >= 0")
    rig = list(rig) if rig is not None else make_rig(6)
    boxes: list[GroundTruthBox] = []
    for _ in range(n_boxes):
        for _ in range(MAX_TRIES):
            box = _random_box(rng, prange, class_count)
            if _separated(box, boxes):
                boxes.append(box)
                break
        else:
            raise CapacityError(f"could not place box {len(boxes)} after {MAX_TRIES} tries")
    return Scene(scene_id, rig, boxes)


def colinear_partner(camera: CameraModel, box: GroundTruthBox, scale: float) -> GroundTruthBox:
    """Same-class box slid along the camera ray by ``scale`` and grown by it,
    so its projected footprint in ``camera`` is unchanged."""
    origin = camera.center
    center = origin + scale * (box.center - origin)
    size = tuple(scale * s for s in box.size)
    return GroundTruthBox(center, size, box.yaw, box.class_id)


def add_colinear_pair(scene: Scene, rng: SeededRng, prange, scale_range=(1.4, 2.0)) -> bool:
    """Append a compensated colinear partner of some visible box; False if none fits."""
    order = np.argsort(rng.uniform(max(len(scene.boxes), 1)))[: len(scene.boxes)]
    for bi in order:
        box = scene.boxes[int(bi)]
        for ci, cam in enumerate(scene.rig):
            if not visible(cam, box.center):
                continue
            s = scale_range[0] + rng.uniform(1)[0] * (scale_range[1] - scale_range[0])
            partner = colinear_partner(cam, box, s)
            if max(partner.size) > 2 * SIZE_RANGE[1]:
                continue
            if _in_range(partner.center, prange) and _separated(partner, scene.boxes):
                scene.boxes.append(partner)
                return True
    return False


def make_benchmark(
    seed: int,
    n_scenes: int,
    rig: Sequence[CameraModel],
    prange=DEFAULT_RANGE,
    class_count: int = 3,
    max_boxes: int = 8,
    colinear_fraction: float = 0.3,
    prefix: str = "scene",
    placement=PLACEMENT_RANGE,
) -> list[Scene]:
    """Seed-pinned scene set; ceil(colinear_fraction * n) scenes get a colinear pair.

    Boxes are placed in ``placement``; partners only need to fall inside ``prange``.
    """
    rng = SeededRng(seed, stream=0x5CE)
    n_pair = math.ceil(colinear_fraction * n_scenes)
    with_pair = set(np.argsort(rng.uniform(max(n_scenes, 1)))[:n_pair].tolist()) if n_scenes else set()
    scenes = []
    for i, child in enumerate(rng.spawn_many(n_scenes)):
        while True:
            want_pair = i in with_pair
            n_boxes = 1 + int(child.uniform(1)[0] * (max_boxes - (1 if want_pair else 0)))
            n_boxes = min(n_boxes, max_boxes - (1 if want_pair else 0))
            scene = sample_scene(child, n_boxes, placement, class_count, rig, f"{prefix}_{i:05d}")
            if not want_pair or add_colinear_pair(scene, child, prange):
                break
        scenes.append(scene)
    return scenes


@dataclass(frozen=True)
class FeatureToken:
    camera_index: int
    pixel: tuple[float, float]
    content: np.ndarray
    position: np.ndarray


@dataclass(eq=False)
class TokenGrid:
    """Array form of a rendered scene: row t is token t, camera-major then row-major."""

    content: np.ndarray  # (T, content_dim)
    position: np.ndarray  # (T, PE_DIM)
    camera_index: np.ndarray  # (T,)
    pixels: np.ndarray  # (T, 2)
    origin: np.ndarray  # (T, 3) optical center of the token's camera

    def tokens(self) -> list[FeatureToken]:
        return [
            FeatureToken(int(c), (float(p[0]), float(p[1])), self.content[i], self.position[i])
            for i, (c, p) in enumerate(zip(self.camera_index, self.pixels))
        ]


def content_dim(class_count: int) -> int:
    return 1 + class_count + 4


def background_embedding(class_count: int) -> np.ndarray:
    e = np.zeros(content_dim(class_count))
    e[0] = 1.0
    return e


def grid_pixels(camera: CameraModel, grid_w: int, grid_h: int) -> np.ndarray:
    us = (np.arange(grid_w) + 0.5) * camera.image_width / grid_w
    vs = (np.arange(grid_h) + 0.5) * camera.image_height / grid_h
    uu, vv = np.meshgrid(us, vs)
    return np.c_[uu.reshape(-1), vv.reshape(-1)]


_PE_CACHE: dict = {}


def _rig_positions(rig: Sequence[CameraModel], grid_w: int, grid_h: int):
    key = (tuple(c.world_to_frustum.tobytes() for c in rig), grid_w, grid_h)
    hit = _PE_CACHE.get(key)
    if hit is None:
        pix, pos, cam, org = [], [], [], []
        for ci, camera in enumerate(rig):
            p = grid_pixels(camera, grid_w, grid_h)
            pix.append(p)
            pos.append(np.array([ray_direction_pe(camera, (u, v)) for u, v in p]))
            cam.append(np.full(len(p), ci))
            org.append(np.tile(camera.center, (len(p), 1)))
        hit = (np.concatenate(pix), np.concatenate(pos), np.concatenate(cam), np.concatenate(org))
        for arr in hit:
            arr.setflags(write=False)
        if len(_PE_CACHE) > 16:
            _PE_CACHE.clear()
        _PE_CACHE[key] = hit
    return hit


def footprint(camera: CameraModel, box: GroundTruthBox):
    """Quantised pixel bbox (u0, v0, u1, v1) of the projected corners, or None
    if any corner is not in front of the camera."""
    uvd = project_many(camera, box.corners())
    if not np.all(uvd[:, 2] > 1e-6):
        return None
    q = np.round(uvd[:, :2] / FOOTPRINT_QUANTUM) * FOOTPRINT_QUANTUM
    return float(q[:, 0].min()), float(q[:, 1].min()), float(q[:, 0].max()), float(q[:, 1].max())


def _box_key(box: GroundTruthBox):
    return (tuple(box.center), box.size, box.yaw, box.class_id)


def render_arrays(scene: Scene, grid_w: int = 16, grid_h: int = 12, class_count: int = 3) -> TokenGrid:
    if grid_w < 1 or grid_h < 1:
        raise ValueError("grid dims must be >= 1")
    pixels, position, cam_idx, origin = _rig_positions(scene.rig, grid_w, grid_h)
    per_cam = grid_w * grid_h
    content = np.tile(background_embedding(class_count), (len(pixels), 1))
    # canonical summation order: float sums must not depend on box order
    ordered = sorted(scene.boxes, key=_box_key)
    for ci, camera in enumerate(scene.rig):
        sl = slice(ci * per_cam, (ci + 1) * per_cam)
        pu, pv = pixels[sl, 0], pixels[sl, 1]
        block = content[sl]
        for box in ordered:
            fp = footprint(camera, box)
            if fp is None:
                continue
            u0, v0, u1, v1 = fp
            inside = (pu >= u0) & (pu <= u1) & (pv >= v0) & (pv <= v1)
            if not inside.any():
                continue
            # class one-hot plus the footprint edges relative to each token's pixel
            contrib = np.zeros((int(inside.sum()), content.shape[1]))
            contrib[:, 1 + box.class_id] = 1.0
            contrib[:, -4] = (u0 - pu[inside]) / camera.image_width
            contrib[:, -3] = (v0 - pv[inside]) / camera.image_height
            contrib[:, -2] = (u1 - pu[inside]) / camera.image_width
            contrib[:, -1] = (v1 - pv[inside]) / camera.image_height
            block[inside] += contrib
    return TokenGrid(content, position, cam_idx, pixels, origin)


def render_features(scene: Scene, grid_w: int = 16, grid_h: int = 12, class_count: int = 3) -> list[FeatureToken]:
    return render_arrays(scene, grid_w, grid_h, class_count).tokens()


__all__ = [
    "PE_DIM",
    "Scene",
    "FeatureToken",
    "TokenGrid",
    "make_rig",
    "sample_scene",
    "render_features",
    "render_arrays",
    "make_benchmark",
    "colinear_partner",
]
