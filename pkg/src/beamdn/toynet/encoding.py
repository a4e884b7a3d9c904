"""Fixed (non-learned) coordinate encodings shared by queries and feature tokens."""
from __future__ import annotations

import numpy as np

from ..geometry import CameraModel, ray_through_pixel

N_FREQ = 4
PE_DIM = 3 + 6 * N_FREQ


class RangeClampCounter:
    """Counts points clamped into the perception range by :func:`normalize_points`."""

    def __init__(self):
        self.count = 0


CLAMPED = RangeClampCounter()


def normalize_points(points, prange) -> np.ndarray:
    """Map points to [0, 1]^3 by the (x_min, x_max, y_min, y_max, z_min, z_max) range.

    Out-of-range points are clamped and counted in ``CLAMPED``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lo = np.array(prange[0::2], dtype=np.float64)
    hi = np.array(prange[1::2], dtype=np.float64)
    norm = (pts - lo) / (hi - lo)
    outside = np.any((norm < 0.0) | (norm > 1.0), axis=1)
    if outside.any():
        CLAMPED.count += int(outside.sum())
        norm = np.clip(norm, 0.0, 1.0)
    return norm


def denormalize_points(norm, prange) -> np.ndarray:
    lo = np.array(prange[0::2], dtype=np.float64)
    hi = np.array(prange[1::2], dtype=np.float64)
    return lo + np.asarray(norm) * (hi - lo)


def fourier(x: np.ndarray, n_freq: int = N_FREQ) -> np.ndarray:
    """[x, sin(2^k pi x), cos(2^k pi x)] for k < n_freq, along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    freqs = np.pi * (2.0 ** np.arange(n_freq))
    ang = x[..., :, None] * freqs
    parts = [x, np.sin(ang).reshape(*x.shape[:-1], -1), np.cos(ang).reshape(*x.shape[:-1], -1)]
    return np.concatenate(parts, axis=-1)


def direction_embedding(direction) -> np.ndarray:
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    return fourier(d)


def ray_direction_pe(camera: CameraModel, pixel) -> np.ndarray:
    """Position embedding of the world-frame viewing direction through ``pixel``.

    Depends on the unit direction alone, so every point along one camera ray
    shares a single embedding.
    """
    u, v = pixel
    return direction_embedding(ray_through_pixel(camera, u, v).direction)

