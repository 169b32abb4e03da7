"""Hand-centered cropping, ground-truth interpolation, and geometric train
augmentation shared by the image and event branches."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import affine_transform

CROP_PADDING = 1.6  # square side over the longer bbox side
MIN_CROP_SIDE = 32.0
DEFAULT_CROP_SIZE = 192


def project_points(points: np.ndarray, intrinsics: np.ndarray) -> np.ndarray:
    """Pinhole projection of camera-frame points (N, 3) to pixels (N, 2)."""
    points = np.asarray(points, dtype=np.float64)
    p = points @ np.asarray(intrinsics, dtype=np.float64).T
    return p[:, :2] / p[:, 2:3]


@dataclass(frozen=True)
class CropTransform:
    """Affine pixel map from source coordinates into the crop: first scale by
    ``scale`` after shifting by ``-origin``."""

    scale: float
    origin: tuple[float, float]  # (x, y) of the crop's top-left in the source
    out_size: int

    def apply(self, points2d: np.ndarray) -> np.ndarray:
        pts = np.asarray(points2d, dtype=np.float64)
        return (pts - np.asarray(self.origin)) * self.scale

    def invert(self, points2d: np.ndarray) -> np.ndarray:
        pts = np.asarray(points2d, dtype=np.float64)
        return pts / self.scale + np.asarray(self.origin)


def crop_hand(
    frame: np.ndarray,
    joints3d: np.ndarray,
    intrinsics: np.ndarray,
    out_size: int = DEFAULT_CROP_SIZE,
) -> tuple[np.ndarray, CropTransform]:
    """Crop a concentric square of side CROP_PADDING times the longer side of
    the projected-joint bounding rectangle, resampled bilinearly.

    ``frame`` is [C, H, W] or [H, W]. Degenerate joint sets fall back to a
    MIN_CROP_SIDE square with a warning.
    """
    squeeze = frame.ndim == 2
    data = frame[None] if squeeze else frame
    h, w = data.shape[-2:]
    px = project_points(joints3d, intrinsics)
    inside = (px[:, 0] >= 0) & (px[:, 0] < w) & (px[:, 1] >= 0) & (px[:, 1] < h)
    if not inside.any():
        raise ValueError("no joint projects inside the sensor")

    lo = px.min(axis=0)
    hi = px.max(axis=0)
    side = CROP_PADDING * float(max(hi - lo))
    if side < MIN_CROP_SIDE:
        warnings.warn(
            f"degenerate joint bounding box; using {MIN_CROP_SIDE:.0f} px fallback square"
        )
        side = MIN_CROP_SIDE
    center = (lo + hi) / 2.0
    origin = (float(center[0] - side / 2.0), float(center[1] - side / 2.0))
    scale = out_size / side
    transform = CropTransform(scale=scale, origin=origin, out_size=out_size)
    return apply_crop(frame, transform), transform


def apply_crop(frame: np.ndarray, transform: CropTransform) -> np.ndarray:
    """Resample a [C, H, W] or [H, W] array into the crop square."""
    squeeze = frame.ndim == 2
    data = frame[None] if squeeze else frame
    out_size = transform.out_size
    matrix = np.array([[1.0 / transform.scale, 0.0], [0.0, 1.0 / transform.scale]])
    offset = np.array([transform.origin[1], transform.origin[0]])  # (row, col)
    cropped = np.stack(
        [
            affine_transform(
                c.astype(np.float64),
                matrix,
                offset=offset,
                output_shape=(out_size, out_size),
                order=1,
                mode="constant",
                cval=0.0,
            )
            for c in data
        ]
    ).astype(frame.dtype)
    return cropped[0] if squeeze else cropped


def crop_intrinsics(intrinsics: np.ndarray, transform: CropTransform) -> np.ndarray:
    """Intrinsics of the cropped view."""
    k = np.asarray(intrinsics, dtype=np.float64).copy()
    s = transform.scale
    ox, oy = transform.origin
    k[0, 0] *= s
    k[1, 1] *= s
    k[0, 2] = (k[0, 2] - ox) * s
    k[1, 2] = (k[1, 2] - oy) * s
    return k


def interpolate_joints(
    track: Sequence[tuple[int, np.ndarray]], t: int
) -> np.ndarray:
    """Per-coordinate linear interpolation of a timestamped joint track."""
    if not track:
        raise ValueError("empty annotation track")
    times = np.asarray([entry[0] for entry in track], dtype=np.int64)
    if t < times[0] or t > times[-1]:
        raise ValueError(f"t={t} outside annotation span [{times[0]}, {times[-1]}]")
    idx = int(np.searchsorted(times, t, side="left"))
    if times[idx] == t:
        return np.asarray(track[idx][1], dtype=np.float64).copy()
    t0, j0 = track[idx - 1]
    t1, j1 = track[idx]
    a = (t - t0) / (t1 - t0)
    return (1.0 - a) * np.asarray(j0, float) + a * np.asarray(j1, float)


@dataclass(frozen=True)
class GeometricParams:
    scale: float = 1.0
    rotation: float = 0.0  # radians, about the image center / camera axis
    translation: tuple[float, float] = (0.0, 0.0)  # pixels

    @classmethod
    def sample(
        cls,
        rng: np.random.Generator,
        scale_range: tuple[float, float] = (0.8, 1.2),
        rot_range: float = np.pi / 6,
        trans_range: float = 10.0,
    ) -> "GeometricParams":
        return cls(
            scale=float(rng.uniform(*scale_range)),
            rotation=float(rng.uniform(-rot_range, rot_range)),
            translation=(
                float(rng.uniform(-trans_range, trans_range)),
                float(rng.uniform(-trans_range, trans_range)),
            ),
        )


def similarity_matrix(
    params: GeometricParams, width: int, height: int
) -> np.ndarray:
    """2x3 pixel map: scale and rotate about the image center, then translate."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    c, s = np.cos(params.rotation), np.sin(params.rotation)
    rot = params.scale * np.array([[c, -s], [s, c]])
    shift = np.array([cx, cy]) - rot @ np.array([cx, cy]) + np.array(params.translation)
    return np.concatenate([rot, shift[:, None]], axis=1)


def transform_points(matrix: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ matrix[:, :2].T + matrix[:, 2]


def warp_image(image: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Apply a forward 2x3 pixel map with bilinear resampling, zero padding."""
    squeeze = image.ndim == 2
    data = image[None] if squeeze else image
    h, w = data.shape[-2:]
    rot = matrix[:, :2]
    inv = np.linalg.inv(rot)
    # scipy maps output (row, col) -> input; swap axes relative to (x, y)
    inv_rc = inv[::-1, ::-1]
    offset_xy = -inv @ matrix[:, 2]
    out = np.stack(
        [
            affine_transform(
                c.astype(np.float64),
                inv_rc,
                offset=offset_xy[::-1],
                output_shape=(h, w),
                order=1,
                mode="constant",
                cval=0.0,
            )
            for c in data
        ]
    ).astype(image.dtype)
    return out[0] if squeeze else out


def rotation_about_camera_axis(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def geometric_augment(
    image: np.ndarray,
    event_data: np.ndarray,
    joints2d: np.ndarray,
    points3d: Sequence[np.ndarray],
    params: GeometricParams,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[np.ndarray]]:
    """Apply one 2-D similarity transform to the image, the stacked event
    frame, and the projected labels; 3-D label sets rotate about the camera
    axis by the same angle (scale and translation act in-plane only)."""
    h, w = image.shape[-2:]
    if event_data.shape[-2:] != (h, w):
        raise ValueError("image and event frame must share spatial size")
    matrix = similarity_matrix(params, w, h)
    rot3 = rotation_about_camera_axis(params.rotation)
    return (
        warp_image(image, matrix),
        warp_image(event_data, matrix),
        transform_points(matrix, joints2d),
        [np.asarray(p, float) @ rot3.T for p in points3d],
    )


def sample_event_count(
    rng: np.random.Generator, lo: int = 5000, hi: int = 9000
) -> int:
    """Uniform training-time window size; evaluation always uses a fixed N."""
    return int(rng.integers(lo, hi + 1))
