"""Stochastic degradation of (image, event-frame) training pairs, bridging
normal scenes toward challenging ones: overexposure, motion blur, background
overflow, and event-stream Gaussian noise, plus the 4-D descriptor used to
check the bridging at the statistics level.

Images are float arrays in [0, 1], channel-first when colored. Degradations
compose in fixed order OE -> MB on the image side and BO -> Gaussian on the
event side so a seeded run is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import convolve

from .events import StackedEventFrame, add_temporal_noise

Interpolator = Callable[[Sequence[np.ndarray], int], list[np.ndarray]]

LAPLACIAN_3X3 = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class DegradationConfig:
    p_oe: float = 0.4
    oe_range: tuple[float, float] = (0.8, 4.0)
    p_mb: float = 0.3
    mb_frames: int = 17
    p_bo: float = 1.0  # per-sample trigger; per-pixel rate is bo_pixel_p
    bo_pixel_p: float = 0.2
    p_noise: float = 0.8
    noise_range: tuple[float, float] = (0.05, 0.2)

    def __post_init__(self) -> None:
        for name in ("p_oe", "p_mb", "p_bo", "p_noise", "bo_pixel_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        if self.oe_range[0] > self.oe_range[1]:
            raise ValueError("oe_range must be (lo, hi) with lo <= hi")
        if self.mb_frames < 1 or self.mb_frames % 2 == 0:
            raise ValueError("mb_frames must be odd and >= 1")

    @classmethod
    def disabled(cls) -> "DegradationConfig":
        return cls(p_oe=0.0, p_mb=0.0, p_bo=0.0, p_noise=0.0)


@dataclass(frozen=True)
class PairDescriptor:
    """Scene statistics of a pair: image sharpness and brightness, plus the
    per-polarity event-frame means."""

    sharpness: float
    brightness: float
    mean_pos: float
    mean_neg: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.sharpness, self.brightness, self.mean_pos, self.mean_neg]
        )


# ---------------------------------------------------------------------------
# individual degradations
# ---------------------------------------------------------------------------


def degrade_overexposure(image: np.ndarray, factor: float) -> np.ndarray:
    """Brightness jitter clamp(factor * image, 0, 1)."""
    if factor <= 0:
        raise ValueError("brightness factor must be positive")
    return np.clip(factor * image, 0.0, 1.0)


def degrade_motion_blur(
    frames: Sequence[np.ndarray],
    interp: Interpolator,
    mb_frames: int = 17,
) -> np.ndarray:
    """Blur from a triplet of sharp frames: interpolate to mb_frames total
    frames and average them, clamped to [0, 1]."""
    if len(frames) != 3:
        raise ValueError("motion blur expects 3 consecutive frames")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise ValueError("motion blur frames must share one shape")
    expanded = interp(frames, mb_frames)
    if len(expanded) != mb_frames:
        raise ValueError(
            f"interpolator returned {len(expanded)} frames, expected {mb_frames}"
        )
    return np.clip(np.mean(expanded, axis=0), 0.0, 1.0)


def degrade_background_overflow(
    frame: StackedEventFrame, pixel_p: float, rng: np.random.Generator
) -> StackedEventFrame:
    """Salt-and-pepper noise: each element independently with probability
    pixel_p becomes 1 or 0, equiprobable."""
    if not 0.0 <= pixel_p <= 1.0:
        raise ValueError("pixel_p must be in [0, 1]")
    hit = rng.random(frame.data.shape) < pixel_p
    salt = rng.random(frame.data.shape) < 0.5
    data = np.where(hit, np.where(salt, 1.0, 0.0), frame.data).astype(np.float32)
    return StackedEventFrame(
        data=data, target_time=frame.target_time, window_start=frame.window_start
    )


# ---------------------------------------------------------------------------
# frame interpolators for motion blur
# ---------------------------------------------------------------------------


def linear_warp(image: np.ndarray, flow: np.ndarray, alpha: float) -> np.ndarray:
    """Backward-warp an image along alpha * flow (flow[0]=u horizontal,
    flow[1]=v vertical, pixels), bilinear with zero padding."""
    gray = image if image.ndim == 2 else image.mean(axis=0)
    h, w = gray.shape[-2:]
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sx = xx - alpha * flow[0]
    sy = yy - alpha * flow[1]
    if image.ndim == 2:
        return _bilinear(image, sx, sy)
    return np.stack([_bilinear(c, sx, sy) for c in image])


def _bilinear(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = img.shape
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros_like(sx, dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            out += wgt * np.where(ok, img[yi.clip(0, h - 1), xi.clip(0, w - 1)], 0.0)
    return out


class KnownFlowInterpolator:
    """Interpolator that warps along supplied constant flows: flow01 carries
    frame0 to frame1 and flow12 carries frame1 to frame2. Used when a test
    needs exact motion."""

    def __init__(self, flow01: tuple[float, float], flow12: tuple[float, float]):
        self.flow01 = flow01
        self.flow12 = flow12

    def __call__(self, frames: Sequence[np.ndarray], count: int) -> list[np.ndarray]:
        shape = frames[0].shape[-2:]
        out = []
        for pos in np.linspace(0.0, 2.0, count):
            if pos <= 1.0:
                flow = _constant_flow(self.flow01, shape)
                out.append(linear_warp(frames[0], flow, pos))
            else:
                flow = _constant_flow(self.flow12, shape)
                out.append(linear_warp(frames[1], flow, pos - 1.0))
        return out


def _constant_flow(uv: tuple[float, float], shape: tuple[int, int]) -> np.ndarray:
    flow = np.zeros((2,) + shape)
    flow[0] = uv[0]
    flow[1] = uv[1]
    return flow


class BlockMatchingInterpolator:
    """Default desk-scale interpolator: per-block translational flow from
    SSD matching, then linear warps at intermediate times."""

    def __init__(self, block: int = 16, radius: int = 5):
        self.block = block
        self.radius = radius

    def __call__(self, frames: Sequence[np.ndarray], count: int) -> list[np.ndarray]:
        g = [f if f.ndim == 2 else f.mean(axis=0) for f in frames]
        flow01 = _block_flow(g[0], g[1], self.block, self.radius)
        flow12 = _block_flow(g[1], g[2], self.block, self.radius)
        out = []
        for pos in np.linspace(0.0, 2.0, count):
            if pos <= 1.0:
                out.append(linear_warp(frames[0], flow01, pos))
            else:
                out.append(linear_warp(frames[1], flow12, pos - 1.0))
        return out


def _block_flow(a: np.ndarray, b: np.ndarray, block: int, radius: int) -> np.ndarray:
    """Per-pixel flow carrying a toward b, constant within blocks."""
    h, w = a.shape
    flow = np.zeros((2, h, w))
    for by in range(0, h, block):
        for bx in range(0, w, block):
            patch = a[by : by + block, bx : bx + block]
            # zero shift is the baseline so static content keeps zero flow
            best = (0, 0)
            best_err = float(
                ((b[by : by + patch.shape[0], bx : bx + patch.shape[1]] - patch) ** 2).sum()
            )
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    y0, y1 = by + dy, by + dy + patch.shape[0]
                    x0, x1 = bx + dx, bx + dx + patch.shape[1]
                    if y0 < 0 or x0 < 0 or y1 > h or x1 > w:
                        continue
                    err = float(((b[y0:y1, x0:x1] - patch) ** 2).sum())
                    if err < best_err:
                        best_err = err
                        best = (dx, dy)
            flow[0, by : by + block, bx : bx + block] = best[0]
            flow[1, by : by + block, bx : bx + block] = best[1]
    return flow


# ---------------------------------------------------------------------------
# composition and descriptors
# ---------------------------------------------------------------------------


def apply_degrader(
    pair: tuple[np.ndarray, StackedEventFrame],
    cfg: DegradationConfig,
    rng: np.random.Generator,
    image_triplet: Sequence[np.ndarray] | None = None,
    interp: Interpolator | None = None,
) -> tuple[tuple[np.ndarray, StackedEventFrame], list[dict]]:
    """Independently trigger OE, MB, BO and event Gaussian noise, sampling
    parameters from the configured ranges. Returns the degraded pair and a
    record of which degradations fired with which parameters.

    Motion blur draws on ``image_triplet`` (3 consecutive sharp frames); when
    absent the pair image is replicated, which degenerates to a no-op blur.
    """
    image, frame = pair
    record: list[dict] = []

    if rng.random() < cfg.p_oe:
        factor = float(rng.uniform(*cfg.oe_range))
        image = degrade_overexposure(image, factor)
        record.append({"op": "overexposure", "factor": factor})

    if rng.random() < cfg.p_mb:
        triplet = list(image_triplet) if image_triplet is not None else [image] * 3
        interpolator = interp if interp is not None else BlockMatchingInterpolator()
        image = degrade_motion_blur(triplet, interpolator, cfg.mb_frames)
        record.append({"op": "motion_blur", "frames": cfg.mb_frames})

    if rng.random() < cfg.p_bo:
        frame = degrade_background_overflow(frame, cfg.bo_pixel_p, rng)
        record.append({"op": "background_overflow", "pixel_p": cfg.bo_pixel_p})

    if rng.random() < cfg.p_noise:
        sigma = float(rng.uniform(*cfg.noise_range))
        frame = add_temporal_noise(frame, sigma, rng)
        record.append({"op": "gaussian_noise", "sigma": sigma})

    return (image, frame), record


def compute_descriptor(
    pair: tuple[np.ndarray, StackedEventFrame]
) -> PairDescriptor:
    """4-D pair descriptor: Laplacian-variance sharpness, mean brightness,
    and per-polarity event-frame means."""
    image, frame = pair
    gray = image if image.ndim == 2 else image.mean(axis=0)
    response = convolve(gray.astype(np.float64), LAPLACIAN_3X3, mode="nearest")
    return PairDescriptor(
        sharpness=float(response.var()),
        brightness=float(gray.mean()),
        mean_pos=float(frame.data[0].mean()),
        mean_neg=float(frame.data[1].mean()),
    )
