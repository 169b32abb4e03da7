"""Event stream data model, time-surface stacking, frame-to-event simulation,
temporal windowing and binning.

Conventions used throughout:
    - timestamps are integer microseconds,
    - polarity is -1 or +1,
    - stacked frames are two-channel, channel 0 = positive events,
      channel 1 = negative events, values in [0, 1],
    - sensor_size is (width, height).
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

POSITIVE_CHANNEL = 0
NEGATIVE_CHANNEL = 1

EVB1_MAGIC = b"EVB1\0\0\0\0"
_EVB1_RECORD = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "V5")]
)


class DegenerateWindowWarning(UserWarning):
    """Raised (as a warning) when a stacking window has zero temporal extent."""


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class EventStream:
    """Time-ordered asynchronous events on a fixed sensor.

    Arrays share one index; ``t`` must be non-decreasing and every event must
    lie inside ``sensor_size``. ``short_window`` is metadata set by
    :func:`slice_window` when fewer events than requested were available.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    sensor_size: tuple[int, int]
    short_window: bool = False

    def __post_init__(self) -> None:
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event field arrays must have equal length")
        if n:
            if np.any(np.diff(self.t) < 0):
                raise ValueError("event timestamps must be non-decreasing")
            if not np.isin(self.p, (-1, 1)).all():
                raise ValueError("polarity must be -1 or +1")
            w, h = self.sensor_size
            if self.x.min() < 0 or self.x.max() >= w:
                raise ValueError("event x coordinate outside sensor")
            if self.y.min() < 0 or self.y.max() >= h:
                raise ValueError("event y coordinate outside sensor")

    @classmethod
    def from_arrays(
        cls,
        x: Sequence[int],
        y: Sequence[int],
        t: Sequence[int],
        p: Sequence[int],
        sensor_size: tuple[int, int],
        short_window: bool = False,
    ) -> "EventStream":
        return cls(
            x=np.asarray(x, dtype=np.int64),
            y=np.asarray(y, dtype=np.int64),
            t=np.asarray(t, dtype=np.int64),
            p=np.asarray(p, dtype=np.int8),
            sensor_size=(int(sensor_size[0]), int(sensor_size[1])),
            short_window=short_window,
        )

    @classmethod
    def empty(cls, sensor_size: tuple[int, int]) -> "EventStream":
        return cls.from_arrays([], [], [], [], sensor_size)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    @property
    def events(self) -> list[Event]:
        return list(self)

    def take(self, lo: int, hi: int, short_window: bool = False) -> "EventStream":
        return EventStream(
            x=self.x[lo:hi],
            y=self.y[lo:hi],
            t=self.t[lo:hi],
            p=self.p[lo:hi],
            sensor_size=self.sensor_size,
            short_window=short_window,
        )


@dataclass(frozen=True)
class StackedEventFrame:
    """Two-channel time surface: normalized recency of the last event per
    pixel and polarity, in [0, 1]."""

    data: np.ndarray  # [2, H, W] float32
    target_time: int
    window_start: int

    def __post_init__(self) -> None:
        if self.data.ndim != 3 or self.data.shape[0] != 2:
            raise ValueError(f"expected [2, H, W] data, got {self.data.shape}")

    @property
    def sensor_size(self) -> tuple[int, int]:
        return (self.data.shape[2], self.data.shape[1])


@dataclass(frozen=True)
class SimulatorConfig:
    """Thresholds and temporal upsampling of the frame-to-event simulator."""

    c_pos: float = 0.143
    c_neg: float = 0.225
    interp_factor: int = 10

    def __post_init__(self) -> None:
        if self.c_pos <= 0 or self.c_neg <= 0:
            raise ValueError("log-intensity thresholds must be positive")
        if self.interp_factor < 1:
            raise ValueError("interp_factor must be >= 1")


# ---------------------------------------------------------------------------
# windowing and stacking
# ---------------------------------------------------------------------------


def slice_window(stream: EventStream, t: int, n: int) -> EventStream:
    """Return the last ``n`` events with timestamp <= ``t``, order preserved.

    If fewer than ``n`` events precede ``t`` the full available prefix is
    returned with ``short_window=True``. An empty result is legal; the caller
    decides whether that is fatal.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    hi = int(np.searchsorted(stream.t, t, side="right"))
    lo = max(0, hi - n)
    return stream.take(lo, hi, short_window=(hi - lo) < n)


def stack_events(
    window: EventStream,
    t: int,
    sensor_size: tuple[int, int] | None = None,
) -> StackedEventFrame:
    """Stack an event window into a two-channel frame with linear recency
    weights (t_i - t_s) / (t - t_s), t_s the first event's timestamp.

    Later events at the same pixel and polarity overwrite earlier values.
    A zero-extent window (t == t_s) yields an all-zero frame and a
    DegenerateWindowWarning instead of an error.
    """
    if len(window) == 0:
        raise ValueError("stack_events requires a non-empty window")
    if int(window.t[-1]) > t:
        raise ValueError("window contains events after the target time")
    if sensor_size is None:
        sensor_size = window.sensor_size
    w, h = sensor_size
    data = np.zeros((2, h, w), dtype=np.float32)
    t_s = int(window.t[0])
    if t == t_s:
        warnings.warn(
            "stacking window has zero temporal extent; returning zero frame",
            DegenerateWindowWarning,
        )
        return StackedEventFrame(data=data, target_time=t, window_start=t_s)
    vals = ((window.t - t_s) / float(t - t_s)).astype(np.float32)
    chan = np.where(window.p > 0, POSITIVE_CHANNEL, NEGATIVE_CHANNEL)
    # events are time sorted, so the last write per cell is also the maximum
    np.maximum.at(data, (chan, window.y, window.x), vals)
    return StackedEventFrame(data=data, target_time=t, window_start=t_s)


def add_temporal_noise(
    frame: StackedEventFrame, sigma: float, rng: np.random.Generator
) -> StackedEventFrame:
    """Add i.i.d. zero-mean Gaussian noise to every element, clamped to [0, 1]."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return frame
    noisy = frame.data + rng.normal(0.0, sigma, size=frame.data.shape).astype(np.float32)
    return StackedEventFrame(
        data=np.clip(noisy, 0.0, 1.0),
        target_time=frame.target_time,
        window_start=frame.window_start,
    )


# ---------------------------------------------------------------------------
# frame-to-event simulation
# ---------------------------------------------------------------------------

INTENSITY_FLOOR = 1e-3  # clamp before log to avoid -inf at black pixels


def simulate_events(
    frames: Sequence[tuple[int, np.ndarray]],
    cfg: SimulatorConfig,
) -> EventStream:
    """Simulate an event stream from timestamped grayscale frames.

    Per pixel a reference log-intensity is tracked; whenever the current
    log-intensity exceeds it by k * c_pos (or falls below by k * c_neg),
    k events of the matching polarity are emitted at evenly spaced times
    inside the inter-frame interval and the reference advances by
    k * threshold. interp_factor > 1 linearly upsamples intensities in time
    before thresholding.
    """
    if len(frames) < 2:
        raise ValueError("need at least two frames to simulate events")
    times = np.asarray([t for t, _ in frames], dtype=np.int64)
    if np.any(np.diff(times) <= 0):
        raise ValueError("frame timestamps must be strictly increasing")
    shape = frames[0][1].shape
    for _, img in frames:
        if img.shape != shape:
            raise ValueError("all frames must share one shape")

    h, w = shape
    ref_log = _safe_log(frames[0][1])
    xs: list[np.ndarray] = []
    ys: list[np.ndarray] = []
    ts: list[np.ndarray] = []
    ps: list[np.ndarray] = []

    for i in range(1, len(frames)):
        t0, img0 = int(times[i - 1]), frames[i - 1][1]
        t1, img1 = int(times[i]), frames[i][1]
        m = cfg.interp_factor
        for j in range(1, m + 1):
            a = j / m
            sub = img1 if j == m else (1.0 - a) * img0 + a * img1
            sub_t0 = t0 + round((j - 1) / m * (t1 - t0))
            sub_t1 = t0 + round(j / m * (t1 - t0))
            cur_log = _safe_log(sub)
            delta = cur_log - ref_log
            k_pos = np.floor(delta / cfg.c_pos).astype(np.int64)
            k_pos[delta < 0] = 0
            k_neg = np.floor(-delta / cfg.c_neg).astype(np.int64)
            k_neg[delta > 0] = 0
            for k, pol, c in ((k_pos, 1, cfg.c_pos), (k_neg, -1, cfg.c_neg)):
                yy, xx = np.nonzero(k)
                if len(xx) == 0:
                    continue
                counts = k[yy, xx]
                ev_x = np.repeat(xx, counts)
                ev_y = np.repeat(yy, counts)
                # j-th of k events at sub_t0 + j/(k+1) of the sub-interval
                idx = _ragged_ranges(counts)
                frac = (idx + 1) / (np.repeat(counts, counts) + 1)
                ev_t = sub_t0 + np.floor(frac * (sub_t1 - sub_t0)).astype(np.int64)
                xs.append(ev_x)
                ys.append(ev_y)
                ts.append(ev_t)
                ps.append(np.full(len(ev_x), pol, dtype=np.int8))
            ref_log = ref_log + k_pos * cfg.c_pos - k_neg * cfg.c_neg

    if not xs:
        return EventStream.empty((w, h))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    t = np.concatenate(ts)
    p = np.concatenate(ps)
    order = np.argsort(t, kind="stable")
    return EventStream(
        x=x[order], y=y[order], t=t[order], p=p[order], sensor_size=(w, h)
    )


def _safe_log(img: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(np.asarray(img, dtype=np.float64), INTENSITY_FLOOR))


def _ragged_ranges(counts: np.ndarray) -> np.ndarray:
    """[0..c0-1, 0..c1-1, ...] for positive counts."""
    total = int(counts.sum())
    idx = np.arange(total)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    return idx - starts


# ---------------------------------------------------------------------------
# binning and frame pairing
# ---------------------------------------------------------------------------


class EventBin(NamedTuple):
    bin_time: int
    window: EventStream
    paired_frame_index: int


def bin_stream(
    stream: EventStream,
    bin_rate: float,
    frame_times: Sequence[int],
) -> list[EventBin]:
    """Split a stream into bins at ``bin_rate`` and pair each bin time with
    the latest frame not after it (argmin |t_i - t_j| subject to
    t_i - t_j >= 0).

    Bins are anchored at the stream start; a bin covers the half-open
    interval ending at its bin time. Bins preceding the first frame
    timestamp are dropped with a warning.
    """
    if bin_rate <= 0:
        raise ValueError("bin_rate must be positive")
    frame_times = np.asarray(frame_times, dtype=np.int64)
    if len(frame_times) == 0:
        raise ValueError("frame_times must be non-empty")
    if np.any(np.diff(frame_times) < 0):
        raise ValueError("frame_times must be sorted")
    if len(stream) == 0:
        return []

    t_start = int(stream.t[0])
    t_end = int(stream.t[-1])
    period_us = 1e6 / bin_rate
    bins: list[EventBin] = []
    dropped = 0
    k = 1
    prev_edge = t_start
    while True:
        bin_time = t_start + int(round(k * period_us))
        if bin_time > t_end:
            break
        lo = int(np.searchsorted(stream.t, prev_edge, side="right"))
        hi = int(np.searchsorted(stream.t, bin_time, side="right"))
        j = int(np.searchsorted(frame_times, bin_time, side="right")) - 1
        if j < 0:
            dropped += 1
        else:
            bins.append(EventBin(bin_time, stream.take(lo, hi), j))
        prev_edge = bin_time
        k += 1
    if dropped:
        warnings.warn(f"dropped {dropped} bins preceding the first frame timestamp")
    return bins


# ---------------------------------------------------------------------------
# event file codecs
# ---------------------------------------------------------------------------


def write_evb(path: str | Path, stream: EventStream) -> None:
    """Write the binary EVB1 event format."""
    w, h = stream.sensor_size
    rec = np.zeros(len(stream), dtype=_EVB1_RECORD)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    with open(path, "wb") as f:
        f.write(EVB1_MAGIC)
        f.write(struct.pack("<HHQ", w, h, len(stream)))
        f.write(rec.tobytes())


def read_evb(path: str | Path) -> EventStream:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != EVB1_MAGIC:
            raise ValueError(f"{path}: bad EVB1 magic {magic!r}")
        w, h, count = struct.unpack("<HHQ", f.read(12))
        raw = f.read(count * _EVB1_RECORD.itemsize)
    if len(raw) != count * _EVB1_RECORD.itemsize:
        raise ValueError(f"{path}: truncated EVB1 payload")
    rec = np.frombuffer(raw, dtype=_EVB1_RECORD)
    return EventStream(
        x=rec["x"].astype(np.int64),
        y=rec["y"].astype(np.int64),
        t=rec["t"].astype(np.int64),
        p=rec["p"].astype(np.int8),
        sensor_size=(w, h),
    )


def write_event_csv(path: str | Path, stream: EventStream) -> None:
    """Debug CSV codec, header ``t,x,y,p``. Sensor size goes in a comment line
    so the round trip is lossless."""
    with open(path, "w") as f:
        f.write(f"# sensor_size={stream.sensor_size[0]}x{stream.sensor_size[1]}\n")
        f.write("t,x,y,p\n")
        for i in range(len(stream)):
            f.write(f"{stream.t[i]},{stream.x[i]},{stream.y[i]},{stream.p[i]}\n")


def read_event_csv(path: str | Path) -> EventStream:
    with open(path) as f:
        first = f.readline().strip()
        if not first.startswith("# sensor_size="):
            raise ValueError(f"{path}: missing sensor_size comment")
        w, h = (int(v) for v in first.split("=", 1)[1].split("x"))
        header = f.readline().strip()
        if header != "t,x,y,p":
            raise ValueError(f"{path}: unexpected CSV header {header!r}")
        rows = [line.strip().split(",") for line in f if line.strip()]
    t = np.asarray([int(r[0]) for r in rows], dtype=np.int64)
    x = np.asarray([int(r[1]) for r in rows], dtype=np.int64)
    y = np.asarray([int(r[2]) for r in rows], dtype=np.int64)
    p = np.asarray([int(r[3]) for r in rows], dtype=np.int8)
    return EventStream(x=x, y=y, t=t, p=p, sensor_size=(w, h))
