"""Dataset ingestion and generation.

On-disk layout (one directory per sequence)::

    root/<sequence_id>/
        events.evb          EVB1 binary event stream
        rgb/<t_us>.png      RGB frames named by integer-microsecond timestamp
        annotations.json    schema_version, scene_tag, camera_id, records
        calib.json          schema_version, cameras -> intrinsics, resolution
    root/hand_model.npz     hand model archive shared by the split

Annotation records carry a timestamp, hand pose/shape parameters, and the
21 camera-frame 3-D joints (mm). The synthetic generator renders a crudely
shaded moving hand, simulates events between frames, and writes this exact
layout with bit-exact parameter annotations.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image

from . import hand_model as hm
from .augment import interpolate_joints, project_points
from .errors import DataError
from .events import (
    EventStream,
    SimulatorConfig,
    StackedEventFrame,
    read_evb,
    simulate_events,
    slice_window,
    stack_events,
    write_evb,
)

SCHEMA_VERSION = 1
SCENE_TAGS = ("normal", "strong_light", "flash", "fast_motion")
EVAL_EVENT_COUNT = 7000  # fixed window size on the evaluation path


@dataclass(frozen=True)
class AnnotationRecord:
    timestamp: int
    mano: hm.ManoParams
    joints3d: np.ndarray  # (21, 3) camera-frame mm
    camera_id: str

    def __post_init__(self) -> None:
        j = np.asarray(self.joints3d, dtype=np.float64)
        if j.shape != (hm.NUM_JOINTS, 3) or not np.isfinite(j).all():
            raise ValueError("joints3d must be finite (21, 3)")
        object.__setattr__(self, "joints3d", j)


@dataclass(frozen=True)
class SequenceEntry:
    sequence_id: str
    scene_tag: str
    events_path: Path
    frame_dir: Path
    annotations_path: Path
    calib_path: Path


@dataclass
class DatasetIndex:
    root: Path
    sequences: list[SequenceEntry]
    split: str = "train"

    def __post_init__(self) -> None:
        if self.split not in ("train", "eval"):
            raise ValueError(f"split must be train or eval, got {self.split!r}")


@dataclass
class LoadedSequence:
    entry: SequenceEntry
    stream: EventStream
    frame_times: list[int]
    frames: list[np.ndarray]  # [3, H, W] float32 in [0, 1]
    records: list[AnnotationRecord]
    intrinsics: np.ndarray
    resolution: tuple[int, int]


def load_dataset(root: str | Path, split: str = "train") -> DatasetIndex:
    """Scan a dataset root, validating schemas eagerly. Any malformed
    sequence aborts the load; an empty root yields an empty index with a
    warning."""
    root = Path(root)
    if not root.exists():
        raise DataError(f"dataset root {root} does not exist")
    sequences = []
    for seq_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        entry = SequenceEntry(
            sequence_id=seq_dir.name,
            scene_tag="",
            events_path=seq_dir / "events.evb",
            frame_dir=seq_dir / "rgb",
            annotations_path=seq_dir / "annotations.json",
            calib_path=seq_dir / "calib.json",
        )
        for path in (
            entry.events_path,
            entry.frame_dir,
            entry.annotations_path,
            entry.calib_path,
        ):
            if not path.exists():
                raise DataError(f"{seq_dir.name}: missing {path.name}")
        meta = _parse_annotations(entry.annotations_path)
        _parse_calib(entry.calib_path)
        sequences.append(
            SequenceEntry(
                sequence_id=entry.sequence_id,
                scene_tag=meta["scene_tag"],
                events_path=entry.events_path,
                frame_dir=entry.frame_dir,
                annotations_path=entry.annotations_path,
                calib_path=entry.calib_path,
            )
        )
    if not sequences:
        warnings.warn(f"dataset root {root} holds no sequences")
    return DatasetIndex(root=root, sequences=sequences, split=split)


def _parse_annotations(path: Path) -> dict:
    try:
        with open(path) as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from None
    for key in ("schema_version", "scene_tag", "camera_id", "records"):
        if key not in meta:
            raise DataError(f"{path}: missing key {key!r}")
    if meta["schema_version"] != SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported schema_version {meta['schema_version']}")
    if meta["scene_tag"] not in SCENE_TAGS:
        raise DataError(f"{path}: scene_tag {meta['scene_tag']!r} not in {SCENE_TAGS}")
    if not meta["records"]:
        raise DataError(f"{path}: records must be non-empty")
    for i, rec in enumerate(meta["records"]):
        for key in ("t", "theta", "beta", "joints3d", "camera_id"):
            if key not in rec:
                raise DataError(f"{path}: record {i} missing key {key!r}")
    return meta


def _parse_calib(path: Path) -> dict:
    try:
        with open(path) as f:
            calib = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from None
    if calib.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported calib schema_version")
    if "cameras" not in calib or not calib["cameras"]:
        raise DataError(f"{path}: missing cameras")
    for cam_id, cam in calib["cameras"].items():
        k = np.asarray(cam.get("intrinsics", []), dtype=np.float64)
        if k.shape != (3, 3):
            raise DataError(f"{path}: camera {cam_id} intrinsics must be 3x3")
        if len(cam.get("resolution", [])) != 2:
            raise DataError(f"{path}: camera {cam_id} resolution must be (w, h)")
    return calib


def load_sequence(entry: SequenceEntry) -> LoadedSequence:
    meta = _parse_annotations(entry.annotations_path)
    calib = _parse_calib(entry.calib_path)
    camera_id = meta["camera_id"]
    if camera_id not in calib["cameras"]:
        raise DataError(f"{entry.sequence_id}: camera {camera_id!r} missing in calib")
    cam = calib["cameras"][camera_id]
    intrinsics = np.asarray(cam["intrinsics"], dtype=np.float64)
    resolution = (int(cam["resolution"][0]), int(cam["resolution"][1]))

    stream = read_evb(entry.events_path)
    frame_paths = sorted(entry.frame_dir.glob("*.png"))
    if not frame_paths:
        raise DataError(f"{entry.sequence_id}: no rgb frames")
    frame_times = []
    frames = []
    for p in frame_paths:
        try:
            frame_times.append(int(p.stem))
        except ValueError:
            raise DataError(
                f"{entry.sequence_id}: frame {p.name} not named by timestamp"
            ) from None
        arr = np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / 255.0
        frames.append(arr.transpose(2, 0, 1))

    records = []
    span = (frame_times[0], frame_times[-1])
    for i, raw in enumerate(meta["records"]):
        t = int(raw["t"])
        if not span[0] <= t <= span[1]:
            raise DataError(
                f"{entry.sequence_id}: record {i} timestamp {t} outside frame span {span}"
            )
        records.append(
            AnnotationRecord(
                timestamp=t,
                mano=hm.ManoParams(
                    np.asarray(raw["theta"], dtype=np.float64),
                    np.asarray(raw["beta"], dtype=np.float64),
                ),
                joints3d=np.asarray(raw["joints3d"], dtype=np.float64),
                camera_id=str(raw["camera_id"]),
            )
        )
    records.sort(key=lambda r: r.timestamp)
    return LoadedSequence(
        entry=entry,
        stream=stream,
        frame_times=frame_times,
        frames=frames,
        records=records,
        intrinsics=intrinsics,
        resolution=resolution,
    )


def mesh_from_record(
    record: AnnotationRecord, model: hm.HandModelData
) -> hm.HandMesh:
    """Camera-frame ground-truth mesh: run the hand model and translate so the
    regressed wrist matches the annotated wrist."""
    mesh = hm.mano_forward(record.mano, model)
    return mesh.translated(record.joints3d[0] - mesh.joints[0])


# ---------------------------------------------------------------------------
# synthetic sequence generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    sequence_id: str = "seq000"
    scene_tag: str = "normal"
    camera_id: str = "cam0"
    duration_s: float = 2.0
    fps: float = 15.0
    resolution: tuple[int, int] = (346, 260)
    focal: float = 320.0
    hand_depth_mm: float = 400.0
    motion_amplitude_mm: float = 25.0
    static: bool = False
    sim: SimulatorConfig = field(default_factory=SimulatorConfig)


def make_synthetic_sequence(
    model: hm.HandModelData,
    cfg: SynthConfig,
    rng: np.random.Generator,
    out_root: str | Path,
) -> SequenceEntry:
    """Render a smooth random hand trajectory at cfg.fps, simulate the event
    stream between frames, and write the full dataset layout with exact
    annotations."""
    out_dir = Path(out_root) / cfg.sequence_id
    (out_dir / "rgb").mkdir(parents=True, exist_ok=True)
    w, h = cfg.resolution
    intrinsics = np.array(
        [[cfg.focal, 0.0, w / 2.0], [0.0, cfg.focal, h / 2.0], [0.0, 0.0, 1.0]]
    )

    n_frames = max(2, int(round(cfg.duration_s * cfg.fps)))
    frame_times = [int(round(k * 1e6 / cfg.fps)) for k in range(n_frames)]
    trajectory = _sample_trajectory(rng, cfg, n_frames)

    gray_frames: list[tuple[int, np.ndarray]] = []
    records = []
    for k, t in enumerate(frame_times):
        params, translation = trajectory(k / cfg.fps)
        mesh = hm.mano_forward(params, model).translated(translation)
        gray = _render_hand(mesh.vertices, intrinsics, (w, h))
        gray_frames.append((t, gray))
        rgb = np.repeat(gray[None], 3, axis=0)
        _write_png(out_dir / "rgb" / f"{t:012d}.png", rgb)
        records.append(
            {
                "t": t,
                "theta": params.theta.tolist(),
                "beta": params.beta.tolist(),
                "joints3d": mesh.joints.tolist(),
                "camera_id": cfg.camera_id,
            }
        )

    stream = simulate_events(gray_frames, cfg.sim)
    write_evb(out_dir / "events.evb", stream)

    with open(out_dir / "annotations.json", "w") as f:
        json.dump(
            {
                "schema_version": SCHEMA_VERSION,
                "scene_tag": cfg.scene_tag,
                "camera_id": cfg.camera_id,
                "records": records,
            },
            f,
        )
    with open(out_dir / "calib.json", "w") as f:
        json.dump(
            {
                "schema_version": SCHEMA_VERSION,
                "cameras": {
                    cfg.camera_id: {
                        "intrinsics": intrinsics.tolist(),
                        "resolution": [w, h],
                    }
                },
            },
            f,
        )
    return SequenceEntry(
        sequence_id=cfg.sequence_id,
        scene_tag=cfg.scene_tag,
        events_path=out_dir / "events.evb",
        frame_dir=out_dir / "rgb",
        annotations_path=out_dir / "annotations.json",
        calib_path=out_dir / "calib.json",
    )


def _sample_trajectory(
    rng: np.random.Generator, cfg: SynthConfig, n_frames: int
) -> Callable[[float], tuple[hm.ManoParams, np.ndarray]]:
    base_theta = np.zeros(48)
    base_theta[:3] = rng.uniform(-0.6, 0.6, 3)
    base_theta[3:] = rng.uniform(-0.3, 0.3, 45)
    beta = rng.normal(0.0, 0.3, 10)
    amp_theta = rng.uniform(0.0, 0.25, 48)
    freq_theta = rng.uniform(0.3, 1.2, 48)
    phase_theta = rng.uniform(0.0, 2 * np.pi, 48)
    amp_trans = rng.uniform(0.3, 1.0, 3) * cfg.motion_amplitude_mm
    freq_trans = rng.uniform(0.3, 1.0, 3)
    phase_trans = rng.uniform(0.0, 2 * np.pi, 3)
    center = np.array([0.0, 0.0, cfg.hand_depth_mm])
    if cfg.static:
        amp_theta = np.zeros(48)
        amp_trans = np.zeros(3)

    def at(time_s: float) -> tuple[hm.ManoParams, np.ndarray]:
        theta = base_theta + amp_theta * np.sin(
            2 * np.pi * freq_theta * time_s + phase_theta
        )
        translation = center + amp_trans * np.sin(
            2 * np.pi * freq_trans * time_s + phase_trans
        )
        return hm.ManoParams(theta, beta), translation

    return at


def _render_hand(
    vertices: np.ndarray, intrinsics: np.ndarray, size: tuple[int, int]
) -> np.ndarray:
    """Crude point-splat render: far-to-near discs shaded by depth over a
    static gradient background. Not photorealistic by design; its job is
    consistent multimodal data with exact labels."""
    w, h = size
    img = 0.15 + 0.08 * np.tile(np.linspace(0.0, 1.0, w), (h, 1))
    z = vertices[:, 2]
    order = np.argsort(-z)  # far first so near splats win
    px = project_points(vertices, intrinsics)
    z_lo, z_hi = float(z.min()), float(z.max())
    shade = 0.45 + 0.45 * (z_hi - z) / max(z_hi - z_lo, 1e-6)
    radius = np.clip(np.round(900.0 / np.maximum(z, 1.0)), 1, 4).astype(np.int64)
    for i in order:
        cx, cy = px[i]
        r = int(radius[i])
        x0, x1 = int(np.floor(cx)) - r, int(np.floor(cx)) + r + 1
        y0, y1 = int(np.floor(cy)) - r, int(np.floor(cy)) + r + 1
        if x1 <= 0 or y1 <= 0 or x0 >= w or y0 >= h:
            continue
        x0c, x1c = max(x0, 0), min(x1, w)
        y0c, y1c = max(y0, 0), min(y1, h)
        img[y0c:y1c, x0c:x1c] = shade[i]
    return np.clip(img, 0.0, 1.0)


def _write_png(path: Path, rgb: np.ndarray) -> None:
    arr = (np.clip(rgb, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def generate_synthetic_dataset(
    out_root: str | Path,
    n_sequences: int,
    seed: int,
    duration_s: float = 2.0,
    fps: float = 15.0,
    resolution: tuple[int, int] = (346, 260),
    sim: SimulatorConfig | None = None,
) -> DatasetIndex:
    """Write n_sequences synthetic sequences plus the shared hand model
    archive and return the loaded index."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    model = hm.make_desk_model(rng)
    hm.save_model(out_root / "hand_model.npz", model)
    for i in range(n_sequences):
        cfg = SynthConfig(
            sequence_id=f"seq{i:03d}",
            duration_s=duration_s,
            fps=fps,
            resolution=resolution,
            sim=sim if sim is not None else SimulatorConfig(),
        )
        make_synthetic_sequence(model, cfg, rng, out_root)
    return load_dataset(out_root)


def dataset_hand_model(index: DatasetIndex) -> hm.HandModelData:
    path = index.root / "hand_model.npz"
    if not path.exists():
        raise DataError(
            f"{index.root}: hand_model.npz not found; ground-truth meshes need it"
        )
    return hm.load_model(path)


# ---------------------------------------------------------------------------
# windows shared by training-sample assembly and inference
# ---------------------------------------------------------------------------


def stacked_frame_at(
    stream: EventStream, t: int, n_events: int, sensor_size: tuple[int, int]
) -> StackedEventFrame:
    """Stacked window ending at t; an empty window yields an all-zero frame
    (no events seen yet is a legal input state)."""
    window = slice_window(stream, t, n_events)
    if len(window) == 0:
        w, h = sensor_size
        return StackedEventFrame(
            data=np.zeros((2, h, w), dtype=np.float32), target_time=t, window_start=t
        )
    return stack_events(window, t, sensor_size)


def interpolated_record(
    records: Sequence[AnnotationRecord], t: int
) -> tuple[hm.ManoParams, np.ndarray]:
    """Pose parameters and camera-frame joints at time t by linear
    interpolation of the bracketing annotations."""
    times = [r.timestamp for r in records]
    theta = interpolate_joints(
        [(r.timestamp, r.mano.theta.reshape(16, 3)) for r in records], t
    ).reshape(48)
    idx = int(np.searchsorted(times, t, side="left"))
    beta = records[min(idx, len(records) - 1)].mano.beta
    joints = interpolate_joints([(r.timestamp, r.joints3d) for r in records], t)
    return hm.ManoParams(theta, beta), joints
