"""Glue between the on-disk dataset and the network: training-sample
assembly, streaming evaluation, and the asynchronous high-rate inference
driver that fuses event bins with the latest RGB frame."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import hand_model as hm
from .augment import apply_crop, crop_hand, crop_intrinsics, sample_event_count
from .dataset import (
    EVAL_EVENT_COUNT,
    DatasetIndex,
    LoadedSequence,
    interpolated_record,
    load_sequence,
    mesh_from_record,
    stacked_frame_at,
)
from .errors import DataError
from .events import StackedEventFrame, bin_stream
from .hand_model import HandMesh, HandModelData
from .metrics import MetricReport, SampleErrors, aggregate_report
from .network import FusionMeshModel
from .training import SampleSequence


def _frame_index_at(frame_times: Sequence[int], t: int) -> int:
    idx = int(np.searchsorted(frame_times, t, side="right")) - 1
    if idx < 0:
        raise DataError(f"no frame at or before t={t}")
    return idx


def _cropped_step_inputs(
    seq: LoadedSequence,
    t: int,
    joints3d: np.ndarray,
    n_events: int,
    crop_size: int,
) -> tuple[np.ndarray, StackedEventFrame, "np.ndarray"]:
    """Crop the latest RGB frame and the stacked event window at t around the
    annotated hand."""
    frame_idx = _frame_index_at(seq.frame_times, t)
    rgb = seq.frames[frame_idx]
    rgb_crop, transform = crop_hand(rgb, joints3d, seq.intrinsics, crop_size)
    stacked = stacked_frame_at(seq.stream, t, n_events, seq.resolution)
    ev_crop = np.clip(apply_crop(stacked.data, transform), 0.0, 1.0).astype(np.float32)
    frame = StackedEventFrame(
        data=ev_crop, target_time=stacked.target_time, window_start=stacked.window_start
    )
    return rgb_crop, frame, crop_intrinsics(seq.intrinsics, transform)


def build_training_samples(
    index: DatasetIndex,
    hand_model: HandModelData,
    n_samples: int,
    s_steps: int,
    crop_size: int,
    rng: np.random.Generator,
    n_events_sampler: Callable[[], int] | None = None,
) -> list[SampleSequence]:
    """Assemble supervised windows: an annotated frame (the image step) plus
    s_steps event windows spanning the following frame interval, all cropped
    with the box computed at the image step."""
    if not index.sequences:
        raise DataError("dataset holds no sequences")
    if n_events_sampler is None:
        n_events_sampler = lambda: sample_event_count(rng)
    cache: dict[str, LoadedSequence] = {}
    samples: list[SampleSequence] = []
    while len(samples) < n_samples:
        entry = index.sequences[int(rng.integers(len(index.sequences)))]
        if entry.sequence_id not in cache:
            cache[entry.sequence_id] = load_sequence(entry)
        seq = cache[entry.sequence_id]
        if len(seq.records) < 3:
            raise DataError(f"{entry.sequence_id}: need >= 3 annotated frames")
        i = int(rng.integers(1, len(seq.records) - 1))
        rec = seq.records[i]
        t_im = rec.timestamp
        period = seq.records[i + 1].timestamp - t_im

        frame_idx = _frame_index_at(seq.frame_times, t_im)
        rgb = seq.frames[frame_idx]
        rgb_crop, transform = crop_hand(rgb, rec.joints3d, seq.intrinsics, crop_size)
        neighbors = []
        for j in (i - 1, i, i + 1):
            jdx = _frame_index_at(seq.frame_times, seq.records[j].timestamp)
            neighbors.append(apply_crop(seq.frames[jdx], transform))
        triplet = np.stack(neighbors)

        def window_at(t: int) -> StackedEventFrame:
            stacked = stacked_frame_at(seq.stream, t, n_events_sampler(), seq.resolution)
            data = np.clip(apply_crop(stacked.data, transform), 0.0, 1.0)
            return StackedEventFrame(
                data=data.astype(np.float32),
                target_time=stacked.target_time,
                window_start=stacked.window_start,
            )

        gt: list[HandMesh] = [mesh_from_record(rec, hand_model).root_relative()]
        event_frames: list[StackedEventFrame] = []
        for s in range(1, s_steps + 1):
            t_s = t_im + int(round(s * period / max(s_steps, 1)))
            params, joints = interpolated_record(seq.records, t_s)
            mesh = hm.mano_forward(params, hand_model)
            mesh = mesh.translated(joints[0] - mesh.joints[0])
            gt.append(mesh.root_relative())
            event_frames.append(window_at(t_s))

        samples.append(
            SampleSequence(
                rgb=rgb_crop.astype(np.float32),
                rgb_time=t_im,
                image_event_frame=window_at(t_im),
                event_frames=event_frames,
                gt=gt,
                intrinsics=crop_intrinsics(seq.intrinsics, transform),
                scene_tag=entry.scene_tag,
                rgb_triplet=triplet.astype(np.float32),
            )
        )
    return samples


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate_dataset(
    index: DatasetIndex,
    hand_model: HandModelData,
    model: FusionMeshModel | None = None,
    oracle: bool = False,
    n_events: int = EVAL_EVENT_COUNT,
) -> MetricReport:
    """Streaming evaluation at every annotated timestamp. With ``oracle`` the
    ground truth is fed back as the prediction (metrics sanity path)."""
    if model is None and not oracle:
        raise ValueError("evaluation needs a model or oracle=True")
    samples: list[SampleErrors] = []
    for entry in index.sequences:
        seq = load_sequence(entry)
        state = None
        history: list = []
        for rec in seq.records:
            gt_mesh = mesh_from_record(rec, hand_model)
            if oracle:
                pred_joints = gt_mesh.joints.copy()
                pred_vertices = gt_mesh.vertices.copy()
            else:
                crop_size = model.cfg.input_size
                rgb_crop, frame, _ = _cropped_step_inputs(
                    seq, rec.timestamp, rec.joints3d, n_events, crop_size
                )
                with torch.no_grad():
                    rgb_t = torch.as_tensor(rgb_crop[None], dtype=torch.float32)
                    ev_t = torch.as_tensor(frame.data[None], dtype=torch.float32)
                    if state is None:
                        state = model.init_state(1)
                    f_im = model.image_backbone(rgb_t)
                    pred, state, history = model.step(f_im, ev_t, state, history)
                pred_joints = pred.joints[0].double().numpy()
                pred_vertices = pred.fine_vertices[0].double().numpy()
            samples.append(
                SampleErrors(
                    joint_pred=pred_joints,
                    joint_gt=gt_mesh.joints,
                    vertex_pred=pred_vertices,
                    vertex_gt=gt_mesh.vertices,
                    scene_tag=entry.scene_tag,
                )
            )
    return aggregate_report(samples)


# ---------------------------------------------------------------------------
# asynchronous high-rate inference
# ---------------------------------------------------------------------------


@dataclass
class MeshTrack:
    timestamps: list[int]
    joints: np.ndarray  # [T, 21, 3] root-relative mm
    vertices: np.ndarray  # [T, 778, 3]
    paired_frame: list[int]

    def __len__(self) -> int:
        return len(self.timestamps)

    def save(self, path: str | Path) -> None:
        np.savez_compressed(
            path,
            timestamps=np.asarray(self.timestamps, dtype=np.int64),
            joints=self.joints,
            vertices=self.vertices,
            paired_frame=np.asarray(self.paired_frame, dtype=np.int64),
        )


def run_async_inference(
    model: FusionMeshModel,
    seq: LoadedSequence,
    bin_rate: float,
    hand_model: HandModelData | None = None,
    n_events: int = EVAL_EVENT_COUNT,
) -> MeshTrack:
    """Split the event stream into bins above the frame rate, fuse each bin
    with the latest RGB frame, and emit one root-relative mesh per bin."""
    frame_rate = 1e6 / float(np.median(np.diff(seq.frame_times)))
    if bin_rate < frame_rate - 1e-6:
        raise ValueError(
            f"bin_rate {bin_rate:.2f} Hz below the frame rate {frame_rate:.2f} Hz"
        )
    bins = bin_stream(seq.stream, bin_rate, seq.frame_times)
    state = None
    history: list = []
    timestamps: list[int] = []
    paired: list[int] = []
    joints_out = []
    vertices_out = []
    record_span = (seq.records[0].timestamp, seq.records[-1].timestamp)
    crop_size = model.cfg.input_size
    for b in bins:
        t = int(np.clip(b.bin_time, record_span[0], record_span[1]))
        _, crop_joints = interpolated_record(seq.records, t)
        rgb = seq.frames[b.paired_frame_index]
        rgb_crop, transform = crop_hand(rgb, crop_joints, seq.intrinsics, crop_size)
        stacked = stacked_frame_at(seq.stream, b.bin_time, n_events, seq.resolution)
        ev_crop = np.clip(apply_crop(stacked.data, transform), 0.0, 1.0)
        with torch.no_grad():
            rgb_t = torch.as_tensor(rgb_crop[None], dtype=torch.float32)
            ev_t = torch.as_tensor(ev_crop[None], dtype=torch.float32)
            if state is None:
                state = model.init_state(1)
            f_im = model.image_backbone(rgb_t)
            pred, state, history = model.step(f_im, ev_t, state, history)
        timestamps.append(b.bin_time)
        paired.append(b.paired_frame_index)
        joints_out.append(pred.joints[0].double().numpy())
        vertices_out.append(pred.fine_vertices[0].double().numpy())
    if not timestamps:
        return MeshTrack([], np.zeros((0, 21, 3)), np.zeros((0, 778, 3)), [])
    return MeshTrack(
        timestamps=timestamps,
        joints=np.stack(joints_out),
        vertices=np.stack(vertices_out),
        paired_frame=paired,
    )
