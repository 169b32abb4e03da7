"""Training loop: cosine-annealed Adam over degraded, geometrically augmented
sample sequences, with a per-term loss history and periodic checkpoints.

A SampleSequence packs one supervised window: a cropped RGB frame with the
event window ending at its timestamp (the image step) plus S later event
windows (the event steps), each with a root-relative ground-truth mesh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .augment import (
    GeometricParams,
    rotation_about_camera_axis,
    similarity_matrix,
    warp_image,
)
from .degrade import (
    DegradationConfig,
    Interpolator,
    apply_degrader,
    degrade_background_overflow,
)
from .errors import NumericalError
from .events import StackedEventFrame, add_temporal_noise
from .hand_model import HandMesh, HandModelData
from .losses import total_loss
from .network import FusionMeshModel, save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    weight_decay: float = 0.0
    batch_size: int = 32
    iterations: int = 50000
    lambda_v: float = 100.0
    lambda_j: float = 2000.0
    n_events_range: tuple[int, int] = (5000, 9000)
    seed: int = 0
    crop_size: int = 192
    checkpoint_every: int = 1000
    coarse_supervision: bool = False

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.lambda_v <= 0 or self.lambda_j <= 0:
            raise ValueError("loss weights must be positive")
        if self.n_events_range[0] > self.n_events_range[1]:
            raise ValueError("n_events_range must be (lo, hi)")


def desk_train_config(**overrides) -> TrainConfig:
    """CPU-scale schedule paired with the reduced-width network."""
    base = TrainConfig(
        lr=1e-3, batch_size=4, iterations=2000, crop_size=96, checkpoint_every=500
    )
    return replace(base, **overrides)


@dataclass
class SampleSequence:
    """One training window. ``gt`` holds S+1 root-relative meshes: the image
    step first, then one per event step; timestamps are non-decreasing."""

    rgb: np.ndarray  # [3, H, W] in [0, 1]
    rgb_time: int
    image_event_frame: StackedEventFrame
    event_frames: list[StackedEventFrame]
    gt: list[HandMesh]
    intrinsics: np.ndarray  # 3x3 of the cropped view
    scene_tag: str = "normal"
    rgb_triplet: np.ndarray | None = None  # [3, 3, H, W] neighbors for blur

    def __post_init__(self) -> None:
        if len(self.gt) != len(self.event_frames) + 1:
            raise ValueError("need one ground truth per step (image step first)")
        times = [self.rgb_time, self.image_event_frame.target_time]
        times += [f.target_time for f in self.event_frames]
        if any(b < a for a, b in zip(times[1:], times[2:])):
            raise ValueError("event step timestamps must be non-decreasing")

    @property
    def num_steps(self) -> int:
        return len(self.gt)


def cosine_lr(base_lr: float, iteration: int, iterations: int) -> float:
    """Cosine annealing from base_lr to 0 across the run."""
    if iterations <= 1:
        return base_lr
    progress = iteration / (iterations - 1)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


def degrade_sample(
    sample: SampleSequence,
    cfg: DegradationConfig,
    rng: np.random.Generator,
    interp: Interpolator | None = None,
) -> tuple[SampleSequence, list[dict]]:
    """Degrade the pair (rgb, image-step event frame); whatever event-side
    degradations fired are repeated on the later windows with the same
    parameters but fresh per-pixel randomness."""
    (image, frame0), record = apply_degrader(
        (sample.rgb, sample.image_event_frame),
        cfg,
        rng,
        image_triplet=None if sample.rgb_triplet is None else list(sample.rgb_triplet),
        interp=interp,
    )
    frames = list(sample.event_frames)
    for op in record:
        if op["op"] == "background_overflow":
            frames = [
                degrade_background_overflow(f, op["pixel_p"], rng) for f in frames
            ]
        elif op["op"] == "gaussian_noise":
            frames = [add_temporal_noise(f, op["sigma"], rng) for f in frames]
    degraded = replace(
        sample, rgb=image, image_event_frame=frame0, event_frames=frames
    )
    return degraded, record


def augment_sample(
    sample: SampleSequence, params: GeometricParams
) -> SampleSequence:
    """In-plane similarity on both modalities; 3-D ground truth rotates about
    the camera axis by the same angle."""
    rot3 = rotation_about_camera_axis(params.rotation)
    gt = [
        HandMesh(mesh.vertices @ rot3.T, mesh.joints @ rot3.T) for mesh in sample.gt
    ]
    h, w = sample.rgb.shape[-2:]
    matrix = similarity_matrix(params, w, h)

    def warp_frame(frame: StackedEventFrame) -> StackedEventFrame:
        return StackedEventFrame(
            data=np.clip(warp_image(frame.data, matrix), 0.0, 1.0).astype(np.float32),
            target_time=frame.target_time,
            window_start=frame.window_start,
        )

    return replace(
        sample,
        rgb=np.clip(warp_image(sample.rgb, matrix), 0.0, 1.0),
        image_event_frame=warp_frame(sample.image_event_frame),
        event_frames=[warp_frame(f) for f in sample.event_frames],
        gt=gt,
    )


def collate_batch(
    samples: Sequence[SampleSequence], dtype: torch.dtype = torch.float32
) -> tuple[torch.Tensor, list[torch.Tensor], list[tuple[torch.Tensor, torch.Tensor]]]:
    """Stack a batch into (rgb, per-step event frames, per-step gt tensors)."""
    steps = samples[0].num_steps
    if any(s.num_steps != steps for s in samples):
        raise ValueError("batch samples must have equal step counts")
    rgb = torch.as_tensor(np.stack([s.rgb for s in samples]), dtype=dtype)
    frames = [
        torch.as_tensor(
            np.stack(
                [
                    (s.image_event_frame if step == 0 else s.event_frames[step - 1]).data
                    for s in samples
                ]
            ),
            dtype=dtype,
        )
        for step in range(steps)
    ]
    gts = [
        (
            torch.as_tensor(np.stack([s.gt[step].vertices for s in samples]), dtype=dtype),
            torch.as_tensor(np.stack([s.gt[step].joints for s in samples]), dtype=dtype),
        )
        for step in range(steps)
    ]
    return rgb, frames, gts


@dataclass
class TrainResult:
    checkpoint_path: Path | None
    history: list[dict]
    degradation_records: list[dict] = field(default_factory=list)


def train(
    cfg: TrainConfig,
    dataset: Sequence[SampleSequence],
    model: FusionMeshModel,
    degradation: DegradationConfig | None = None,
    hand_model: HandModelData | None = None,
    out_dir: str | Path | None = None,
    interp: Interpolator | None = None,
    log_degradations: bool = False,
    augment: bool = True,
) -> TrainResult:
    """Desk-scale training loop; deterministic for a fixed seed on a single
    device. Aborts with a diagnostic batch dump on a non-finite loss."""
    if len(dataset) == 0:
        raise ValueError("dataset must be non-empty")
    if degradation is None:
        degradation = DegradationConfig()
    if cfg.coarse_supervision and hand_model is None:
        raise ValueError("coarse supervision requires the hand model data")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=cfg.lr,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        weight_decay=cfg.weight_decay,
    )
    history: list[dict] = []
    degradation_records: list[dict] = []
    model.train()

    for iteration in range(cfg.iterations):
        lr = cosine_lr(cfg.lr, iteration, cfg.iterations)
        for group in optimizer.param_groups:
            group["lr"] = lr

        batch = []
        for _ in range(cfg.batch_size):
            sample = dataset[int(rng.integers(len(dataset)))]
            sample, record = degrade_sample(sample, degradation, rng, interp=interp)
            if log_degradations:
                degradation_records.append(
                    {"iteration": iteration, "ops": record}
                )
            if augment:
                sample = augment_sample(sample, GeometricParams.sample(rng))
            batch.append(sample)

        rgb, frames, gts = collate_batch(batch)
        preds, _, _ = model.forward_sequence(rgb, frames)
        image_pred = (preds[0].fine_vertices, preds[0].joints)
        event_preds = [(p.fine_vertices, p.joints) for p in preds[1:]]
        loss, breakdown = total_loss(
            image_pred, event_preds, gts, cfg.lambda_v, cfg.lambda_j
        )
        if cfg.coarse_supervision:
            coarse_idx = torch.as_tensor(hand_model.coarse_index, dtype=torch.long)
            for s, pred in enumerate(preds):
                coarse_gt = gts[s][0][:, coarse_idx]
                term = cfg.lambda_v * (pred.coarse_vertices - coarse_gt).abs().sum(
                    dim=(-1, -2)
                ).mean() / coarse_idx.numel()
                breakdown[f"vertex_coarse{s}"] = float(term)
                loss = loss + term

        if not torch.isfinite(loss):
            dump = (out_path or Path.cwd()) / "nan_batch.npz"
            np.savez(
                dump,
                rgb=rgb.detach().numpy(),
                frames=np.stack([f.detach().numpy() for f in frames]),
                iteration=np.int64(iteration),
            )
            raise NumericalError(
                f"non-finite loss at iteration {iteration}; offending batch "
                f"dumped to {dump}"
            )

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        entry = {"iteration": iteration, "lr": lr, "total": float(loss)}
        entry.update(breakdown)
        history.append(entry)

        if out_path is not None and (iteration + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out_path / f"checkpoint_{iteration + 1:06d}.npz", model)

    checkpoint_path = None
    if out_path is not None:
        checkpoint_path = out_path / "checkpoint_final.npz"
        save_checkpoint(checkpoint_path, model)
        write_loss_history(out_path / "loss_history.csv", history)
    model.eval()
    return TrainResult(
        checkpoint_path=checkpoint_path,
        history=history,
        degradation_records=degradation_records,
    )


def write_loss_history(path: str | Path, history: Sequence[dict]) -> None:
    """CSV with iteration, total, and one column per loss term."""
    if not history:
        return
    keys = ["iteration", "total", "lr"]
    extra = sorted({k for entry in history for k in entry} - set(keys))
    columns = keys + extra
    with open(path, "w") as f:
        f.write(",".join(columns) + "\n")
        for entry in history:
            f.write(",".join(str(entry.get(k, "")) for k in columns) + "\n")
