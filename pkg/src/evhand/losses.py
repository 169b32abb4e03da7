"""Supervision terms: per-vertex L1, per-joint Euclidean distance, and the
weighted composite over one image-step prediction plus S event-step
predictions."""

from __future__ import annotations

from typing import Sequence

import torch

NUM_VERTICES = 778
NUM_JOINTS = 21


def vertex_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Sum of absolute coordinate differences divided by the vertex count."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    n_vertices = pred.shape[-2]
    per_item = (pred - gt).abs().sum(dim=(-1, -2)) / n_vertices
    return per_item.mean()


def joint_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean over joints of per-joint Euclidean distance."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return (pred - gt).norm(dim=-1).mean()


def total_loss(
    image_pred: tuple[torch.Tensor, torch.Tensor],
    event_preds: Sequence[tuple[torch.Tensor, torch.Tensor]],
    gts: Sequence[tuple[torch.Tensor, torch.Tensor]],
    lambda_v: float,
    lambda_j: float,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Composite loss over (vertices, joints) prediction pairs.

    ``gts[0]`` supervises the image step, ``gts[1:]`` the event steps. The
    returned breakdown holds every weighted term and sums exactly to the
    scalar.
    """
    if len(gts) != len(event_preds) + 1:
        raise ValueError(
            f"expected {len(event_preds) + 1} ground truths, got {len(gts)}"
        )
    breakdown: dict[str, float] = {}
    v_im = lambda_v * vertex_loss(image_pred[0], gts[0][0])
    j_im = lambda_j * joint_loss(image_pred[1], gts[0][1])
    breakdown["vertex_im"] = float(v_im)
    breakdown["joint_im"] = float(j_im)
    total = v_im + j_im
    for s, (pred, gt) in enumerate(zip(event_preds, gts[1:]), start=1):
        v_ev = lambda_v * vertex_loss(pred[0], gt[0])
        j_ev = lambda_j * joint_loss(pred[1], gt[1])
        breakdown[f"vertex_ev{s}"] = float(v_ev)
        breakdown[f"joint_ev{s}"] = float(j_ev)
        total = total + v_ev + j_ev
    return total, breakdown
