"""Evaluation metrics: root-aligned MPJPE/MPVPE, Procrustes-aligned PA-MPJPE,
PCK curve with AUC, and parameter counting.

Root joint is the wrist, index 0 of the 21-joint layout. All distances in mm.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

ROOT_JOINT = 0
PCK_THRESHOLDS = np.linspace(0.0, 100.0, 101)


class SimilarityTransform(NamedTuple):
    scale: float
    rotation: np.ndarray  # (3, 3), proper
    translation: np.ndarray  # (3,)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


def mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Root-aligned mean per-joint Euclidean distance (mm)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    pred = pred - pred[ROOT_JOINT]
    gt = gt - gt[ROOT_JOINT]
    return float(np.linalg.norm(pred - gt, axis=1).mean())


def mpvpe(
    pred: np.ndarray,
    gt: np.ndarray,
    root: tuple[np.ndarray, np.ndarray],
) -> float:
    """Root-aligned mean per-vertex error; roots come from the corresponding
    joint sets."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    pred_root, gt_root = root
    pred = pred - np.asarray(pred_root, dtype=np.float64)
    gt = gt - np.asarray(gt_root, dtype=np.float64)
    return float(np.linalg.norm(pred - gt, axis=1).mean())


def procrustes_align(
    pred: np.ndarray, gt: np.ndarray
) -> tuple[np.ndarray, SimilarityTransform]:
    """Closed-form similarity transform (scale, proper rotation, translation)
    minimizing the summed squared distance from transformed pred to gt."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError(f"expected matching (N, 3) arrays, got {pred.shape}")
    if pred.shape[0] < 3:
        raise ValueError("need at least 3 points")

    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    p0 = pred - mu_p
    g0 = gt - mu_g
    var_p = (p0**2).sum()
    if var_p < 1e-12 or np.linalg.matrix_rank(g0) < 2:
        raise ValueError("degenerate point configuration")

    cov = g0.T @ p0
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    flip = np.diag([1.0, 1.0, d])
    rotation = u @ flip @ vt
    scale = float((s * np.diag(flip)).sum() / var_p)
    translation = mu_g - scale * rotation @ mu_p
    transform = SimilarityTransform(scale, rotation, translation)
    return transform.apply(pred), transform


def pa_mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    aligned, _ = procrustes_align(pred, gt)
    return float(np.linalg.norm(aligned - np.asarray(gt, float), axis=1).mean())


def pck_auc(
    errors: np.ndarray, thresholds: np.ndarray = PCK_THRESHOLDS
) -> tuple[np.ndarray, float]:
    """PCK curve (threshold, fraction of joints with error <= threshold) and
    the normalized trapezoidal area over the threshold span."""
    errors = np.asarray(errors, dtype=np.float64).ravel()
    if errors.size == 0:
        raise ValueError("empty error set")
    if np.any(errors < 0):
        raise ValueError("errors must be >= 0")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    fractions = (errors[None, :] <= thresholds[:, None]).mean(axis=1)
    curve = np.stack([thresholds, fractions], axis=1)
    auc = float(np.trapezoid(fractions, thresholds) / (thresholds[-1] - thresholds[0]))
    return curve, auc


def count_params(model) -> int:
    """Total learnable scalar parameters of a torch module."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


# ---------------------------------------------------------------------------
# report aggregation
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    mpjpe: float
    mpvpe: float
    pa_mpjpe: float
    auc: float
    pck_curve: list[tuple[float, float]]
    per_scene: dict[str, "MetricReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "mpjpe": self.mpjpe,
            "mpvpe": self.mpvpe,
            "pa_mpjpe": self.pa_mpjpe,
            "auc": self.auc,
            "pck_curve": [[float(t), float(f)] for t, f in self.pck_curve],
        }
        if self.per_scene:
            out["per_scene"] = {
                tag: rep.to_dict() for tag, rep in sorted(self.per_scene.items())
            }
        return out

    def to_json(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def pck_to_csv(self, path: str | Path) -> None:
        with open(path, "w") as f:
            f.write("threshold,fraction\n")
            for t, frac in self.pck_curve:
                f.write(f"{t},{frac}\n")


class SampleErrors(NamedTuple):
    """Per-sample inputs to report aggregation."""

    joint_pred: np.ndarray  # (21, 3)
    joint_gt: np.ndarray
    vertex_pred: np.ndarray  # (778, 3)
    vertex_gt: np.ndarray
    scene_tag: str


def aggregate_report(samples: Sequence[SampleErrors]) -> MetricReport:
    """Aggregate per-sample meshes into a MetricReport with a per-scene
    breakdown. Averages are over samples; PCK pools per-joint errors."""
    if not samples:
        raise ValueError("no samples to aggregate")
    report = _aggregate(samples)
    tags = sorted({s.scene_tag for s in samples})
    for tag in tags:
        subset = [s for s in samples if s.scene_tag == tag]
        report.per_scene[tag] = _aggregate(subset)
    return report


def _aggregate(samples: Sequence[SampleErrors]) -> MetricReport:
    mpjpes, mpvpes, pas = [], [], []
    joint_errors = []
    for s in samples:
        mpjpes.append(mpjpe(s.joint_pred, s.joint_gt))
        mpvpes.append(
            mpvpe(
                s.vertex_pred,
                s.vertex_gt,
                (s.joint_pred[ROOT_JOINT], s.joint_gt[ROOT_JOINT]),
            )
        )
        pas.append(pa_mpjpe(s.joint_pred, s.joint_gt))
        pred = s.joint_pred - s.joint_pred[ROOT_JOINT]
        gt = s.joint_gt - s.joint_gt[ROOT_JOINT]
        joint_errors.append(np.linalg.norm(pred - gt, axis=1))
    curve, auc = pck_auc(np.concatenate(joint_errors))
    return MetricReport(
        mpjpe=float(np.mean(mpjpes)),
        mpvpe=float(np.mean(mpvpes)),
        pa_mpjpe=float(np.mean(pas)),
        auc=auc,
        pck_curve=[(float(t), float(f)) for t, f in curve],
    )
