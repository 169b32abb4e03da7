"""Parametric hand model: differentiable pose/shape to 778-vertex mesh,
21-joint regression, and the coarse 195-vertex correspondence used for
supervision and decoding.

The model data layout mirrors the released parametric hand assets (template,
blend shapes, skinning weights, joint regressor). When licensed assets are
unavailable, :func:`make_desk_model` builds a structurally valid random model
so the full pipeline and test suite run self-contained. Units are millimeters.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

NUM_VERTICES = 778
NUM_COARSE = 195
NUM_JOINTS = 21
NUM_SKELETON_JOINTS = 16
NUM_SHAPE = 10
NUM_POSE_BASIS = (NUM_SKELETON_JOINTS - 1) * 9

# parent per skeleton joint: wrist root, then three-joint chains per finger
DEFAULT_KINEMATIC_TREE = np.array(
    [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14], dtype=np.int64
)


@dataclass(frozen=True)
class ManoParams:
    """Pose (16 joints x axis-angle, first 3 = global rotation) and shape."""

    theta: np.ndarray  # (48,)
    beta: np.ndarray  # (10,)

    def __post_init__(self) -> None:
        theta = np.asarray(self.theta, dtype=np.float64)
        beta = np.asarray(self.beta, dtype=np.float64)
        if theta.shape != (NUM_SKELETON_JOINTS * 3,):
            raise ValueError(f"theta must have shape (48,), got {theta.shape}")
        if beta.shape != (NUM_SHAPE,):
            raise ValueError(f"beta must have shape (10,), got {beta.shape}")
        if not (np.isfinite(theta).all() and np.isfinite(beta).all()):
            raise ValueError("hand parameters must be finite")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def rest(cls) -> "ManoParams":
        return cls(np.zeros(NUM_SKELETON_JOINTS * 3), np.zeros(NUM_SHAPE))


@dataclass(frozen=True)
class HandMesh:
    """Realized hand state: 778 vertices and 21 regressed joints, mm."""

    vertices: np.ndarray  # (778, 3)
    joints: np.ndarray  # (21, 3)

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=np.float64)
        j = np.asarray(self.joints, dtype=np.float64)
        if v.shape != (NUM_VERTICES, 3):
            raise ValueError(f"vertices must be (778, 3), got {v.shape}")
        if j.shape != (NUM_JOINTS, 3):
            raise ValueError(f"joints must be (21, 3), got {j.shape}")
        if not (np.isfinite(v).all() and np.isfinite(j).all()):
            raise ValueError("mesh values must be finite")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "joints", j)

    def translated(self, offset: np.ndarray) -> "HandMesh":
        offset = np.asarray(offset, dtype=np.float64).reshape(1, 3)
        return HandMesh(self.vertices + offset, self.joints + offset)

    def root_relative(self) -> "HandMesh":
        return self.translated(-self.joints[0])


@dataclass(frozen=True)
class HandModelData:
    """Dense model arrays. Invariants are validated on construction."""

    template: np.ndarray  # (778, 3) mm
    shape_dirs: np.ndarray  # (778, 3, 10)
    pose_dirs: np.ndarray  # (778, 3, 135)
    skin_weights: np.ndarray  # (778, 16), rows sum to 1
    kinematic_tree: np.ndarray  # (16,) parent indices, -1 for root
    j_reg: np.ndarray  # (21, 778); rows 0..15 are the skeleton joints
    coarse_index: np.ndarray  # (195,) unique vertex ids
    upsample_matrix: np.ndarray  # (778, 195), rows sum to 1
    upsample_residual: float  # max template reconstruction error, mm

    def __post_init__(self) -> None:
        checks = {
            "template": (self.template, (NUM_VERTICES, 3)),
            "shape_dirs": (self.shape_dirs, (NUM_VERTICES, 3, NUM_SHAPE)),
            "pose_dirs": (self.pose_dirs, (NUM_VERTICES, 3, NUM_POSE_BASIS)),
            "skin_weights": (self.skin_weights, (NUM_VERTICES, NUM_SKELETON_JOINTS)),
            "kinematic_tree": (self.kinematic_tree, (NUM_SKELETON_JOINTS,)),
            "j_reg": (self.j_reg, (NUM_JOINTS, NUM_VERTICES)),
            "coarse_index": (self.coarse_index, (NUM_COARSE,)),
            "upsample_matrix": (self.upsample_matrix, (NUM_VERTICES, NUM_COARSE)),
        }
        for name, (arr, shape) in checks.items():
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
        if np.any(self.skin_weights < 0):
            raise ValueError("skin_weights must be nonnegative")
        if np.max(np.abs(self.skin_weights.sum(axis=1) - 1.0)) > 1e-6:
            raise ValueError("skin_weights rows must sum to 1")
        if np.max(np.abs(self.upsample_matrix.sum(axis=1) - 1.0)) > 1e-6:
            raise ValueError("upsample_matrix rows must sum to 1")
        ci = self.coarse_index
        if len(np.unique(ci)) != NUM_COARSE or ci.min() < 0 or ci.max() >= NUM_VERTICES:
            raise ValueError("coarse_index entries must be unique and < 778")
        if self.kinematic_tree[0] != -1:
            raise ValueError("kinematic tree root must have parent -1")
        if np.any(self.kinematic_tree[1:] >= np.arange(1, NUM_SKELETON_JOINTS)):
            raise ValueError("kinematic tree parents must precede children")


def save_model(path: str | Path, model: HandModelData) -> None:
    np.savez_compressed(
        path,
        template=model.template,
        shape_dirs=model.shape_dirs,
        pose_dirs=model.pose_dirs,
        skin_weights=model.skin_weights,
        kinematic_tree=model.kinematic_tree,
        j_reg=model.j_reg,
        coarse_index=model.coarse_index,
        upsample_matrix=model.upsample_matrix,
        upsample_residual=np.float64(model.upsample_residual),
    )


def load_model(path: str | Path) -> HandModelData:
    """Load a model archive; all HandModelData invariants are validated."""
    with np.load(path) as data:
        try:
            return HandModelData(
                template=data["template"],
                shape_dirs=data["shape_dirs"],
                pose_dirs=data["pose_dirs"],
                skin_weights=data["skin_weights"],
                kinematic_tree=data["kinematic_tree"],
                j_reg=data["j_reg"],
                coarse_index=data["coarse_index"],
                upsample_matrix=data["upsample_matrix"],
                upsample_residual=float(data["upsample_residual"]),
            )
        except KeyError as e:
            raise ValueError(f"{path}: missing model array {e}") from None


# ---------------------------------------------------------------------------
# forward kinematics + linear blend skinning
# ---------------------------------------------------------------------------


def rodrigues(axis_angle: torch.Tensor) -> torch.Tensor:
    """Axis-angle (..., 3) to rotation matrices (..., 3, 3), stable at zero."""
    angle = axis_angle.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    axis = axis_angle / angle
    angle = angle.unsqueeze(-1)
    cos = torch.cos(angle)
    sin = torch.sin(angle)
    ax, ay, az = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = torch.zeros_like(ax)
    skew = torch.stack(
        [zero, -az, ay, az, zero, -ax, -ay, ax, zero], dim=-1
    ).reshape(axis.shape[:-1] + (3, 3))
    eye = torch.eye(3, dtype=axis_angle.dtype, device=axis_angle.device)
    eye = eye.expand(axis.shape[:-1] + (3, 3))
    return eye * cos + sin * skew + (1 - cos) * axis.unsqueeze(-1) * axis.unsqueeze(-2)


def mano_forward_torch(
    theta: torch.Tensor, beta: torch.Tensor, model: HandModelData
) -> tuple[torch.Tensor, torch.Tensor]:
    """Differentiable vertices (778, 3) and joints (21, 3) from pose/shape.

    Shape blend offsets, pose blend offsets (zero at rest pose), forward
    kinematics over the tree, then linear blend skinning; joints are
    regressed linearly from the posed vertices.
    """
    dtype, device = theta.dtype, theta.device
    template = torch.as_tensor(model.template, dtype=dtype, device=device)
    shape_dirs = torch.as_tensor(model.shape_dirs, dtype=dtype, device=device)
    pose_dirs = torch.as_tensor(model.pose_dirs, dtype=dtype, device=device)
    skin_w = torch.as_tensor(model.skin_weights, dtype=dtype, device=device)
    j_reg = torch.as_tensor(model.j_reg, dtype=dtype, device=device)
    parents = model.kinematic_tree

    v_shaped = template + torch.einsum("vcs,s->vc", shape_dirs, beta)
    rest_joints = j_reg[:NUM_SKELETON_JOINTS] @ v_shaped  # (16, 3)

    rots = rodrigues(theta.reshape(NUM_SKELETON_JOINTS, 3))  # (16, 3, 3)
    eye = torch.eye(3, dtype=dtype, device=device)
    pose_feature = (rots[1:] - eye).reshape(-1)  # (135,)
    v_posed = v_shaped + torch.einsum("vcp,p->vc", pose_dirs, pose_feature)

    # compose world transforms down the tree
    world_rot = [rots[0]]
    world_pos = [rest_joints[0]]
    for j in range(1, NUM_SKELETON_JOINTS):
        parent = int(parents[j])
        offset = rest_joints[j] - rest_joints[parent]
        world_rot.append(world_rot[parent] @ rots[j])
        world_pos.append(world_pos[parent] + world_rot[parent] @ offset)
    rot_stack = torch.stack(world_rot)  # (16, 3, 3)
    pos_stack = torch.stack(world_pos)  # (16, 3)

    # skinning transforms relative to the rest pose
    trans = pos_stack - torch.einsum("jab,jb->ja", rot_stack, rest_joints)
    per_vertex_rot = torch.einsum("vj,jab->vab", skin_w, rot_stack)
    per_vertex_trans = skin_w @ trans
    vertices = torch.einsum("vab,vb->va", per_vertex_rot, v_posed) + per_vertex_trans
    joints = j_reg @ vertices
    return vertices, joints


def mano_forward(params: ManoParams, model: HandModelData) -> HandMesh:
    theta = torch.as_tensor(params.theta, dtype=torch.float64)
    beta = torch.as_tensor(params.beta, dtype=torch.float64)
    vertices, joints = mano_forward_torch(theta, beta, model)
    return HandMesh(vertices.numpy(), joints.numpy())


def to_coarse(mesh: HandMesh, model: HandModelData) -> np.ndarray:
    """Gather the coarse 195-vertex mesh."""
    return mesh.vertices[model.coarse_index]


# ---------------------------------------------------------------------------
# self-contained stand-in model
# ---------------------------------------------------------------------------


def make_desk_model(rng: np.random.Generator) -> HandModelData:
    """Generate a structurally valid random hand model.

    Template points sample a hand-scale blob (mm); the coarse mesh comes from
    farthest-point sampling and upsampling from convex 3-nearest-neighbor
    weights. Deterministic for a fixed generator state.
    """
    template = _make_template(rng)
    shape_dirs = rng.normal(0.0, 1.0, size=(NUM_VERTICES, 3, NUM_SHAPE))
    pose_dirs = rng.normal(0.0, 0.05, size=(NUM_VERTICES, 3, NUM_POSE_BASIS))

    rest_joints = _spread_joints(template)
    j_reg = _regressor_from_anchors(template, rest_joints, rng)
    skin_weights = _skin_weights_from_joints(template, rest_joints)

    coarse_index = farthest_point_sample(template, NUM_COARSE)
    upsample = _knn_upsample_matrix(template, coarse_index, k=3)
    residual = float(
        np.abs(upsample @ template[coarse_index] - template).max()
    )
    return HandModelData(
        template=template,
        shape_dirs=shape_dirs,
        pose_dirs=pose_dirs,
        skin_weights=skin_weights,
        kinematic_tree=DEFAULT_KINEMATIC_TREE.copy(),
        j_reg=j_reg,
        coarse_index=coarse_index,
        upsample_matrix=upsample,
        upsample_residual=residual,
    )


def _make_template(rng: np.random.Generator) -> np.ndarray:
    # palm blob plus five finger-like prongs, roughly 160 mm across
    n_palm = NUM_VERTICES - 5 * 90
    palm = rng.normal(0.0, 1.0, size=(n_palm, 3))
    palm /= np.linalg.norm(palm, axis=1, keepdims=True)
    palm *= np.array([35.0, 40.0, 12.0])
    fingers = []
    for i in range(5):
        base = np.array([-30.0 + 15.0 * i, 40.0, 0.0])
        along = np.linspace(0.0, 70.0 - 6.0 * abs(i - 2), 90)
        pts = base + np.stack(
            [
                rng.normal(0.0, 4.0, 90),
                along,
                rng.normal(0.0, 4.0, 90),
            ],
            axis=1,
        )
        fingers.append(pts)
    return np.concatenate([palm] + fingers, axis=0)


def _spread_joints(template: np.ndarray) -> np.ndarray:
    """Rest positions for the 16 skeleton joints: wrist plus 3 per finger."""
    joints = np.zeros((NUM_SKELETON_JOINTS, 3))
    joints[0] = np.array([0.0, -30.0, 0.0])
    for finger in range(5):
        base = np.array([-30.0 + 15.0 * finger, 40.0, 0.0])
        length = 70.0 - 6.0 * abs(finger - 2)
        for seg in range(3):
            joints[1 + finger * 3 + seg] = base + np.array(
                [0.0, length * (seg + 1) / 3.0, 0.0]
            )
    return joints


def _regressor_from_anchors(
    template: np.ndarray, rest_joints: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """21 rows of sparse convex combinations: skeleton joints first, then five
    tip rows regressed from the outermost finger vertices."""
    targets = np.concatenate(
        [rest_joints, rest_joints[[3, 6, 9, 12, 15]] + np.array([0.0, 12.0, 0.0])]
    )
    j_reg = np.zeros((NUM_JOINTS, NUM_VERTICES))
    for j, target in enumerate(targets):
        d = np.linalg.norm(template - target, axis=1)
        near = np.argsort(d)[:6]
        w = 1.0 / (d[near] + 1.0)
        w *= 1.0 + 0.05 * rng.random(len(near))
        j_reg[j, near] = w / w.sum()
    return j_reg


def _skin_weights_from_joints(
    template: np.ndarray, rest_joints: np.ndarray
) -> np.ndarray:
    d = np.linalg.norm(
        template[:, None, :] - rest_joints[None, :, :], axis=2
    )  # (778, 16)
    w = np.exp(-d / 15.0)
    # keep the 4 strongest influences per vertex, standard LBS sparsity
    cut = np.sort(w, axis=1)[:, -4][:, None]
    w = np.where(w >= cut, w, 0.0)
    return w / w.sum(axis=1, keepdims=True)


def farthest_point_sample(points: np.ndarray, count: int) -> np.ndarray:
    """Deterministic farthest-point sampling seeded at the centroid-farthest
    point; returns sorted unique indices."""
    chosen = [int(np.argmax(np.linalg.norm(points - points.mean(axis=0), axis=1)))]
    dist = np.linalg.norm(points - points[chosen[0]], axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return np.sort(np.asarray(chosen, dtype=np.int64))


def _knn_upsample_matrix(
    template: np.ndarray, coarse_index: np.ndarray, k: int
) -> np.ndarray:
    coarse = template[coarse_index]
    up = np.zeros((NUM_VERTICES, len(coarse_index)))
    for v in range(NUM_VERTICES):
        d = np.linalg.norm(coarse - template[v], axis=1)
        near = np.argsort(d)[:k]
        if d[near[0]] < 1e-9:
            up[v, near[0]] = 1.0
            continue
        w = 1.0 / d[near]
        up[v, near] = w / w.sum()
    return up
