"""Event/RGB fusion network for hand mesh regression.

Pipeline per step: shallow residual backbones (separate image and event
weights) produce 24x24 feature maps; a convolutional LSTM estimates
deformable sampling offsets from the concatenated pair; deformable
convolution aligns the event features onto the image features; an
attention-gated convex combination fuses the two and is downsampled to 8x8;
a transformer encoder maps the fused grid to latent hand tokens; causal
temporal attention mixes each token across the last S+1 steps; a transformer
decoder with learnable joint and vertex tokens regresses 21 joints and a
195-vertex coarse mesh, upsampled to the 778-vertex fine mesh.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    token_dim: int = 256
    num_blocks: int = 3
    num_heads: int = 8
    temporal_window: int = 4  # S; attention sees up to S+1 steps
    input_size: int = 192
    feature_grid: int = 24
    fused_grid: int = 8
    num_joint_tokens: int = 21
    num_coarse_vertex_tokens: int = 195
    num_fine_vertices: int = 778
    backbone_width: int = 64
    backbone_blocks: tuple[int, int] = (3, 4)
    recurrent_channels: int = 256
    deform_taps: int = 9
    mlp_ratio: int = 4
    coord_scale: float = 100.0  # head output units -> mm

    def __post_init__(self) -> None:
        if self.token_dim % self.num_heads:
            raise ValueError("token_dim must be divisible by num_heads")
        if self.temporal_window < 0:
            raise ValueError("temporal_window must be >= 0")
        if self.input_size % 8:
            raise ValueError("input_size must be divisible by 8")
        if self.feature_grid != self.input_size // 8:
            raise ValueError("feature_grid must equal input_size // 8")
        if (self.feature_grid - 3) % 3 or self.fused_grid != (self.feature_grid - 3) // 3 + 1:
            raise ValueError("fused_grid must match the stride-3 downsampling of feature_grid")
        if self.deform_taps != 9:
            raise ValueError("deformable kernel is fixed at 3x3 (9 taps)")

    @property
    def num_tokens(self) -> int:
        return self.fused_grid * self.fused_grid

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, payload: str) -> "NetworkConfig":
        raw = json.loads(payload)
        raw["backbone_blocks"] = tuple(raw["backbone_blocks"])
        return cls(**raw)


def desk_config(temporal_window: int = 2) -> NetworkConfig:
    """Reduced-width configuration for CPU-scale runs and tests."""
    return NetworkConfig(
        token_dim=32,
        num_blocks=2,
        num_heads=4,
        temporal_window=temporal_window,
        input_size=96,
        feature_grid=12,
        fused_grid=4,
        backbone_width=16,
        backbone_blocks=(1, 1),
        recurrent_channels=32,
    )


def micro_config(temporal_window: int = 2) -> NetworkConfig:
    """Minimal configuration for fuzz and gradient tests."""
    return NetworkConfig(
        token_dim=16,
        num_blocks=1,
        num_heads=2,
        temporal_window=temporal_window,
        input_size=48,
        feature_grid=6,
        fused_grid=2,
        backbone_width=8,
        backbone_blocks=(1, 1),
        recurrent_channels=16,
    )


@dataclass
class RecurrentState:
    """Hidden and cell maps of the convolutional recurrent unit. Reset to
    zeros at each sequence start."""

    hidden: torch.Tensor
    cell: torch.Tensor


class StepPrediction(NamedTuple):
    joints: torch.Tensor  # [B, 21, 3]
    coarse_vertices: torch.Tensor  # [B, 195, 3]
    fine_vertices: torch.Tensor  # [B, 778, 3]


def _norm(channels: int) -> nn.GroupNorm:
    for groups in (8, 4, 2, 1):
        if channels % groups == 0:
            return nn.GroupNorm(groups, channels)
    return nn.GroupNorm(1, channels)


class BasicBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.norm1 = _norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = _norm(out_ch)
        self.act = nn.GELU()
        if stride != 1 or in_ch != out_ch:
            self.skip: nn.Module = nn.Conv2d(in_ch, out_ch, 1, stride=stride)
        else:
            self.skip = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.act(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return self.act(y + self.skip(x))


class FeatureBackbone(nn.Module):
    """Stride-8 residual feature extractor with a 1x1 projection to the token
    dimension. Smooth activations keep finite-difference checks meaningful."""

    def __init__(self, in_channels: int, cfg: NetworkConfig):
        super().__init__()
        w = cfg.backbone_width
        n1, n2 = cfg.backbone_blocks
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, w, 7, stride=2, padding=3),
            _norm(w),
            nn.GELU(),
            nn.Conv2d(w, w, 3, stride=2, padding=1),
            _norm(w),
            nn.GELU(),
        )
        self.stage1 = nn.Sequential(*[BasicBlock(w, w) for _ in range(n1)])
        self.stage2 = nn.Sequential(
            BasicBlock(w, 2 * w, stride=2),
            *[BasicBlock(2 * w, 2 * w) for _ in range(n2 - 1)],
        )
        self.proj = nn.Conv2d(2 * w, cfg.token_dim, 1)
        self.expected_input = cfg.input_size

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.expected_input or x.shape[-2] != self.expected_input:
            raise ValueError(
                f"expected {self.expected_input}x{self.expected_input} input, "
                f"got {tuple(x.shape[-2:])}"
            )
        return self.proj(self.stage2(self.stage1(self.stem(x))))


class ConvLSTMCell(nn.Module):
    def __init__(self, in_channels: int, hidden_channels: int):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.gates = nn.Conv2d(in_channels + hidden_channels, 4 * hidden_channels, 3, padding=1)

    def forward(
        self, x: torch.Tensor, state: RecurrentState
    ) -> tuple[torch.Tensor, RecurrentState]:
        z = self.gates(torch.cat([x, state.hidden], dim=1))
        i, f, g, o = torch.chunk(z, 4, dim=1)
        cell = torch.sigmoid(f) * state.cell + torch.sigmoid(i) * torch.tanh(g)
        hidden = torch.sigmoid(o) * torch.tanh(cell)
        return hidden, RecurrentState(hidden=hidden, cell=cell)


class OffsetEstimator(nn.Module):
    """Concatenates the two modality features, advances the recurrent unit one
    step, and projects its hidden state to per-tap 2-D offsets. The projection
    is zero-initialized so alignment starts as a plain convolution."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cell = ConvLSTMCell(2 * cfg.token_dim, cfg.recurrent_channels)
        self.head = nn.Conv2d(cfg.recurrent_channels, 2 * cfg.deform_taps, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(
        self, f_im: torch.Tensor, f_ev: torch.Tensor, state: RecurrentState
    ) -> tuple[torch.Tensor, RecurrentState]:
        if f_im.shape != f_ev.shape:
            raise ValueError("image and event feature maps must match")
        if state.hidden.shape[-2:] != f_im.shape[-2:]:
            raise ValueError("recurrent state grid does not match features")
        hidden, state = self.cell(torch.cat([f_im, f_ev], dim=1), state)
        return self.head(hidden), state


def bilinear_sample(x: torch.Tensor, sx: torch.Tensor, sy: torch.Tensor) -> torch.Tensor:
    """Sample x [B, C, H, W] at absolute coords sx/sy [B, K, H, W]; positions
    outside the grid read as zero. Returns [B, C, K, H, W]."""
    b, c, h, w = x.shape
    x0 = torch.floor(sx)
    y0 = torch.floor(sy)
    fx = sx - x0
    fy = sy - y0
    flat = x.reshape(b, c, h * w)
    out = x.new_zeros((b, c) + sx.shape[1:])
    for dy in (0, 1):
        for dx in (0, 1):
            xi = (x0 + dx).long()
            yi = (y0 + dy).long()
            weight = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).reshape(b, 1, -1)
            vals = torch.gather(flat, 2, idx.expand(b, c, -1))
            vals = vals.reshape((b, c) + sx.shape[1:])
            out = out + vals * (weight * valid.to(weight.dtype)).unsqueeze(1)
    return out


class DeformableConv2d(nn.Module):
    """3x3 deformable convolution: each tap samples at base position plus a
    per-location learned offset, bilinearly interpolated."""

    # row-major tap order; offsets channel layout is (dx, dy) per tap
    BASE_TAPS = [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        k = len(self.BASE_TAPS)
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, k))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))

    def forward(self, x: torch.Tensor, offsets: torch.Tensor) -> torch.Tensor:
        b, _, h, w = x.shape
        k = len(self.BASE_TAPS)
        if offsets.shape[1] != 2 * k:
            raise ValueError(f"offset field must have {2 * k} channels")
        off = offsets.reshape(b, k, 2, h, w)
        ys, xs = torch.meshgrid(
            torch.arange(h, dtype=x.dtype, device=x.device),
            torch.arange(w, dtype=x.dtype, device=x.device),
            indexing="ij",
        )
        base = x.new_tensor(self.BASE_TAPS)  # [K, 2]
        sx = xs + base[:, 0].reshape(1, k, 1, 1) + off[:, :, 0]
        sy = ys + base[:, 1].reshape(1, k, 1, 1) + off[:, :, 1]
        sampled = bilinear_sample(x, sx, sy)  # [B, C, K, H, W]
        return torch.einsum("ock,bckhw->bohw", self.weight, sampled) + self.bias.reshape(
            1, -1, 1, 1
        )

    def as_standard_conv(self, x: torch.Tensor) -> torch.Tensor:
        """Equivalent ordinary convolution (zero offsets)."""
        w = self.weight.reshape(*self.weight.shape[:2], 3, 3)
        return F.conv2d(x, w, self.bias, padding=1)


class ComplementaryFusion(nn.Module):
    """Channel plus spatial attention gate over the concatenated pair yields
    per-element weights w in (0, 1); output is w * aligned events +
    (1 - w) * image features, downsampled 24 -> 8 by one stride-3 conv."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        d = cfg.token_dim
        hidden = max(d // 8, 4)
        self.channel_mlp = nn.Sequential(
            nn.Linear(2 * d, hidden), nn.GELU(), nn.Linear(hidden, d)
        )
        self.spatial_conv = nn.Conv2d(2, 1, 7, padding=3)
        self.down = nn.Conv2d(d, d, 3, stride=3)

    def gate(self, f_ev: torch.Tensor, f_im: torch.Tensor) -> torch.Tensor:
        pair = torch.cat([f_ev, f_im], dim=1)
        avg = pair.mean(dim=(2, 3))
        mx = pair.amax(dim=(2, 3))
        channel = torch.sigmoid(self.channel_mlp(avg) + self.channel_mlp(mx))
        spatial_in = torch.stack([pair.mean(dim=1), pair.amax(dim=1)], dim=1)
        spatial = torch.sigmoid(self.spatial_conv(spatial_in))
        return channel.unsqueeze(-1).unsqueeze(-1) * spatial

    def combine(
        self,
        f_ev: torch.Tensor,
        f_im: torch.Tensor,
        gate_override: torch.Tensor | None = None,
    ) -> torch.Tensor:
        w = self.gate(f_ev, f_im) if gate_override is None else gate_override
        return w * f_ev + (1.0 - w) * f_im

    def forward(self, f_ev: torch.Tensor, f_im: torch.Tensor) -> torch.Tensor:
        return self.down(self.combine(f_ev, f_im))


class MultiheadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(
        self,
        query: torch.Tensor,
        keyval: torch.Tensor,
        bias: torch.Tensor | None = None,
    ) -> torch.Tensor:
        b, nq, _ = query.shape
        nk = keyval.shape[1]
        q = self.q(query).reshape(b, nq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k(keyval).reshape(b, nk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v(keyval).reshape(b, nk, self.heads, self.head_dim).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if bias is not None:
            logits = logits + bias
        attn = torch.softmax(logits, dim=-1)
        mixed = (attn @ v).transpose(1, 2).reshape(b, nq, -1)
        return self.out(mixed)


class FeedForward(nn.Module):
    def __init__(self, dim: int, ratio: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, ratio * dim), nn.GELU(), nn.Linear(ratio * dim, dim)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class EncoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiheadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim, ratio)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h)
        x = x + self.mlp(self.norm2(x))
        return x


class TokenEncoder(nn.Module):
    """Flattens the fused grid to tokens, adds a learned 2-D positional
    embedding, and applies L self-attention blocks, returning every block's
    output (oldest block first)."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        g, d = cfg.fused_grid, cfg.token_dim
        self.grid = g
        self.row_embed = nn.Parameter(torch.randn(g, d) * 0.02)
        self.col_embed = nn.Parameter(torch.randn(g, d) * 0.02)
        self.blocks = nn.ModuleList(
            [EncoderBlock(d, cfg.num_heads, cfg.mlp_ratio) for _ in range(cfg.num_blocks)]
        )

    def positional(self) -> torch.Tensor:
        pos = self.row_embed.unsqueeze(1) + self.col_embed.unsqueeze(0)  # [G, G, D]
        return pos.reshape(self.grid * self.grid, -1)

    def forward(self, fused: torch.Tensor, use_pos: bool = True) -> list[torch.Tensor]:
        b, d, g, _ = fused.shape
        tokens = fused.reshape(b, d, g * g).transpose(1, 2)
        if use_pos:
            tokens = tokens + self.positional()
        outputs = []
        for block in self.blocks:
            tokens = block(tokens)
            outputs.append(tokens)
        return outputs


class TemporalTokenAttention(nn.Module):
    """Causal attention for each token position independently across the last
    S+1 steps, with a learned relative-position bias per lag."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.max_lag = cfg.temporal_window
        self.attn = MultiheadAttention(cfg.token_dim, cfg.num_heads)
        self.norm = nn.LayerNorm(cfg.token_dim)
        # rel_bias[:, a] biases the step a lags behind the current one
        self.rel_bias = nn.Parameter(torch.zeros(cfg.num_heads, self.max_lag + 1))

    def forward(self, history: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(history) == 0:
            raise ValueError("temporal attention requires a non-empty history")
        if len(history) > self.max_lag + 1:
            raise ValueError("history longer than the configured temporal window")
        steps = len(history)
        b, n, d = history[-1].shape
        stack = torch.stack(list(history), dim=2)  # [B, N, steps, D]
        stack = stack.reshape(b * n, steps, d)
        current = stack[:, -1:, :]
        ages = torch.arange(steps - 1, -1, -1, device=stack.device)
        bias = self.rel_bias[:, ages].reshape(1, -1, 1, steps)
        mixed = self.attn(self.norm(current), self.norm(stack), bias=bias)
        out = current + mixed
        return out.reshape(b, n, d)


class DecoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = MultiheadAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = MultiheadAttention(dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.mlp = FeedForward(dim, ratio)

    def forward(self, tokens: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        h = self.norm1(tokens)
        tokens = tokens + self.self_attn(h, h)
        tokens = tokens + self.cross_attn(self.norm2(tokens), memory)
        tokens = tokens + self.mlp(self.norm3(tokens))
        return tokens


class MeshTokenDecoder(nn.Module):
    """Learnable joint and coarse-vertex tokens cross-attend to the latent
    hand tokens block by block; a shared head regresses 3-D coordinates and a
    learned linear layer lifts the coarse mesh to the fine mesh."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        d = cfg.token_dim
        self.num_joints = cfg.num_joint_tokens
        self.num_coarse = cfg.num_coarse_vertex_tokens
        self.coord_scale = cfg.coord_scale
        self.joint_tokens = nn.Parameter(torch.randn(cfg.num_joint_tokens, d) * 0.02)
        self.vertex_tokens = nn.Parameter(
            torch.randn(cfg.num_coarse_vertex_tokens, d) * 0.02
        )
        self.blocks = nn.ModuleList(
            [DecoderBlock(d, cfg.num_heads, cfg.mlp_ratio) for _ in range(cfg.num_blocks)]
        )
        self.norm = nn.LayerNorm(d)
        self.coord_head = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, 3))
        self.upsample = nn.Linear(cfg.num_coarse_vertex_tokens, cfg.num_fine_vertices)

    def forward(self, latents: Sequence[torch.Tensor]) -> StepPrediction:
        if len(latents) != len(self.blocks):
            raise ValueError(
                f"expected {len(self.blocks)} latent sets, got {len(latents)}"
            )
        b = latents[0].shape[0]
        tokens = torch.cat([self.joint_tokens, self.vertex_tokens], dim=0)
        tokens = tokens.unsqueeze(0).expand(b, -1, -1)
        for block, memory in zip(self.blocks, latents):
            tokens = block(tokens, memory)
        coords = self.coord_head(self.norm(tokens)) * self.coord_scale
        joints = coords[:, : self.num_joints]
        coarse = coords[:, self.num_joints :]
        fine = self.upsample(coarse.transpose(1, 2)).transpose(1, 2)
        return StepPrediction(joints, coarse, fine)


class FusionMeshModel(nn.Module):
    """Full per-step pipeline with recurrent alignment state and a rolling
    latent history for temporal attention."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.image_backbone = FeatureBackbone(3, cfg)
        self.event_backbone = FeatureBackbone(2, cfg)
        self.offset_estimator = OffsetEstimator(cfg)
        self.align = DeformableConv2d(cfg.token_dim, cfg.token_dim)
        self.fusion = ComplementaryFusion(cfg)
        self.encoder = TokenEncoder(cfg)
        self.temporal = nn.ModuleList(
            [TemporalTokenAttention(cfg) for _ in range(cfg.num_blocks)]
        )
        self.decoder = MeshTokenDecoder(cfg)

    def init_state(
        self,
        batch: int,
        device: torch.device | str | None = None,
        dtype: torch.dtype | None = None,
    ) -> RecurrentState:
        if device is None:
            device = next(self.parameters()).device
        if dtype is None:
            dtype = next(self.parameters()).dtype
        g = self.cfg.feature_grid
        shape = (batch, self.cfg.recurrent_channels, g, g)
        return RecurrentState(
            hidden=torch.zeros(shape, device=device, dtype=dtype),
            cell=torch.zeros(shape, device=device, dtype=dtype),
        )

    def extract_features(self, x: torch.Tensor) -> torch.Tensor:
        """Dispatch to the per-modality backbone on channel count."""
        if x.shape[1] == 3:
            return self.image_backbone(x)
        if x.shape[1] == 2:
            return self.event_backbone(x)
        raise ValueError(f"expected 2 or 3 input channels, got {x.shape[1]}")

    def attend_history(
        self, history: Sequence[Sequence[torch.Tensor]]
    ) -> list[torch.Tensor]:
        return [
            self.temporal[layer]([step[layer] for step in history])
            for layer in range(self.cfg.num_blocks)
        ]

    def decode_mesh(self, latents: Sequence[torch.Tensor]) -> StepPrediction:
        return self.decoder(latents)

    def step(
        self,
        image_features: torch.Tensor,
        event_frame: torch.Tensor,
        state: RecurrentState,
        history: list[list[torch.Tensor]],
    ) -> tuple[StepPrediction, RecurrentState, list[list[torch.Tensor]]]:
        f_ev = self.event_backbone(event_frame)
        offsets, state = self.offset_estimator(image_features, f_ev, state)
        aligned = self.align(f_ev, offsets)
        fused = self.fusion(aligned, image_features)
        latents = self.encoder(fused)
        history = (history + [latents])[-(self.cfg.temporal_window + 1) :]
        attended = self.attend_history(history)
        return self.decoder(attended), state, history

    def forward_sequence(
        self,
        rgb: torch.Tensor,
        event_frames: Sequence[torch.Tensor],
        state: RecurrentState | None = None,
        history: list[list[torch.Tensor]] | None = None,
    ) -> tuple[list[StepPrediction], RecurrentState, list[list[torch.Tensor]]]:
        """Run every step against the shared RGB frame. ``event_frames`` is
        one [B, 2, H, W] tensor per step; the image features are extracted
        once and reused."""
        if len(event_frames) == 0:
            raise ValueError("forward_sequence needs at least one step")
        if state is None:
            state = self.init_state(rgb.shape[0], rgb.device, rgb.dtype)
        history = list(history) if history is not None else []
        f_im = self.image_backbone(rgb)
        predictions = []
        for frame in event_frames:
            pred, state, history = self.step(f_im, frame, state, history)
            predictions.append(pred)
        return predictions, state, history


# ---------------------------------------------------------------------------
# checkpoint archive
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, model: FusionMeshModel) -> None:
    arrays = {
        name: tensor.detach().cpu().numpy()
        for name, tensor in model.state_dict().items()
    }
    np.savez(
        path,
        __version__=np.int64(CHECKPOINT_VERSION),
        __config__=np.bytes_(model.cfg.to_json().encode()),
        **arrays,
    )


def load_checkpoint(path: str | Path) -> FusionMeshModel:
    """Rebuild the model from a checkpoint archive; any config/weight shape
    mismatch is rejected with a diagnostic naming the offending array."""
    with np.load(path) as data:
        if "__version__" not in data or int(data["__version__"]) != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version")
        cfg = NetworkConfig.from_json(data["__config__"].item().decode())
        model = FusionMeshModel(cfg)
        state = model.state_dict()
        loaded = {}
        for name, tensor in state.items():
            if name not in data:
                raise ValueError(f"{path}: checkpoint missing weight array '{name}'")
            arr = data[name]
            if tuple(arr.shape) != tuple(tensor.shape):
                raise ValueError(
                    f"{path}: weight '{name}' has shape {tuple(arr.shape)}, "
                    f"config expects {tuple(tensor.shape)}"
                )
            loaded[name] = torch.as_tensor(arr)
        model.load_state_dict(loaded)
        return model
