"""Central finite-difference checks for every network block at reduced width
in 64-bit arithmetic."""

import numpy as np
import pytest
import torch

from evhand.network import (
    ComplementaryFusion,
    DeformableConv2d,
    FeatureBackbone,
    MeshTokenDecoder,
    NetworkConfig,
    OffsetEstimator,
    TemporalTokenAttention,
    TokenEncoder,
    micro_config,
)

STEP = 1e-4
TOL = 1e-3


def fd_check(fn, inputs, rng, n_coords=6, step=STEP, tol=TOL):
    """Compare autograd with central differences on random coordinates of
    every input tensor."""
    leaves = [x.clone().double().requires_grad_(True) for x in inputs]
    out = fn(*leaves)
    probe = torch.as_tensor(rng.normal(size=tuple(out.shape)), dtype=torch.float64)
    scalar = (out * probe).sum()
    grads = torch.autograd.grad(scalar, leaves)

    def value(tensors):
        with torch.no_grad():
            return float((fn(*tensors) * probe).sum())

    for which, (x, g) in enumerate(zip(inputs, grads)):
        flat = x.reshape(-1)
        for _ in range(n_coords):
            i = int(rng.integers(flat.numel()))
            plus = x.clone().double().reshape(-1)
            minus = plus.clone()
            plus[i] += step
            minus[i] -= step
            args_p = [t.clone().double() for t in inputs]
            args_m = [t.clone().double() for t in inputs]
            args_p[which] = plus.reshape(x.shape)
            args_m[which] = minus.reshape(x.shape)
            fd = (value(args_p) - value(args_m)) / (2 * step)
            ag = float(g.reshape(-1)[i])
            rel = abs(fd - ag) / max(abs(fd), abs(ag), 1e-6)
            assert rel < tol, (which, i, fd, ag, rel)


@pytest.fixture(scope="module")
def cfg():
    return micro_config()


class TestBlockGradients:
    def test_feature_backbone(self, cfg):
        torch.manual_seed(20)
        rng = np.random.default_rng(20)
        net = FeatureBackbone(3, cfg).double()
        x = torch.rand(1, 3, cfg.input_size, cfg.input_size, dtype=torch.float64)
        fd_check(lambda inp: net(inp), [x], rng)

    def test_offset_estimator(self, cfg):
        torch.manual_seed(21)
        rng = np.random.default_rng(21)
        est = OffsetEstimator(cfg).double()
        with torch.no_grad():
            est.head.weight.normal_(0, 0.1)
            est.head.bias.normal_(0, 0.1)
        g = cfg.feature_grid
        f_im = torch.randn(1, cfg.token_dim, g, g, dtype=torch.float64)
        f_ev = torch.randn(1, cfg.token_dim, g, g, dtype=torch.float64)

        def run(a, b):
            state_h = torch.zeros(1, cfg.recurrent_channels, g, g, dtype=torch.float64)
            from evhand.network import RecurrentState

            offsets, _ = est(a, b, RecurrentState(state_h, state_h.clone()))
            return offsets

        fd_check(run, [f_im, f_ev], rng)

    def test_deformable_conv(self, cfg):
        torch.manual_seed(22)
        rng = np.random.default_rng(22)
        conv = DeformableConv2d(3, 4).double()
        x = torch.randn(1, 3, 7, 7, dtype=torch.float64)
        # fractional offsets keep sampling away from bilinear kinks
        offsets = torch.rand(1, 18, 7, 7, dtype=torch.float64) * 0.8 + 0.1
        fd_check(lambda a, o: conv(a, o), [x, offsets], rng)

    def test_complementary_fusion(self, cfg):
        torch.manual_seed(23)
        rng = np.random.default_rng(23)
        fusion = ComplementaryFusion(cfg).double()
        g = cfg.feature_grid
        f_ev = torch.randn(1, cfg.token_dim, g, g, dtype=torch.float64)
        f_im = torch.randn(1, cfg.token_dim, g, g, dtype=torch.float64)
        fd_check(lambda a, b: fusion(a, b), [f_ev, f_im], rng)

    def test_token_encoder_single_head(self):
        # 1-head reduced-width variant
        enc_cfg = NetworkConfig(
            token_dim=32,
            num_blocks=2,
            num_heads=1,
            temporal_window=2,
            input_size=48,
            feature_grid=6,
            fused_grid=2,
            backbone_width=8,
            backbone_blocks=(1, 1),
            recurrent_channels=16,
        )
        torch.manual_seed(24)
        rng = np.random.default_rng(24)
        enc = TokenEncoder(enc_cfg).double()
        g = enc_cfg.fused_grid
        fused = torch.randn(1, enc_cfg.token_dim, g, g, dtype=torch.float64)
        fd_check(lambda x: torch.stack(enc(x)), [fused], rng)

    def test_temporal_attention(self, cfg):
        torch.manual_seed(25)
        rng = np.random.default_rng(25)
        ta = TemporalTokenAttention(cfg).double()
        hist = [
            torch.randn(1, cfg.num_tokens, cfg.token_dim, dtype=torch.float64)
            for _ in range(3)
        ]
        fd_check(lambda a, b, c: ta([a, b, c]), hist, rng)

    def test_mesh_decoder(self, cfg):
        torch.manual_seed(26)
        rng = np.random.default_rng(26)
        dec = MeshTokenDecoder(cfg).double()
        latents = [
            torch.randn(1, cfg.num_tokens, cfg.token_dim, dtype=torch.float64)
            for _ in range(cfg.num_blocks)
        ]

        def run(*mem):
            pred = dec(list(mem))
            return torch.cat(
                [pred.joints.reshape(-1), pred.fine_vertices.reshape(-1)]
            )

        fd_check(run, latents, rng)
