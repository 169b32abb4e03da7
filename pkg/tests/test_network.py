import time

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from evhand.network import (
    ComplementaryFusion,
    DeformableConv2d,
    FusionMeshModel,
    NetworkConfig,
    OffsetEstimator,
    RecurrentState,
    TemporalTokenAttention,
    TokenEncoder,
    bilinear_sample,
    desk_config,
    load_checkpoint,
    micro_config,
    save_checkpoint,
)

torch.manual_seed(0)


@pytest.fixture(scope="module")
def micro_model():
    torch.manual_seed(1)
    return FusionMeshModel(micro_config())


class TestBackboneShapes:
    def test_default_grid_contract(self):
        torch.manual_seed(2)
        cfg = NetworkConfig()
        model = FusionMeshModel(cfg)
        with torch.no_grad():
            img = torch.rand(1, 3, 192, 192)
            ev = torch.rand(1, 2, 192, 192)
            f_im = model.extract_features(img)
            f_ev = model.extract_features(ev)
            assert f_im.shape == (1, 256, 24, 24)
            assert f_ev.shape == (1, 256, 24, 24)
            fused = model.fusion(f_ev, f_im)
            assert fused.shape == (1, 256, 8, 8)
            latents = model.encoder(fused)
            assert len(latents) == 3
            assert all(l.shape == (1, 64, 256) for l in latents)
            pred = model.decoder(latents)
            assert pred.joints.shape == (1, 21, 3)
            assert pred.coarse_vertices.shape == (1, 195, 3)
            assert pred.fine_vertices.shape == (1, 778, 3)

    def test_zero_input_finite(self, micro_model):
        with torch.no_grad():
            out = micro_model.extract_features(torch.zeros(1, 3, 48, 48))
        assert torch.isfinite(out).all()

    def test_wrong_size_rejected(self, micro_model):
        with pytest.raises(ValueError):
            micro_model.extract_features(torch.zeros(1, 3, 64, 64))


class TestOffsetEstimator:
    def test_zero_init_head_gives_zero_offsets(self, micro_model):
        cfg = micro_model.cfg
        est = OffsetEstimator(cfg)
        g = cfg.feature_grid
        f = torch.rand(2, cfg.token_dim, g, g)
        state = micro_model.init_state(2)
        with torch.no_grad():
            offsets, _ = est(f, f, state)
        assert torch.all(offsets == 0.0)

    def test_replay_determinism(self, micro_model):
        cfg = micro_model.cfg
        g = cfg.feature_grid
        torch.manual_seed(3)
        f_im = torch.rand(1, cfg.token_dim, g, g)
        f_ev = torch.rand(1, cfg.token_dim, g, g)
        outs = []
        for _ in range(2):
            state = micro_model.init_state(1)
            with torch.no_grad():
                off, _ = micro_model.offset_estimator(f_im, f_ev, state)
            outs.append(off)
        torch.testing.assert_close(outs[0], outs[1], rtol=0, atol=0)

    def test_carried_state_matches_recomputation(self, micro_model):
        """Stepping T=5 with carried state equals recomputing the prefix from
        scratch at every step."""
        cfg = micro_model.cfg
        g = cfg.feature_grid
        torch.manual_seed(4)
        est = OffsetEstimator(cfg)
        with torch.no_grad():
            est.head.weight.normal_(0, 0.05)  # un-zero so outputs vary
            est.head.bias.normal_(0, 0.05)
        seq = [
            (torch.rand(1, cfg.token_dim, g, g), torch.rand(1, cfg.token_dim, g, g))
            for _ in range(5)
        ]
        carried = []
        state = micro_model.init_state(1)
        with torch.no_grad():
            for f_im, f_ev in seq:
                off, state = est(f_im, f_ev, state)
                carried.append(off)
            for t in range(5):
                state2 = micro_model.init_state(1)
                for f_im, f_ev in seq[: t + 1]:
                    off2, state2 = est(f_im, f_ev, state2)
                torch.testing.assert_close(off2, carried[t], rtol=0, atol=0)

    def test_grid_mismatch_rejected(self, micro_model):
        cfg = micro_model.cfg
        est = OffsetEstimator(cfg)
        bad_state = RecurrentState(
            hidden=torch.zeros(1, cfg.recurrent_channels, 3, 3),
            cell=torch.zeros(1, cfg.recurrent_channels, 3, 3),
        )
        g = cfg.feature_grid
        f = torch.rand(1, cfg.token_dim, g, g)
        with pytest.raises(ValueError):
            est(f, f, bad_state)


class TestDeformableConv:
    def test_zero_offsets_reduce_to_standard_conv(self):
        torch.manual_seed(5)
        for _ in range(20):
            conv = DeformableConv2d(4, 6).double()
            x = torch.randn(2, 4, 9, 9, dtype=torch.float64)
            offsets = torch.zeros(2, 18, 9, 9, dtype=torch.float64)
            with torch.no_grad():
                got = conv(x, offsets)
                want = conv.as_standard_conv(x)
            torch.testing.assert_close(got, want, rtol=0, atol=1e-5)

    def test_integer_offset_shifts_input(self):
        conv = DeformableConv2d(1, 1)
        with torch.no_grad():
            conv.weight.zero_()
            conv.weight[0, 0, 4] = 1.0  # center tap only
            conv.bias.zero_()
        x = torch.arange(25, dtype=torch.float32).reshape(1, 1, 5, 5)
        offsets = torch.zeros(1, 18, 5, 5)
        offsets[:, 8] = 1.0  # center tap x-offset +1
        with torch.no_grad():
            out = conv(x, offsets)
        expected = torch.zeros_like(x)
        expected[..., :, :-1] = x[..., :, 1:]
        torch.testing.assert_close(out, expected, rtol=0, atol=1e-6)

    def test_bilinear_midpoint(self):
        x = torch.tensor([[[[0.0, 1.0]]]])
        sx = torch.full((1, 1, 1, 1), 0.5)
        sy = torch.zeros(1, 1, 1, 1)
        val = bilinear_sample(x, sx, sy)
        assert float(val) == pytest.approx(0.5)

    def test_out_of_grid_reads_zero(self):
        x = torch.ones(1, 1, 3, 3)
        sx = torch.full((1, 1, 1, 1), 10.0)
        sy = torch.zeros(1, 1, 1, 1)
        assert float(bilinear_sample(x, sx, sy)) == 0.0


class TestComplementaryFusion:
    def test_gate_in_unit_interval(self, micro_model):
        cfg = micro_model.cfg
        g = cfg.feature_grid
        torch.manual_seed(6)
        fusion = ComplementaryFusion(cfg)
        f_ev = torch.randn(2, cfg.token_dim, g, g)
        f_im = torch.randn(2, cfg.token_dim, g, g)
        with torch.no_grad():
            gate = fusion.gate(f_ev, f_im)
        assert torch.all(gate > 0.0) and torch.all(gate < 1.0)

    def test_forced_gate_ignores_image_branch(self, micro_model):
        cfg = micro_model.cfg
        g = cfg.feature_grid
        torch.manual_seed(7)
        fusion = ComplementaryFusion(cfg)
        f_ev = torch.randn(1, cfg.token_dim, g, g)
        f_im = torch.randn(1, cfg.token_dim, g, g)
        ones = torch.ones(1, cfg.token_dim, g, g)
        with torch.no_grad():
            a = fusion.combine(f_ev, f_im, gate_override=ones)
            b = fusion.combine(f_ev, f_im + 3.21, gate_override=ones)
        torch.testing.assert_close(a, b, rtol=0, atol=0)
        torch.testing.assert_close(a, f_ev, rtol=0, atol=0)

    def test_downsampled_grid(self, micro_model):
        cfg = micro_model.cfg
        g = cfg.feature_grid
        fusion = ComplementaryFusion(cfg)
        with torch.no_grad():
            out = fusion(
                torch.randn(1, cfg.token_dim, g, g), torch.randn(1, cfg.token_dim, g, g)
            )
        assert out.shape == (1, cfg.token_dim, cfg.fused_grid, cfg.fused_grid)


class TestEncoder:
    def test_permutation_equivariance_without_pos(self, micro_model):
        cfg = micro_model.cfg
        torch.manual_seed(8)
        enc = TokenEncoder(cfg)
        g = cfg.fused_grid
        fused = torch.randn(1, cfg.token_dim, g, g)
        perm = torch.randperm(g * g)
        tokens = fused.reshape(1, cfg.token_dim, g * g)
        fused_perm = tokens[:, :, perm].reshape(1, cfg.token_dim, g, g)
        with torch.no_grad():
            out = enc(fused, use_pos=False)
            out_perm = enc(fused_perm, use_pos=False)
        for a, b in zip(out, out_perm):
            torch.testing.assert_close(a[:, perm], b, rtol=1e-5, atol=1e-5)

    def test_outputs_every_block(self, micro_model):
        cfg = micro_model.cfg
        enc = TokenEncoder(cfg)
        g = cfg.fused_grid
        with torch.no_grad():
            outs = enc(torch.randn(1, cfg.token_dim, g, g))
        assert len(outs) == cfg.num_blocks
        assert all(o.shape == (1, g * g, cfg.token_dim) for o in outs)


class TestTemporalAttention:
    def test_single_step_deterministic(self, micro_model):
        cfg = micro_model.cfg
        torch.manual_seed(9)
        ta = TemporalTokenAttention(cfg)
        x = torch.randn(2, cfg.num_tokens, cfg.token_dim)
        with torch.no_grad():
            a = ta([x])
            b = ta([x])
        torch.testing.assert_close(a, b, rtol=0, atol=0)
        assert a.shape == x.shape

    def test_masked_oldest_step_is_ignored(self):
        cfg = micro_config(temporal_window=2)
        torch.manual_seed(10)
        ta = TemporalTokenAttention(cfg)
        with torch.no_grad():
            ta.rel_bias[:, 2] = float("-inf")  # lag -S
        base = [torch.randn(1, cfg.num_tokens, cfg.token_dim) for _ in range(3)]
        other = [torch.randn_like(base[0])] + [t.clone() for t in base[1:]]
        with torch.no_grad():
            a = ta(base)
            b = ta(other)
        torch.testing.assert_close(a, b, rtol=0, atol=0)

    def test_unmasked_oldest_step_matters(self):
        cfg = micro_config(temporal_window=2)
        torch.manual_seed(11)
        ta = TemporalTokenAttention(cfg)
        base = [torch.randn(1, cfg.num_tokens, cfg.token_dim) for _ in range(3)]
        other = [torch.randn_like(base[0])] + [t.clone() for t in base[1:]]
        with torch.no_grad():
            a = ta(base)
            b = ta(other)
        assert not torch.allclose(a, b)

    def test_history_bounds(self, micro_model):
        cfg = micro_model.cfg
        ta = TemporalTokenAttention(cfg)
        with pytest.raises(ValueError):
            ta([])
        too_long = [
            torch.randn(1, cfg.num_tokens, cfg.token_dim)
            for _ in range(cfg.temporal_window + 2)
        ]
        with pytest.raises(ValueError):
            ta(too_long)


class TestDecoder:
    def test_deterministic(self, micro_model):
        cfg = micro_model.cfg
        torch.manual_seed(12)
        latents = [
            torch.randn(1, cfg.num_tokens, cfg.token_dim)
            for _ in range(cfg.num_blocks)
        ]
        with torch.no_grad():
            a = micro_model.decode_mesh(latents)
            b = micro_model.decode_mesh(latents)
        torch.testing.assert_close(a.fine_vertices, b.fine_vertices, rtol=0, atol=0)

    def test_gradient_reaches_fused_input(self, micro_model):
        cfg = micro_model.cfg
        g = cfg.fused_grid
        fused = torch.randn(1, cfg.token_dim, g, g, requires_grad=True)
        latents = micro_model.encoder(fused)
        attended = micro_model.attend_history([latents])
        pred = micro_model.decode_mesh(attended)
        total = pred.joints.sum() + pred.coarse_vertices.sum() + pred.fine_vertices.sum()
        total.backward()
        assert fused.grad is not None
        assert float(fused.grad.abs().sum()) > 0.0


class TestForwardSequence:
    def test_window_collapse_s0(self):
        cfg = micro_config(temporal_window=0)
        torch.manual_seed(13)
        model = FusionMeshModel(cfg)
        n = cfg.input_size
        rgb = torch.rand(1, 3, n, n)
        frames = [torch.rand(1, 2, n, n) for _ in range(3)]
        with torch.no_grad():
            preds, _, _ = model.forward_sequence(rgb, frames)
            # no-history pipeline: same submodules, single-entry history
            state = model.init_state(1)
            f_im = model.image_backbone(rgb)
            for t, frame in enumerate(frames):
                f_ev = model.event_backbone(frame)
                offsets, state = model.offset_estimator(f_im, f_ev, state)
                fused = model.fusion(model.align(f_ev, offsets), f_im)
                latents = model.encoder(fused)
                attended = model.attend_history([latents])
                manual = model.decode_mesh(attended)
                torch.testing.assert_close(
                    preds[t].fine_vertices, manual.fine_vertices, rtol=0, atol=0
                )

    def test_prefix_equivalence(self, micro_model):
        cfg = micro_model.cfg
        n = cfg.input_size
        torch.manual_seed(14)
        rgb = torch.rand(1, 3, n, n)
        frames = [torch.rand(1, 2, n, n) for _ in range(5)]
        with torch.no_grad():
            full, _, _ = micro_model.forward_sequence(rgb, frames)
            for t in range(5):
                part, _, _ = micro_model.forward_sequence(rgb, frames[: t + 1])
                torch.testing.assert_close(
                    part[t].joints, full[t].joints, rtol=0, atol=0
                )

    def test_desk_sequence_runtime(self):
        cfg = desk_config(temporal_window=2)
        torch.manual_seed(15)
        model = FusionMeshModel(cfg)
        n = cfg.input_size
        rgb = torch.rand(1, 3, n, n)
        frames = [torch.rand(1, 2, n, n) for _ in range(5)]
        with torch.no_grad():
            model.forward_sequence(rgb, frames)  # warm up
            start = time.perf_counter()
            model.forward_sequence(rgb, frames)
            elapsed = time.perf_counter() - start
        print(f"desk 5-step sequence: {elapsed * 1e3:.1f} ms")
        assert elapsed < 10.0

    def test_no_nan_fuzz(self, micro_model):
        cfg = micro_model.cfg
        n = cfg.input_size
        torch.manual_seed(16)
        trials = 0
        with torch.no_grad():
            for _ in range(10):
                rgb = torch.rand(100, 3, n, n)
                frames = [torch.rand(100, 2, n, n) for _ in range(2)]
                preds, _, _ = micro_model.forward_sequence(rgb, frames)
                for p in preds:
                    assert torch.isfinite(p.joints).all()
                    assert torch.isfinite(p.coarse_vertices).all()
                    assert torch.isfinite(p.fine_vertices).all()
                trials += 100
        assert trials == 1000


class TestCheckpoint:
    def test_round_trip(self, micro_model, tmp_path):
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, micro_model)
        loaded = load_checkpoint(path)
        assert loaded.cfg == micro_model.cfg
        n = micro_model.cfg.input_size
        torch.manual_seed(17)
        rgb = torch.rand(1, 3, n, n)
        frames = [torch.rand(1, 2, n, n)]
        with torch.no_grad():
            a, _, _ = micro_model.forward_sequence(rgb, frames)
            b, _, _ = loaded.forward_sequence(rgb, frames)
        torch.testing.assert_close(a[0].fine_vertices, b[0].fine_vertices)

    def test_shape_mismatch_names_offending_array(self, micro_model, tmp_path):
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, micro_model)
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
        arrays["decoder.upsample.weight"] = np.zeros((7, 7), dtype=np.float32)
        np.savez(tmp_path / "bad.npz", **arrays)
        with pytest.raises(ValueError, match="decoder.upsample.weight"):
            load_checkpoint(tmp_path / "bad.npz")

    def test_missing_array_rejected(self, micro_model, tmp_path):
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, micro_model)
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files if k != "align.bias"}
        np.savez(tmp_path / "partial.npz", **arrays)
        with pytest.raises(ValueError, match="align.bias"):
            load_checkpoint(tmp_path / "partial.npz")
