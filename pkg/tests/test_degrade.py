import numpy as np
import pytest

from evhand.config import degradation_config_from_flat, degradation_config_to_flat
from evhand.degrade import (
    BlockMatchingInterpolator,
    DegradationConfig,
    KnownFlowInterpolator,
    apply_degrader,
    compute_descriptor,
    degrade_background_overflow,
    degrade_motion_blur,
    degrade_overexposure,
)
from evhand.events import StackedEventFrame


def make_frame(data):
    return StackedEventFrame(
        data=np.asarray(data, dtype=np.float32), target_time=1000, window_start=0
    )


def sparse_event_frame(rng, shape=(2, 64, 86), density=0.05):
    data = np.zeros(shape, dtype=np.float32)
    hits = rng.random(shape) < density
    data[hits] = rng.uniform(0.1, 1.0, size=int(hits.sum())).astype(np.float32)
    return make_frame(data)


class TestOverexposure:
    def test_unit_gain_identity(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, size=(3, 16, 16))
        np.testing.assert_array_equal(degrade_overexposure(img, 1.0), img)

    def test_clipping(self):
        img = np.full((1, 4, 4), 0.5)
        assert np.all(degrade_overexposure(img, 4.0) == 1.0)

    def test_defaults_range(self):
        cfg = DegradationConfig()
        assert cfg.oe_range == (0.8, 4.0)

    def test_rejects_nonpositive_factor(self):
        with pytest.raises(ValueError):
            degrade_overexposure(np.zeros((1, 2, 2)), 0.0)


class TestMotionBlur:
    def test_static_triplet_exact(self):
        # dyadic values so the 17-frame average is bit-exact
        img = np.zeros((8, 8))
        img[2:5, 3:6] = 0.75
        img[0, 0] = 0.25
        out = degrade_motion_blur([img, img, img], BlockMatchingInterpolator(block=4, radius=2))
        np.testing.assert_array_equal(out, img)

    def test_default_frame_count(self):
        assert DegradationConfig().mb_frames == 17

    def test_translating_square_spans_motion_path(self):
        h, w = 24, 48
        frames = []
        for shift in (0, 8, 16):
            f = np.zeros((h, w))
            f[8:16, 4 + shift : 12 + shift] = 1.0
            frames.append(f)
        interp = KnownFlowInterpolator((8.0, 0.0), (8.0, 0.0))
        out = degrade_motion_blur(frames, interp, mb_frames=17)
        row = out[12]
        assert np.all(row[4:28] > 0.0)  # full 16 px path plus the 8 px square
        assert np.all(row[:3] == 0.0) and np.all(row[30:] == 0.0)
        assert out.max() < 1.0

    def test_wrong_triplet_rejected(self):
        img = np.zeros((4, 4))
        with pytest.raises(ValueError):
            degrade_motion_blur([img, img], BlockMatchingInterpolator())


class TestBackgroundOverflow:
    def test_zero_probability_identity(self):
        rng = np.random.default_rng(1)
        frame = sparse_event_frame(rng)
        out = degrade_background_overflow(frame, 0.0, rng)
        np.testing.assert_array_equal(out.data, frame.data)

    def test_total_replacement(self):
        rng = np.random.default_rng(2)
        frame = make_frame(np.full((2, 20, 20), 0.5))
        out = degrade_background_overflow(frame, 1.0, rng)
        assert np.all((out.data == 0.0) | (out.data == 1.0))

    def test_flip_fraction_concentration(self):
        rng = np.random.default_rng(3)
        frame = make_frame(np.full((2, 260, 346), 0.5, dtype=np.float32))
        out = degrade_background_overflow(frame, 0.2, rng)
        flipped = float((out.data != frame.data).mean())
        assert abs(flipped - 0.2) < 0.01

    def test_salt_pepper_split_is_even(self):
        rng = np.random.default_rng(4)
        frame = make_frame(np.full((2, 200, 200), 0.5, dtype=np.float32))
        out = degrade_background_overflow(frame, 1.0, rng)
        salt = float((out.data == 1.0).mean())
        assert abs(salt - 0.5) < 0.01


class TestApplyDegrader:
    def test_disabled_is_identity(self):
        rng = np.random.default_rng(5)
        img = rng.uniform(0, 1, size=(3, 16, 16))
        frame = sparse_event_frame(rng, shape=(2, 16, 16))
        (out_img, out_frame), record = apply_degrader(
            (img, frame), DegradationConfig.disabled(), rng
        )
        assert record == []
        np.testing.assert_array_equal(out_img, img)
        np.testing.assert_array_equal(out_frame.data, frame.data)

    def test_default_probabilities(self):
        cfg = DegradationConfig()
        assert (cfg.p_oe, cfg.p_mb, cfg.bo_pixel_p, cfg.p_noise) == (
            0.4,
            0.3,
            0.2,
            0.8,
        )

    def test_oe_fire_rate(self):
        rng = np.random.default_rng(6)
        cfg = DegradationConfig(p_oe=0.4, p_mb=0.0, p_bo=0.0, p_noise=0.0)
        img = np.full((1, 2, 2), 0.25)
        frame = make_frame(np.zeros((2, 2, 2)))
        fired = 0
        for _ in range(10_000):
            _, record = apply_degrader((img, frame), cfg, rng)
            fired += any(op["op"] == "overexposure" for op in record)
        assert abs(fired / 10_000 - 0.4) < 0.015

    def test_deterministic_given_seed(self):
        img = np.random.default_rng(7).uniform(0, 1, size=(3, 12, 12))
        frame = sparse_event_frame(np.random.default_rng(8), shape=(2, 12, 12))
        cfg = DegradationConfig(p_mb=0.0)  # block matcher is deterministic anyway
        (a_img, a_frame), a_rec = apply_degrader(
            (img, frame), cfg, np.random.default_rng(99)
        )
        (b_img, b_frame), b_rec = apply_degrader(
            (img, frame), cfg, np.random.default_rng(99)
        )
        assert a_rec == b_rec
        np.testing.assert_array_equal(a_img, b_img)
        np.testing.assert_array_equal(a_frame.data, b_frame.data)

    def test_shapes_and_range_preserved(self):
        rng = np.random.default_rng(9)
        cfg = DegradationConfig()
        for _ in range(20):
            img = rng.uniform(0, 1, size=(3, 16, 16))
            frame = sparse_event_frame(rng, shape=(2, 16, 16))
            (out_img, out_frame), _ = apply_degrader((img, frame), cfg, rng)
            assert out_img.shape == img.shape
            assert out_frame.data.shape == frame.data.shape
            assert 0.0 <= out_img.min() and out_img.max() <= 1.0
            assert 0.0 <= out_frame.data.min() and out_frame.data.max() <= 1.0


class TestDescriptor:
    def test_uniform_image(self):
        img = np.full((3, 16, 16), 0.5)
        frame = make_frame(np.zeros((2, 16, 16)))
        d = compute_descriptor((img, frame))
        assert d.sharpness == 0.0
        assert d.brightness == pytest.approx(0.5)
        assert d.mean_pos == 0.0 and d.mean_neg == 0.0

    def test_oe_never_decreases_brightness(self):
        rng = np.random.default_rng(10)
        frame = make_frame(np.zeros((2, 8, 8)))
        for _ in range(100):
            img = rng.uniform(0, 1, size=(3, 8, 8))
            factor = float(rng.uniform(1.0, 4.0))
            before = compute_descriptor((img, frame)).brightness
            after = compute_descriptor(
                (degrade_overexposure(img, factor), frame)
            ).brightness
            assert after >= before - 1e-12

    def test_distribution_bridge(self):
        rng = np.random.default_rng(11)
        n = 500
        d_oe = np.zeros((n, 2))  # brightness before/after OE
        d_bo = np.zeros((n, 4))  # mean_pos/mean_neg before/after BO
        for i in range(n):
            img = rng.uniform(0.1, 0.7, size=(3, 24, 24))
            frame = sparse_event_frame(rng, shape=(2, 24, 24))
            before = compute_descriptor((img, frame))
            oe = degrade_overexposure(img, float(rng.uniform(1.0, 4.0)))
            bo = degrade_background_overflow(frame, 0.2, rng)
            after_oe = compute_descriptor((oe, frame))
            after_bo = compute_descriptor((img, bo))
            d_oe[i] = (before.brightness, after_oe.brightness)
            d_bo[i] = (
                before.mean_pos,
                before.mean_neg,
                after_bo.mean_pos,
                after_bo.mean_neg,
            )
        assert d_oe[:, 1].mean() > d_oe[:, 0].mean()
        assert d_bo[:, 2].mean() > d_bo[:, 0].mean()
        assert d_bo[:, 3].mean() > d_bo[:, 1].mean()


class TestConfigSerialization:
    def test_flat_round_trip(self):
        cfg = DegradationConfig(
            p_oe=0.25, oe_range=(0.9, 3.0), p_mb=0.1, mb_frames=9, noise_range=(0.01, 0.3)
        )
        flat = degradation_config_to_flat(cfg)
        back = degradation_config_from_flat(flat)
        assert back == cfg

    def test_unknown_key_rejected(self):
        from evhand.errors import UsageError

        with pytest.raises(UsageError):
            degradation_config_from_flat({"degrader.nope": 1.0})
