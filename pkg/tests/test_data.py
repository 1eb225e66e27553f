import json

import numpy as np
import pytest

from dsfn.data import (AugmentConfig, SharpSequence, augment, bicubic_resize,
                       degrade_sequence, extract_windows, make_blurry,
                       read_png, read_sequence, resize_to, toy_video_gen,
                       write_png, write_sequence)
from dsfn.errors import DataError, ShapeError

from reference import naive_bicubic


def const_frames(values, h=16, w=16):
    return np.stack([np.full((3, h, w), v, np.float32) for v in values])


class TestMakeBlurry:
    def test_identical_frames_unchanged(self):
        frames = const_frames([0.4] * 11)
        assert np.allclose(make_blurry(frames), 0.4)

    def test_mean_of_ramp(self):
        frames = const_frames([v / 10 for v in range(11)])
        assert np.allclose(make_blurry(frames), 0.5)

    def test_wrong_count_rejected(self):
        with pytest.raises(ShapeError):
            make_blurry(const_frames([0.1] * 10))

    def test_commutes_with_constant_shift(self):
        rng = np.random.default_rng(0)
        frames = rng.uniform(0, 0.5, (11, 3, 8, 8)).astype(np.float32)
        lhs = make_blurry(frames + 0.25)
        rhs = make_blurry(frames) + 0.25
        assert np.allclose(lhs, rhs, atol=1e-6)


class TestDegrade:
    def test_blurry_count_for_97_frames(self):
        seq = toy_video_gen(seed=3, n_frames=97, height=32, width=32, n_shapes=1)
        blurry, gt = degrade_sequence(seq, r=2)
        assert len(blurry) == 11            # floor((97 - 11) / 8) + 1
        assert len(gt) == 2 * 11 - 1

    def test_static_sequence_degenerates(self):
        seq = toy_video_gen(seed=5, n_frames=30, height=32, width=32, n_shapes=0)
        blurry, gt = degrade_sequence(seq, r=2)
        down = bicubic_resize(seq.frames[0], 0.5)
        for frame in blurry:
            assert np.allclose(frame, down, atol=1e-6)
        for frame in gt:
            assert np.array_equal(frame, seq.frames[0])

    def test_keyframe_and_intermediate_indices(self):
        values = [i / 200 for i in range(30)]
        seq = SharpSequence(id="idx", fps=240,
                            frames=const_frames(values, 16, 16))
        _, gt = degrade_sequence(seq, r=2)
        # window k=0 center -> frame 5; k=1 -> frame 13; midpoint -> frame 9
        assert np.allclose(gt[0], values[5])
        assert np.allclose(gt[2], values[13])
        assert np.allclose(gt[1], values[9])

    def test_gt_dims_are_r_times_blurry(self):
        seq = toy_video_gen(seed=7, n_frames=19, height=32, width=48, n_shapes=2)
        blurry, gt = degrade_sequence(seq, r=4)
        assert gt.shape[-2:] == (32, 48)
        assert blurry.shape[-2:] == (8, 12)

    def test_too_short_sequence_rejected(self):
        seq = toy_video_gen(seed=1, n_frames=15, height=32, width=32)
        with pytest.raises(DataError):
            degrade_sequence(seq, r=2)

    def test_window_extraction_arity(self):
        seq = toy_video_gen(seed=2, n_frames=97, height=32, width=32, n_shapes=1)
        blurry, gt = degrade_sequence(seq, r=2)
        windows = extract_windows(seq.id, blurry, gt)
        assert len(windows) == 8            # 11 blurry frames -> 8 windows
        for k, sample in enumerate(windows):
            assert sample.inputs.shape == (4, 3, 16, 16)
            assert sample.gt.shape == (5, 3, 32, 32)
            assert sample.provenance == (seq.id, k)
            assert np.array_equal(sample.gt[0], gt[2 * k + 1])


class TestBicubic:
    def test_scale_one_is_identity(self):
        img = np.random.default_rng(0).uniform(0, 1, (3, 9, 7)).astype(np.float32)
        assert np.abs(bicubic_resize(img, 1.0) - img).max() < 1e-6

    def test_constant_preserved(self):
        img = np.full((3, 12, 12), 0.63, np.float32)
        out = bicubic_resize(img, 0.5)
        assert np.allclose(out, 0.63, atol=1e-6)

    def test_ramp_downscale_matches_dense_oracle(self):
        ramp = np.linspace(0, 1, 64, dtype=np.float32).reshape(8, 8)
        img = np.stack([ramp, ramp * 0.5, 1 - ramp])
        got = bicubic_resize(img, 0.5)
        want = naive_bicubic(img, 4, 4)
        assert np.abs(got - want).max() < 1e-4

    def test_random_resize_matches_dense_oracle(self):
        img = np.random.default_rng(1).uniform(0, 1, (3, 10, 14)).astype(np.float32)
        got = resize_to(img, 25, 7)
        want = naive_bicubic(img, 25, 7)
        assert np.abs(got - want).max() < 1e-4

    def test_zero_output_dim_rejected(self):
        with pytest.raises(ShapeError):
            bicubic_resize(np.zeros((3, 4, 4), np.float32), 0.01)

    def test_output_clipped_to_unit_range(self):
        img = np.zeros((1, 8, 8), np.float32)
        img[0, ::2, ::2] = 1.0
        out = bicubic_resize(img, 1.5)
        assert out.min() >= 0.0 and out.max() <= 1.0


def make_sample(seed=0, h=32, r=2):
    gt = np.random.default_rng(seed).uniform(0, 1, (5, 3, h, h)).astype(np.float32)
    inputs = np.stack([bicubic_resize(f, 1.0 / r) for f in gt[:4]])
    from dsfn.data import TrainingSample

    return TrainingSample(inputs=inputs, gt=gt, provenance=("t", 0))


class TestAugment:
    def test_disabled_augmentations_leave_sample_unchanged(self):
        sample = make_sample()
        cfg = AugmentConfig(crop=None, flip_h=False, flip_v=False,
                            jitter=0.0, noise_sigma=0.0)
        out = augment(sample, cfg, 0)
        assert np.array_equal(out.inputs, sample.inputs)
        assert np.array_equal(out.gt, sample.gt)

    def test_flip_is_involution(self):
        sample = make_sample(1)
        cfg = AugmentConfig(crop=None, flip_h=True, flip_v=False,
                            jitter=0.0, noise_sigma=0.0)
        for seed in range(8):
            out = augment(sample, cfg, seed)
            if not np.array_equal(out.gt, sample.gt):
                twice = np.flip(out.gt, axis=-1)
                assert np.array_equal(twice, sample.gt)
                break
        else:
            pytest.fail("no flip drawn in 8 seeds")

    def test_deterministic_given_seed(self):
        sample = make_sample(2)
        cfg = AugmentConfig(crop=16)
        a = augment(sample, cfg, 123)
        b = augment(sample, cfg, 123)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.gt, b.gt)

    def test_crop_alignment_preserves_downscale_relation(self):
        # smooth content so crop-border resampling effects stay tiny
        ys = np.linspace(0, np.pi, 64)
        base = 0.5 + 0.3 * np.sin(ys)[None, :, None] * np.cos(ys)[None, None, :]
        gt = np.stack([np.concatenate([base, base * 0.8, base * 0.6])
                       .astype(np.float32)] * 5)
        inputs = np.stack([bicubic_resize(f, 0.5) for f in gt[:4]])
        from dsfn.data import TrainingSample

        sample = TrainingSample(inputs=inputs, gt=gt, provenance=("s", 0))
        cfg = AugmentConfig(crop=32, flip_h=True, flip_v=True,
                            jitter=0.0, noise_sigma=0.0)
        out = augment(sample, cfg, 5)
        for i in range(4):
            redownscaled = bicubic_resize(out.gt[i], 0.5)
            assert np.abs(out.inputs[i] - redownscaled).max() <= 2e-2

    def test_crop_larger_than_frame_rejected(self):
        sample = make_sample(3)
        with pytest.raises(ShapeError):
            augment(sample, AugmentConfig(crop=128), 0)

    def test_noise_touches_inputs_only(self):
        sample = make_sample(4)
        cfg = AugmentConfig(crop=None, flip_h=False, flip_v=False,
                            jitter=0.0, noise_sigma=0.1)
        out = augment(sample, cfg, 9)
        assert np.array_equal(out.gt, sample.gt)
        assert not np.array_equal(out.inputs, sample.inputs)
        diff = out.inputs.astype(np.float64) - np.clip(sample.inputs, 0, 1)
        assert 0.05 < diff.std() < 0.15  # sigma 0.1 modulo clipping

    def test_all_frames_stay_in_unit_range(self):
        sample = make_sample(5)
        out = augment(sample, AugmentConfig(crop=16), 17)
        for arr in (out.inputs, out.gt):
            assert arr.min() >= 0.0 and arr.max() <= 1.0


class TestToyVideo:
    def test_same_seed_identical(self):
        a = toy_video_gen(seed=9, n_frames=5, height=32, width=32)
        b = toy_video_gen(seed=9, n_frames=5, height=32, width=32)
        assert np.array_equal(a.frames, b.frames)

    def test_no_shapes_is_static(self):
        seq = toy_video_gen(seed=3, n_frames=6, height=32, width=32, n_shapes=0)
        for frame in seq.frames[1:]:
            assert np.array_equal(frame, seq.frames[0])

    def test_shapes_move(self):
        seq = toy_video_gen(seed=4, n_frames=6, height=32, width=32, n_shapes=2)
        for a, b in zip(seq.frames, seq.frames[1:]):
            assert np.abs(a - b).mean() > 0

    def test_small_dims_rejected(self):
        with pytest.raises(ShapeError):
            toy_video_gen(seed=0, n_frames=3, height=16, width=64)

    def test_values_in_unit_range(self):
        seq = toy_video_gen(seed=6, n_frames=4, height=32, width=32, n_shapes=5)
        assert seq.frames.min() >= 0.0 and seq.frames.max() <= 1.0


class TestDiskIO:
    def test_png_round_trip_is_exact_on_quantized_values(self, tmp_path):
        frame = np.round(np.random.default_rng(0).uniform(0, 1, (3, 8, 8)) * 255) / 255
        frame = frame.astype(np.float32)
        write_png(tmp_path / "f.png", frame)
        back = read_png(tmp_path / "f.png")
        assert np.allclose(back, frame, atol=1e-7)

    def test_sequence_manifest_contents(self, tmp_path):
        frames = np.random.default_rng(1).uniform(0, 1, (3, 3, 8, 10)).astype(np.float32)
        write_sequence(tmp_path / "seq", frames, "seq", 240)
        manifest = json.loads((tmp_path / "seq" / "manifest.json").read_text())
        assert manifest == {
            "id": "seq", "fps": 240, "frame_count": 3,
            "width": 10, "height": 8,
            "files": ["000000.png", "000001.png", "000002.png"],
        }
        back, _ = read_sequence(tmp_path / "seq")
        assert back.shape == frames.shape

    def test_missing_sequence_rejected(self, tmp_path):
        with pytest.raises(DataError):
            read_sequence(tmp_path / "nothing")
