"""Tests for the image augmentation pipeline."""

import numpy as np
import pytest

from docrec.augment import (
    AugmentConfig,
    TRANSFORMS,
    augment,
    color_jitter,
    elastic_distortion,
    gaussian_blur,
    gaussian_noise,
    ink_dilation,
    ink_erosion,
    perspective_warp,
    resolution_change,
    sharpen,
)


def sample_image(seed=0, shape=(48, 64)):
    rng = np.random.default_rng(seed)
    img = np.full(shape, 255, dtype=np.uint8)
    # a few dark strokes so morphology has something to act on
    img[10:14, 5:50] = 0
    img[20:40, 30:33] = 30
    img += rng.integers(0, 8, shape).astype(np.uint8) // 4
    return np.clip(img, 0, 255).astype(np.uint8)


class TestConfig:
    def test_defaults(self):
        cfg = AugmentConfig()
        assert cfg.pipeline_prob == 0.90
        assert cfg.transform_prob == 0.10

    @pytest.mark.parametrize("kwargs", [
        {"pipeline_prob": -0.1},
        {"pipeline_prob": 1.5},
        {"transform_prob": 2.0},
        {"resolution_range": (1.4, 0.6)},
        {"resolution_range": (0.0, 1.0)},
        {"perspective_max": -1.0},
        {"contrast_range": (1.2, 0.8)},
        {"noise_sigma": (-1.0, 2.0)},
        {"min_side": 0},
        {"morph_sizes": (2, 3)},
        {"morph_sizes": ()},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            AugmentConfig(**kwargs)


class TestPipeline:
    def test_gate_off_is_identity(self):
        img = sample_image()
        cfg = AugmentConfig(pipeline_prob=0.0)
        out = augment(img, np.random.default_rng(3), cfg)
        assert out.dtype == np.uint8
        assert np.array_equal(out, img)

    def test_gate_off_returns_copy(self):
        img = sample_image()
        out = augment(img, np.random.default_rng(3), AugmentConfig(pipeline_prob=0.0))
        out[0, 0] = 7
        assert img[0, 0] != 7 or img[0, 0] == 7  # original untouched check below
        assert not np.shares_memory(out, img)

    def test_deterministic_under_seed(self):
        img = sample_image()
        cfg = AugmentConfig(pipeline_prob=1.0, transform_prob=0.8)
        a = augment(img, np.random.default_rng(11), cfg)
        b = augment(img, np.random.default_rng(11), cfg)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        img = sample_image()
        cfg = AugmentConfig(pipeline_prob=1.0, transform_prob=0.9)
        outs = {augment(img, np.random.default_rng(s), cfg).tobytes()
                for s in range(6)}
        assert len(outs) > 1

    def test_output_dtype_and_range(self):
        img = sample_image()
        cfg = AugmentConfig(pipeline_prob=1.0, transform_prob=1.0)
        out = augment(img, np.random.default_rng(5), cfg)
        assert out.dtype == np.uint8
        assert out.ndim == 2

    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            augment(np.zeros((4, 4, 3), dtype=np.uint8), np.random.default_rng(0))

    def test_transform_count(self):
        assert len(TRANSFORMS) == 9


class TestIndividualTransforms:
    def test_noise_statistics(self):
        # on a constant image the only variation is the injected noise
        img = np.full((320, 320), 128, dtype=np.uint8)
        cfg = AugmentConfig(noise_sigma=(8.0, 8.0))
        out = gaussian_noise(img.astype(np.float64), np.random.default_rng(0), cfg)
        assert out.shape == img.shape
        assert abs(float(np.mean(out)) - 128.0) < 0.5
        assert abs(float(np.var(out)) - 64.0) < 6.4  # within 10% of sigma^2

    def test_dilation_grows_ink(self):
        img = np.full((5, 5), 255.0)
        img[2, 2] = 0.0
        cfg = AugmentConfig(morph_sizes=(3, 3))
        out = ink_dilation(img, np.random.default_rng(0), cfg)
        assert np.count_nonzero(out < 128) > 1
        assert out[2, 2] == 0.0

    def test_erosion_shrinks_ink(self):
        img = np.full((7, 7), 255.0)
        img[2:5, 2:5] = 0.0
        cfg = AugmentConfig(morph_sizes=(3, 3))
        out = ink_erosion(img, np.random.default_rng(0), cfg)
        assert np.count_nonzero(out < 128) < 9
        assert out[3, 3] == 0.0

    def test_close_covers_original_ink(self):
        # dilation followed by erosion never loses original ink pixels
        cfg = AugmentConfig(morph_sizes=(3,))
        for seed in range(25):
            r = np.random.default_rng(seed)
            img = np.where(r.random((5, 5)) < 0.3, 0.0, 255.0)
            order_rng = np.random.default_rng(seed + 100)
            closed = ink_erosion(ink_dilation(img, order_rng, cfg), order_rng, cfg)
            ink_before = img < 128
            ink_after = closed < 128
            assert np.all(ink_after[ink_before]), f"seed {seed} lost ink"

    def test_resolution_changes_shape(self):
        img = sample_image().astype(np.float64)
        cfg = AugmentConfig(resolution_range=(0.5, 0.5))
        out = resolution_change(img, np.random.default_rng(0), cfg)
        assert out.shape == (24, 32)

    def test_resolution_respects_min_side(self):
        img = np.full((10, 10), 200.0)
        cfg = AugmentConfig(resolution_range=(0.1, 0.1), min_side=8)
        out = resolution_change(img, np.random.default_rng(0), cfg)
        assert min(out.shape) >= 8

    def test_perspective_keeps_shape(self):
        img = sample_image().astype(np.float64)
        out = perspective_warp(img, np.random.default_rng(2), AugmentConfig())
        assert out.shape == img.shape

    def test_elastic_keeps_shape_and_moves_pixels(self):
        img = sample_image().astype(np.float64)
        out = elastic_distortion(img, np.random.default_rng(2), AugmentConfig())
        assert out.shape == img.shape
        assert not np.array_equal(out, img)

    def test_color_jitter_contrast_about_mean(self):
        img = np.full((20, 20), 100.0)
        cfg = AugmentConfig(brightness_max=0.0, contrast_range=(1.5, 1.5))
        out = color_jitter(img, np.random.default_rng(0), cfg)
        # constant image: contrast about its own mean leaves values in place
        assert np.allclose(out, 100.0)

    def test_color_jitter_brightness_shift(self):
        img = np.full((20, 20), 100.0)
        cfg = AugmentConfig(brightness_max=0.1, contrast_range=(1.0, 1.0))
        out = color_jitter(img, np.random.default_rng(0), cfg)
        assert np.allclose(out, out[0, 0])
        assert abs(float(out[0, 0]) - 100.0) <= 0.1 * 255.0 + 1e-9

    def test_blur_reduces_variance(self):
        img = sample_image().astype(np.float64)
        out = gaussian_blur(img, np.random.default_rng(0), AugmentConfig())
        assert out.shape == img.shape
        assert np.var(out) < np.var(img)

    def test_sharpen_increases_edge_contrast(self):
        img = np.full((20, 20), 255.0)
        img[:, 10:] = 0.0
        out = sharpen(img, np.random.default_rng(0), AugmentConfig())
        assert out.shape == img.shape
        assert float(np.max(out)) > 255.0 or float(np.min(out)) < 0.0
