"""Augmentation invariants: identity short-circuits, determinism, ranges."""

import numpy as np
import pytest

from ssl_distill.augment import (
    AugmentationPolicy,
    EmptyImageError,
    STRONG_POLICY,
    WEAK_POLICY,
    adjust_brightness,
    adjust_contrast,
    adjust_hue,
    adjust_saturation,
    augment,
    bilinear_resize,
    make_view_pair,
    policy_by_name,
)
from ssl_distill.rng import RngState

IDENTITY = AugmentationPolicy("identity")


class TestPolicies:
    def test_builtin_names(self):
        assert policy_by_name("strong") is STRONG_POLICY
        assert policy_by_name("weak") is WEAK_POLICY
        with pytest.raises(ValueError):
            policy_by_name("medium")

    def test_builtin_settings(self):
        assert STRONG_POLICY.crop_scale_min == 0.6
        assert STRONG_POLICY.rotation_max == 30.0
        assert STRONG_POLICY.hue == 0.1
        assert WEAK_POLICY.crop_scale_min == 1.0
        assert WEAK_POLICY.rotation_max == 0.0
        assert WEAK_POLICY.saturation == 0.0
        assert WEAK_POLICY.hflip_prob == 0.5

    def test_validation_bounds(self):
        with pytest.raises(ValueError):
            AugmentationPolicy("p", brightness=1.0).validate()
        with pytest.raises(ValueError):
            AugmentationPolicy("p", crop_scale_min=0.0).validate()
        with pytest.raises(ValueError):
            AugmentationPolicy("p", rotation_max=-5.0).validate()
        with pytest.raises(ValueError):
            AugmentationPolicy("p", hflip_prob=1.5).validate()


class TestBilinearResize:
    def test_identity_size_is_exact(self, rand_image):
        out = bilinear_resize(rand_image, 32, 32)
        assert np.array_equal(out, rand_image)

    def test_corners_align(self, rand_image):
        out = bilinear_resize(rand_image, 17, 9)
        assert np.allclose(out[:, 0, 0], rand_image[:, 0, 0], atol=1e-6)
        assert np.allclose(out[:, -1, -1], rand_image[:, -1, -1], atol=1e-6)
        assert np.allclose(out[:, 0, -1], rand_image[:, 0, -1], atol=1e-6)

    def test_constant_image_stays_constant(self):
        img = np.full((3, 8, 8), 0.37, dtype=np.float32)
        out = bilinear_resize(img, 21, 5)
        assert np.allclose(out, 0.37, atol=1e-6)

    def test_linear_ramp_preserved(self):
        # bilinear reproduces affine functions of the coordinates exactly
        ramp = np.tile(np.linspace(0.0, 1.0, 16, dtype=np.float32), (3, 16, 1))
        out = bilinear_resize(ramp, 16, 31)
        want = np.tile(np.linspace(0.0, 1.0, 31, dtype=np.float32), (3, 16, 1))
        assert np.allclose(out, want, atol=1e-6)

    def test_upscale_shape(self, rand_image):
        assert bilinear_resize(rand_image, 64, 48).shape == (3, 64, 48)

    def test_empty_rejected(self):
        with pytest.raises(EmptyImageError):
            bilinear_resize(np.zeros((3, 0, 4), dtype=np.float32), 8, 8)


class TestColorOps:
    def test_brightness_scales(self, rand_image):
        out = adjust_brightness(rand_image, 0.5)
        assert np.allclose(out, rand_image * 0.5, atol=1e-6)

    def test_brightness_clips(self):
        img = np.full((3, 2, 2), 0.9, dtype=np.float32)
        assert adjust_brightness(img, 2.0).max() == 1.0

    def test_contrast_preserves_mean(self, rand_image):
        out = adjust_contrast(rand_image, 0.5)
        assert abs(float(out.mean()) - float(rand_image.mean())) < 1e-3

    def test_contrast_zero_is_flat(self, rand_image):
        out = adjust_contrast(rand_image, 0.0)
        assert out.std() < 1e-6

    def test_saturation_zero_is_grayscale(self, rand_image):
        out = adjust_saturation(rand_image, 0.0)
        assert np.allclose(out[0], out[1], atol=1e-6)
        assert np.allclose(out[1], out[2], atol=1e-6)

    def test_hue_full_revolution_is_identity(self, rand_image):
        # shift by exactly 1.0 wraps to the original hue
        out = adjust_hue(adjust_hue(rand_image, 0.5), 0.5)
        assert np.allclose(out, rand_image, atol=1e-5)

    def test_hue_preserves_value_channel(self, rand_image):
        out = adjust_hue(rand_image, 0.23)
        assert np.allclose(out.max(axis=0), rand_image.max(axis=0), atol=1e-5)

    def test_identity_factors_return_input_object(self, rand_image):
        assert adjust_brightness(rand_image, 1.0) is rand_image
        assert adjust_contrast(rand_image, 1.0) is rand_image
        assert adjust_saturation(rand_image, 1.0) is rand_image
        assert adjust_hue(rand_image, 0.0) is rand_image


class TestAugment:
    def test_identity_policy_is_bitexact(self, rand_image):
        out = augment(rand_image, IDENTITY, RngState(3))
        assert np.array_equal(out, rand_image)

    def test_deterministic_under_same_rng(self, rand_image):
        a = augment(rand_image, STRONG_POLICY, RngState(5))
        b = augment(rand_image, STRONG_POLICY, RngState(5))
        assert np.array_equal(a, b)

    def test_different_streams_differ(self, rand_image):
        a = augment(rand_image, STRONG_POLICY, RngState(5))
        b = augment(rand_image, STRONG_POLICY, RngState(6))
        assert not np.array_equal(a, b)

    def test_output_contract(self, rand_image):
        out = augment(rand_image, STRONG_POLICY, RngState(7))
        assert out.shape == rand_image.shape
        assert out.dtype == np.float32
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert out.flags["C_CONTIGUOUS"]

    def test_flip_only_policy(self, rand_image):
        flip_always = AugmentationPolicy("flip", hflip_prob=1.0)
        out = augment(rand_image, flip_always, RngState(0))
        assert np.array_equal(out, rand_image[:, :, ::-1])

    def test_brightness_only_leaves_geometry_alone(self):
        # multiplicative jitter: zero pixels stay zero wherever they were
        img = np.zeros((3, 16, 16), dtype=np.float32)
        img[:, 4:8, 4:8] = 0.8
        out = augment(img, AugmentationPolicy("w", brightness=0.2), RngState(1))
        assert np.array_equal(out == 0.0, img == 0.0)

    def test_rotation_fills_corners_with_zero(self):
        img = np.full((3, 33, 33), 1.0, dtype=np.float32)
        rot = AugmentationPolicy("r", rotation_max=45.0)
        for seed in range(6):
            out = augment(img, rot, RngState(seed))
            angle_was_zero = np.array_equal(out, img)
            if not angle_was_zero:
                assert out[:, 0, 0].max() == 0.0 or out[:, 0, -1].max() == 0.0
                return
        raise AssertionError("rotation never triggered across seeds")

    def test_view_pair_views_differ(self, rand_image):
        a, b = make_view_pair(rand_image, STRONG_POLICY, RngState(9))
        assert not np.array_equal(a, b)
        a2, b2 = make_view_pair(rand_image, STRONG_POLICY, RngState(9))
        assert np.array_equal(a, a2) and np.array_equal(b, b2)
