import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from osadas.augment import (
    MAX_ENHANCE,
    OP_KINDS,
    AugmentationOp,
    AugmentationPolicy,
    apply_op,
    augment,
    augmented_set,
    sample_ops,
)


@pytest.fixture
def image():
    return np.random.default_rng(5).random((24, 20, 3))


def test_identity_bit_identical(image):
    out = apply_op(image, AugmentationOp("identity"))
    assert out is not image
    assert np.array_equal(out, image)


@pytest.mark.parametrize("kind", ["rotate", "translate_x", "translate_y", "shear_x", "shear_y"])
def test_zero_magnitude_geometric_is_exact(image, kind):
    np.testing.assert_allclose(apply_op(image, AugmentationOp(kind, 0.0)), image, atol=1e-6)


@pytest.mark.parametrize("mag,sign", [(0.0, 1), (0.3, 1), (0.7, -1), (1.0, 1), (1.0, -1)])
def test_brightness_closed_form(mag, sign):
    img = np.full((5, 5, 3), 0.5)
    b = 1 + sign * MAX_ENHANCE * mag
    out = apply_op(img, AugmentationOp("brightness", mag, sign))
    np.testing.assert_allclose(out, np.clip(0.5 * b, 0, 1))


def test_translate_moves_content_and_zero_fills():
    img = np.zeros((8, 8, 1))
    img[2, 2] = 1.0
    # 0.25 * 1.0 * 8 = 2 px to the right
    out = apply_op(img, AugmentationOp("translate_x", 1.0, 1))
    assert out[2, 4, 0] == pytest.approx(1.0)
    assert out[:, :2].sum() == 0.0


def test_rotate_half_turn_sanity():
    img = np.zeros((9, 9, 1))
    img[4, 4] = 1.0
    out = apply_op(img, AugmentationOp("rotate", 1.0, 1))
    # the center pixel is a fixed point of any rotation about the center
    assert out[4, 4, 0] == pytest.approx(1.0)


def test_solarize_and_posterize():
    img = np.linspace(0, 1, 12).reshape(2, 2, 3)
    assert np.array_equal(apply_op(img, AugmentationOp("solarize", 0.0)), img)
    out = apply_op(img, AugmentationOp("solarize", 1.0))
    np.testing.assert_allclose(out[img > 0], 1 - img[img > 0])
    post = apply_op(img, AugmentationOp("posterize", 1.0))
    levels = np.round(post * 255).astype(int)
    assert np.all(levels % 16 == 0)


def test_autocontrast_stretches():
    img = 0.25 + 0.5 * np.random.default_rng(0).random((6, 6, 3))
    out = apply_op(img, AugmentationOp("autocontrast"))
    np.testing.assert_allclose(out.min(axis=(0, 1)), 0.0)
    np.testing.assert_allclose(out.max(axis=(0, 1)), 1.0)


def test_equalize_flattens_histogram():
    img = np.random.default_rng(1).random((32, 32, 1)) ** 3
    out = apply_op(img, AugmentationOp("equalize"))
    assert abs(out.mean() - 0.5) < abs(img.mean() - 0.5)


@pytest.mark.parametrize("kind", ["brightness", "contrast"])
def test_strength_monotone(kind):
    img = 0.3 + 0.3 * np.random.default_rng(2).random((16, 16, 3))
    changes = [np.abs(apply_op(img, AugmentationOp(kind, m, 1)) - img).mean() for m in (0.1, 0.4, 0.8)]
    assert changes[0] < changes[1] < changes[2]


def test_op_validation():
    with pytest.raises(ValueError):
        AugmentationOp("cutout", 0.5)
    with pytest.raises(ValueError):
        AugmentationOp("rotate", 1.5)
    with pytest.raises(ValueError):
        AugmentationPolicy(mode="autoaugment")


def test_trivial_samples_one_op():
    pol = AugmentationPolicy("trivial", seed=3)
    for j in range(50):
        ops = sample_ops(pol, j)
        assert len(ops) == 1
        assert 0.0 <= ops[0].magnitude <= 1.0


def test_randaugment_samples_n_ops_at_fixed_mag():
    pol = AugmentationPolicy("randaugment", n_ops=2, mag=0.6, seed=3)
    for j in range(20):
        ops = sample_ops(pol, j)
        assert len(ops) == 2
        assert all(o.magnitude == 0.6 for o in ops)


def test_sampling_deterministic():
    pol = AugmentationPolicy("randaugment", n_ops=3, seed=11)
    assert sample_ops(pol, 7, mask_index=2) == sample_ops(pol, 7, mask_index=2)
    other_masks = [sample_ops(pol, 7, mask_index=i) for i in range(3, 13)]
    assert any(ops != sample_ops(pol, 7, mask_index=2) for ops in other_masks)


def test_identity_pool_and_disabled_policy(image):
    pol = AugmentationPolicy("trivial", ops=("identity",))
    assert np.array_equal(augment(image, pol, 4), image)
    assert np.array_equal(augment(image, AugmentationPolicy("none"), 4), image)


def test_draws_differ(image):
    pol = AugmentationPolicy("trivial", seed=0)
    differ = sum(
        not np.array_equal(augment(image, pol, 2 * i), augment(image, pol, 2 * i + 1)) for i in range(100)
    )
    assert differ >= 90


def test_augmented_set_starts_with_original(image):
    out = augmented_set(image, AugmentationPolicy(seed=1), 4)
    assert len(out) == 4 and np.array_equal(out[0], image)


@settings(max_examples=80, deadline=None)
@given(
    kind=st.sampled_from(OP_KINDS),
    mag=st.floats(0, 1),
    sign=st.sampled_from([-1, 1]),
    seed=st.integers(0, 2**31),
    channels=st.sampled_from([1, 3]),
)
def test_shape_range_determinism(kind, mag, sign, seed, channels):
    img = np.random.default_rng(seed).random((9, 11, channels))
    op = AugmentationOp(kind, mag, sign)
    a, b = apply_op(img, op), apply_op(img, op)
    assert a.shape == img.shape
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert np.array_equal(a, b)
