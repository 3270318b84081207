import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from laminar.augment import (AffineAugment, AugPolicy, affine_grid, apply_affine_batch, aug_transforms,
                             compose_affine, flip_lr, grid_sample, identity, rotate, translate, zoom)
from laminar.dispatch import Item
from laminar.errors import NoMatch, ShapeMismatch
from laminar.tensor import Tensor
from laminar.transforms import TRAIN, VALID


def bilinear_oracle(img, mat):
    """Direct scalar evaluation of img(M p) with zero padding, one pixel at a time."""
    c, H, W = img.shape
    out = np.zeros_like(img)
    for i in range(H):
        for j in range(W):
            xn, yn = (2 * j + 1) / W - 1, (2 * i + 1) / H - 1
            xs = mat[0][0] * xn + mat[0][1] * yn + mat[0][2]
            ys = mat[1][0] * xn + mat[1][1] * yn + mat[1][2]
            px, py = ((xs + 1) * W - 1) / 2, ((ys + 1) * H - 1) / 2
            x0, y0 = math.floor(px), math.floor(py)
            for yy, wy in ((y0, 1 - (py - y0)), (y0 + 1, py - y0)):
                for xx, wx in ((x0, 1 - (px - x0)), (x0 + 1, px - x0)):
                    if 0 <= yy < H and 0 <= xx < W:
                        out[:, i, j] += wy * wx * img[:, yy, xx]
    return out


def checkerboard(n=16, cell=2):
    i, j = np.indices((n, n))
    return (((i // cell) + (j // cell)) % 2).astype(np.float64)[None, None]


def test_compose_identity():
    np.testing.assert_array_equal(compose_affine([identity(), identity()]), identity())


def test_rotations_compose():
    np.testing.assert_allclose(compose_affine([rotate(90), rotate(90)]), rotate(180), atol=1e-12)


def test_rotate_zoom_hand_multiplied():
    c, s = math.cos(math.radians(30)), math.sin(math.radians(30))
    z = 1 / 1.2
    expected = np.array([[c * z, -s * z, 0.0], [s * z, c * z, 0.0]])
    np.testing.assert_allclose(compose_affine([rotate(30), zoom(1.2)]), expected, atol=1e-15)


def test_compose_applies_right_to_left():
    m = compose_affine([translate(0.5, 0), flip_lr()])
    # p -> flip(p) -> translate: x -> -x + 0.5
    np.testing.assert_allclose(m @ np.array([0.2, 0.3, 1.0]), [0.3, 0.3])


def test_identity_grid_is_bitwise():
    img = np.random.default_rng(0).standard_normal((2, 3, 5, 7))
    out = grid_sample(img, affine_grid(np.stack([identity()] * 2), 5, 7))
    assert out.tobytes() == img.tobytes()


def test_one_pixel_shift_on_ramp():
    img = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    # sample at x + 2/W: output column j reads input column j + 1
    out = grid_sample(img, affine_grid(translate(2 / 4, 0), 4, 4))
    expected = np.zeros_like(img)
    expected[..., :3] = img[..., 1:]
    np.testing.assert_array_equal(out, expected)
    border = grid_sample(img, affine_grid(translate(2 / 4, 0), 4, 4), padding="border")
    np.testing.assert_array_equal(border[..., 3], img[..., 3])


def test_nearest_never_invents_labels():
    rng = np.random.default_rng(3)
    mask = rng.choice([3.0, 7.0], size=(1, 1, 9, 9))
    for deg in (13, 45, 71):
        out = grid_sample(mask, affine_grid(compose_affine([rotate(deg), zoom(0.8)]), 9, 9), "nearest")
        assert set(np.unique(out)) <= {0.0, 3.0, 7.0}


def test_grid_sample_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        grid_sample(np.zeros((2, 1, 4, 4)), affine_grid(identity(), 4, 4))


@settings(max_examples=20, deadline=None)
@given(st.floats(-40, 40), st.floats(0.7, 1.5), st.floats(-0.3, 0.3))
def test_single_pass_matches_direct_evaluation(deg, scale, tx):
    img = np.random.default_rng(0).standard_normal((2, 6, 7))
    mat = compose_affine([rotate(deg), zoom(scale), translate(tx, 0)])
    out = grid_sample(img[None], affine_grid(mat, 6, 7))[0]
    np.testing.assert_allclose(out, bilinear_oracle(img, mat), atol=1e-9, rtol=0)


def test_single_pass_differs_from_two_pass_on_checkerboard():
    img = checkerboard()
    r, z = rotate(30), zoom(1.2)
    one = grid_sample(img, affine_grid(compose_affine([r, z]), 16, 16))
    two = grid_sample(grid_sample(img, affine_grid(r, 16, 16)), affine_grid(z, 16, 16))
    np.testing.assert_allclose(one[0], bilinear_oracle(img[0], compose_affine([r, z])), atol=1e-9)
    assert np.abs(one - two).mean() > 0


def _pair(b=2, n=8, seed=0):
    rng = np.random.default_rng(seed)
    img = Item("ImageArray", Tensor(rng.random((b, 1, n, n))))
    mask = Item("MaskArray", Tensor(rng.choice([0.0, 2.0], size=(b, n, n))))
    return img, mask


def test_paired_image_and_mask_share_the_matrix():
    img, mask = _pair()
    mats = np.stack([rotate(90), rotate(-90)])
    out_img, out_mask = apply_affine_batch((img, mask), mats)
    for k in range(2):
        np.testing.assert_allclose(out_img.payload.data[k, 0], np.rot90(img.payload.data[k, 0], 1 if k == 0 else -1),
                                   atol=1e-12)
        np.testing.assert_array_equal(out_mask.payload.data[k], np.rot90(mask.payload.data[k], 1 if k == 0 else -1))


def test_lighting_skips_masks():
    img, mask = _pair()
    mats = np.stack([identity()] * 2)
    light = (np.array([0.5, -0.5]), np.array([1.0, 1.0]))
    out_img, out_mask = apply_affine_batch((img, mask), mats, light)
    assert out_mask.payload.data.tobytes() == mask.payload.data.tobytes()
    np.testing.assert_allclose(out_img.payload.data[0], img.payload.data[0] + 0.5, atol=1e-15)


def test_targets_pass_through_and_unknown_types_fail():
    img, _ = _pair()
    cat = Item("Category", Tensor([0.0, 1.0]))
    out = apply_affine_batch((img, cat), np.stack([rotate(10)] * 2))
    assert out[1] is cat
    with pytest.raises(NoMatch):
        apply_affine_batch(Item("BBoxList", Tensor(np.zeros((2, 4)))), np.stack([identity()] * 2))


def test_neutral_policy_is_identity():
    img, mask = _pair()
    tfm = aug_transforms(max_rotate=0, zoom_range=(1.0, 1.0), p_flip=0)
    out = tfm((img, mask), split_idx=TRAIN)
    assert out[0].payload.data.tobytes() == img.payload.data.tobytes()
    assert out[1].payload.data.tobytes() == mask.payload.data.tobytes()


def test_augmentation_is_gated_to_training():
    img, mask = _pair()
    tfm = aug_transforms(max_rotate=30)
    out = tfm((img, mask), split_idx=VALID)
    assert out[0].payload.data.tobytes() == img.payload.data.tobytes()
    moved = tfm((img, mask), split_idx=TRAIN)
    assert moved[0].payload.data.tobytes() != img.payload.data.tobytes()


def test_seeded_policy_is_deterministic():
    img, mask = _pair(b=4)
    a = aug_transforms(max_rotate=30, max_brightness=0.2, seed=5)((img, mask), split_idx=TRAIN)
    b = aug_transforms(max_rotate=30, max_brightness=0.2, seed=5)((img, mask), split_idx=TRAIN)
    assert all(x.payload.data.tobytes() == y.payload.data.tobytes() for x, y in zip(a, b))
    assert set(np.unique(a[1].payload.data)) <= {0.0, 2.0}


def test_policy_validation_and_state_round_trip():
    with pytest.raises(ValueError):
        AugPolicy(p_flip=2.0)
    tfm = aug_transforms(max_rotate=12.0, seed=3)
    again = AffineAugment()
    again.set_state(tfm.get_state())
    assert again.policy == tfm.policy and again.split_idx == TRAIN
