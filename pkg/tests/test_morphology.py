"""Flat morphology oracle vs definition-faithful brute force, plus the
algebraic invariants: ordering chain, idempotence, duality, extensivity.

Exact equality everywhere is intentional: flat morphology only moves
values around, never computes new ones.  Test images live on the
normalized 8-bit grid (2k+1)/512 so that negation 1 - v is also exact.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from morphlearn.imaging import center_crop, normalize
from morphlearn.morphology import (StructuringElement, black_top_hat, closing,
                                   dilate, erode, opening, reflect, se_diamond,
                                   se_disk, se_line, se_square, white_top_hat)

ALL_SES = [
    se_square(3), se_square(5), se_square(2),
    se_diamond(3), se_diamond(5),
    se_disk(5),
    se_line(5, 0), se_line(5, 90), se_line(7, 45), se_line(7, 135),
    se_line(10, 0),
]


def grid_image(rng, h, w):
    return normalize(rng.integers(0, 256, (h, w)).astype(np.float64))


def brute_erode(f, se):
    """min over f(x+b), b in set offsets -- straight from the definition."""
    bh, bw = se.mask.shape
    rh, rw = bh // 2, bw // 2
    out = np.empty((f.shape[0] - bh + 1, f.shape[1] - bw + 1))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            ci, cj = i + rh, j + rw
            vals = [f[ci + (mr - rh), cj + (mc - rw)]
                    for mr in range(bh) for mc in range(bw) if se.mask[mr, mc]]
            out[i, j] = min(vals)
    return out


def brute_dilate(f, se):
    """max over f(x-b), b in set offsets."""
    bh, bw = se.mask.shape
    rh, rw = bh // 2, bw // 2
    out = np.empty((f.shape[0] - bh + 1, f.shape[1] - bw + 1))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            ci, cj = i + rh, j + rw
            vals = [f[ci - (mr - rh), cj - (mc - rw)]
                    for mr in range(bh) for mc in range(bw) if se.mask[mr, mc]]
            out[i, j] = max(vals)
    return out


def test_se_square():
    se = se_square(3)
    assert_array_equal(se.mask, np.ones((3, 3), dtype=bool))
    se2 = se_square(2)
    assert se2.mask.shape == (3, 3)
    assert se2.mask.sum() == 4
    assert_array_equal(se2.mask, [[False, False, False],
                                  [False, True, True],
                                  [False, True, True]])


def test_se_diamond():
    se = se_diamond(3)
    assert se.mask.shape == (3, 3)
    assert se.mask.sum() == 5
    assert_array_equal(se.mask, [[False, True, False],
                                 [True, True, True],
                                 [False, True, False]])
    assert se_diamond(5).mask.sum() == 13


def test_se_disk():
    se = se_disk(5)
    assert se.mask.shape == (5, 5)
    assert se.mask.sum() == 13


def test_se_line():
    se = se_line(5, 0)
    assert se.mask.shape == (1, 5)
    assert se.mask.all()
    assert se_line(5, 90).mask.shape == (5, 1)
    d45 = se_line(7, 45)
    assert d45.mask.shape == (7, 7)
    assert d45.mask.sum() == 7
    assert d45.mask[0, 6] and d45.mask[6, 0] and d45.mask[3, 3]
    even = se_line(10, 0)
    assert even.mask.shape == (1, 11)
    assert even.mask.sum() == 10
    assert not even.mask[0, 0]  # set cells lean one step positive


def test_se_errors():
    with pytest.raises(ValueError):
        se_line(5, 30)
    with pytest.raises(ValueError):
        se_square(0)
    with pytest.raises(ValueError):
        StructuringElement(np.zeros((3, 3), dtype=bool))
    with pytest.raises(ValueError):
        StructuringElement(np.ones((2, 3), dtype=bool))


def test_dilate_erode_constant():
    f = np.full((9, 9), 0.25)
    for se in (se_square(3), se_diamond(5), se_line(5, 45)):
        assert_array_equal(dilate(f, se), np.full_like(erode(f, se), 0.25))
        assert_array_equal(erode(f, se), dilate(f, se))


def test_impulse_responses():
    f = np.full((9, 9), 0.2)
    f[4, 4] = 0.9
    d = dilate(f, se_square(3))
    assert_array_equal(d[2:5, 2:5], np.full((3, 3), 0.9))
    assert d[0, 0] == 0.2
    g = np.full((9, 9), 0.8)
    g[4, 4] = 0.1
    e = erode(g, se_square(3))
    assert_array_equal(e[2:5, 2:5], np.full((3, 3), 0.1))
    assert e[0, 0] == 0.8


def test_se_larger_than_image():
    with pytest.raises(ValueError):
        dilate(np.zeros((3, 3)), se_square(5))


@pytest.mark.parametrize("se", ALL_SES, ids=lambda s: f"{s.mask.shape}x{s.mask.sum()}")
def test_brute_force_equivalence(se):
    rng = np.random.default_rng(42)
    bh, bw = se.mask.shape
    for _ in range(3):
        f = grid_image(rng, bh + rng.integers(4, 9), bw + rng.integers(4, 9))
        assert_array_equal(erode(f, se), brute_erode(f, se))
        assert_array_equal(dilate(f, se), brute_dilate(f, se))


def test_open_close_vs_brute_composition():
    rng = np.random.default_rng(7)
    se = se_diamond(3)
    f = grid_image(rng, 12, 12)
    assert_array_equal(opening(f, se), brute_dilate(brute_erode(f, se), se))
    assert_array_equal(closing(f, se), brute_erode(brute_dilate(f, se), se))


def test_opening_sieves_bright_pixel():
    f = np.full((11, 11), 0.3)
    f[5, 5] = 0.9
    assert_array_equal(opening(f, se_square(3)), np.full((7, 7), 0.3))


def test_top_hat_constant_is_zero():
    f = np.full((11, 11), 0.6)
    assert_array_equal(white_top_hat(f, se_square(3)), np.zeros((7, 7)))
    assert_array_equal(black_top_hat(f, se_square(3)), np.zeros((7, 7)))


def test_white_top_hat_impulse():
    f = np.full((11, 11), 0.3)
    f[5, 5] = 0.9
    wth = white_top_hat(f, se_square(3))
    expected = np.zeros((7, 7))
    expected[3, 3] = 0.9 - 0.3
    assert_array_equal(wth, expected)


def test_top_hat_vs_direct_subtraction():
    rng = np.random.default_rng(9)
    f = grid_image(rng, 12, 12)
    se = se_square(3)
    op = opening(f, se)
    assert_array_equal(white_top_hat(f, se), center_crop(f, *op.shape) - op)
    cl = closing(f, se)
    assert_array_equal(black_top_hat(f, se), cl - center_crop(f, *cl.shape))


@st.composite
def grid_images(draw, min_side=12, max_side=16):
    h = draw(st.integers(min_side, max_side))
    w = draw(st.integers(min_side, max_side))
    levels = draw(st.lists(st.integers(0, 255), min_size=h * w, max_size=h * w))
    return normalize(np.array(levels, dtype=np.float64).reshape(h, w))


@settings(max_examples=25, deadline=None)
@given(grid_images(), st.sampled_from([0, 1, 3, 4]))
def test_ordering_chain(f, se_idx):
    se = ALL_SES[se_idx]
    op, cl = opening(f, se), closing(f, se)
    fc = center_crop(f, *op.shape)
    er = center_crop(erode(f, se), *op.shape)
    di = center_crop(dilate(f, se), *op.shape)
    assert np.all(er <= op)
    assert np.all(op <= fc)
    assert np.all(fc <= cl)
    assert np.all(cl <= di)


@settings(max_examples=20, deadline=None)
@given(grid_images(min_side=18, max_side=20), st.sampled_from([0, 2, 3, 6]))
def test_idempotence_exact(f, se_idx):
    se = ALL_SES[se_idx]
    op = opening(f, se)
    assert_array_equal(opening(op, se), center_crop(op, *opening(op, se).shape))
    cl = closing(f, se)
    assert_array_equal(closing(cl, se), center_crop(cl, *closing(cl, se).shape))


@settings(max_examples=20, deadline=None)
@given(grid_images())
def test_duality_exact(f):
    for se in (se_square(3), se_square(2), se_line(10, 0), se_line(7, 45)):
        assert_array_equal(erode(f, se), 1.0 - dilate(1.0 - f, reflect(se)))


@settings(max_examples=20, deadline=None)
@given(grid_images())
def test_top_hats_nonnegative(f):
    for se in (se_square(3), se_diamond(3)):
        assert np.all(white_top_hat(f, se) >= 0.0)
        assert np.all(black_top_hat(f, se) >= 0.0)
