import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from funet.motionmask import MaskParams, align_sequence, fuse, normalize_magnitudes, split_fused, threshold_mask


@pytest.mark.parametrize("v,want", [(0.5, 1), (0.4, 1), (0.39, 0)])
def test_threshold_examples(v, want):
    assert threshold_mask(np.array([[v]]), 0.4)[0, 0] == want


def test_threshold_rejects_negative_alpha():
    with pytest.raises(ValueError):
        threshold_mask(np.zeros((2, 2)), -0.1)
    with pytest.raises(ValueError):
        MaskParams(alpha=-1)


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (4, 5), elements=st.floats(0, 10)),
    st.floats(0, 10),
    st.floats(0, 10),
)
def test_threshold_monotone_in_alpha(mag, a, b):
    lo, hi = sorted((a, b))
    assert np.all(threshold_mask(mag, hi) <= threshold_mask(mag, lo))


def test_align_examples():
    a, b = np.zeros((2, 2)), np.ones((2, 2))
    out = align_sequence([a, b], 3)
    assert out[0] is a and out[1] is a and out[2] is b
    assert align_sequence([a], 2) == [a, a]
    with pytest.raises(ValueError):
        align_sequence([a, b, a], 5)
    with pytest.raises(ValueError):
        align_sequence([], 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30))
def test_align_counts(n):
    masks = [np.full((1, 1), k) for k in range(n - 1)]
    out = align_sequence(masks, n)
    assert len(out) == n
    assert out[0] is out[1]
    assert [m[0, 0] for m in out] == [0] + list(range(n - 1))


def test_fuse():
    frame = np.random.default_rng(0).random((4, 6, 3))
    x = fuse(frame, np.zeros((4, 6), np.uint8))
    assert x.shape == (4, 4, 6)
    np.testing.assert_array_equal(x[:3].transpose(1, 2, 0), frame)
    assert not x[3].any()
    y = fuse(np.zeros((2, 2, 3)), np.ones((2, 2), np.uint8))
    np.testing.assert_array_equal(y[:, 0, 0], [0, 0, 0, 1])
    with pytest.raises(ValueError):
        fuse(frame, np.zeros((3, 6)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 5, 3), elements=st.floats(0, 1)), arrays(np.uint8, (3, 5), elements=st.integers(0, 1)))
def test_fuse_split_identity(frame, mask):
    f, m = split_fused(fuse(frame, mask))
    np.testing.assert_array_equal(f, frame)
    np.testing.assert_array_equal(m, mask)
    assert set(np.unique(fuse(frame, mask)[3])) <= {0.0, 1.0}


def test_normalize():
    out = normalize_magnitudes([np.array([1.0, 2.0]), np.array([4.0])])
    np.testing.assert_array_equal(out[0], [0.25, 0.5])
    assert normalize_magnitudes([np.zeros(2)])[0].sum() == 0
