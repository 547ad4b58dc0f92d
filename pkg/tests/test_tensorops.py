import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from funet import tensorops as ops

from conftest import numeric_grad, rel_error


def conv_oracle(x, w, b, pad, stride):
    """Quadruple loop cross-correlation; ``pad`` is (top, left, bottom, right)."""
    t, l, bo, r = pad
    xp = np.pad(x, ((0, 0), (0, 0), (t, bo), (l, r)))
    n, cin, h, wd = xp.shape
    cout, _, kh, kw = w.shape
    ho = (h - kh) // stride + 1
    wo = (wd - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for o in range(cout):
            for y in range(ho):
                for xx in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for p in range(kh):
                            for q in range(kw):
                                acc += xp[i, c, y * stride + p, xx * stride + q] * w[o, c, p, q]
                    out[i, o, y, xx] = acc
    return out


def test_delta_kernel_is_identity(rng):
    x = rng.standard_normal((2, 1, 6, 5))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(ops.conv2d_forward(x, w, np.zeros(1), padding=1), x)


def test_box_kernel_on_constant():
    x = np.full((1, 1, 5, 5), 0.3)
    out = ops.conv2d_forward(x, np.ones((1, 1, 3, 3)), np.zeros(1), padding=0)
    assert out.shape == (1, 1, 3, 3)
    np.testing.assert_allclose(out, 9 * 0.3, rtol=1e-15)


@pytest.mark.parametrize(
    "shape,wshape,pad,stride",
    [
        ((1, 2, 5, 5), (3, 2, 3, 3), (0, 0, 0, 0), 1),
        ((1, 2, 5, 5), (3, 2, 3, 3), (1, 1, 1, 1), 1),
        ((2, 3, 6, 7), (2, 3, 3, 3), (1, 1, 1, 1), 2),
        ((1, 2, 4, 4), (3, 2, 2, 2), (0, 0, 1, 1), 1),
        ((1, 3, 4, 4), (2, 3, 1, 1), (0, 0, 0, 0), 1),
    ],
)
def test_conv_matches_loop_oracle(rng, shape, wshape, pad, stride):
    x = rng.standard_normal(shape)
    w = rng.standard_normal(wshape)
    b = rng.standard_normal(wshape[0])
    got = ops.conv2d_forward(x, w, b, padding=pad, stride=stride)
    want = conv_oracle(x, w, b, pad, stride)
    assert got.shape == want.shape
    assert rel_error(got, want, floor=1e-6).max() < 1e-6


def test_conv_shape_errors(rng):
    with pytest.raises(ValueError, match="channels"):
        ops.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))
    with pytest.raises(ValueError, match="grad_out"):
        ops.conv2d_backward(np.zeros((1, 2, 4, 4)), np.zeros((1, 2, 3, 3)), np.zeros((1, 1, 4, 4)))


@pytest.mark.parametrize("k", [1, 3])
def test_same_padding_preserves_shape(rng, k):
    x = rng.standard_normal((1, 2, 7, 6))
    out = ops.conv2d_forward(x, rng.standard_normal((4, 2, k, k)), np.zeros(4), padding=(k - 1) // 2)
    assert out.shape[2:] == x.shape[2:]


def test_conv_backward_zero_grad(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    g = ops.conv2d_backward(x, w, np.zeros((1, 3, 5, 5)), padding=1)
    assert not g.weight.any() and not g.bias.any() and not g.input.any()


def test_conv_backward_single_pixel_weight_grad(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((1, 2, 3, 3))
    go = np.zeros((1, 1, 3, 3))
    go[0, 0, 1, 2] = 1.0
    g = ops.conv2d_backward(x, w, go, padding=0)
    # only output (1, 2) contributes: d out / d w[c, p, q] = x[c, 1 + p, 2 + q]
    np.testing.assert_array_equal(g.weight[0], x[0, :, 1:4, 2:5])
    assert g.bias[0] == 1.0


@pytest.mark.parametrize("pad,stride,k", [(1, 1, 3), ((0, 0, 1, 1), 1, 2), (1, 2, 3), (0, 1, 1)])
def test_conv_backward_finite_differences(rng, pad, stride, k):
    x = rng.uniform(-1, 1, (2, 2, 5, 6))
    w = rng.uniform(-1, 1, (3, 2, k, k))
    b = rng.uniform(-1, 1, 3)
    out_shape = ops.conv2d_forward(x, w, b, pad, stride).shape
    coef = rng.uniform(-1, 1, out_shape)

    def loss():
        return float((ops.conv2d_forward(x, w, b, pad, stride) * coef).sum())

    g = ops.conv2d_backward(x, w, coef, pad, stride)
    for analytic, value in ((g.weight, w), (g.bias, b), (g.input, x)):
        assert rel_error(analytic, numeric_grad(loss, value)).max() < 1e-3


def test_relu():
    np.testing.assert_array_equal(ops.relu_forward(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])
    np.testing.assert_array_equal(ops.relu_backward(np.array([-1.0, 2.0]), np.array([5.0, 5.0])), [0, 5])
    assert ops.relu_backward(np.array([0.0]), np.array([3.0]))[0] == 0.0


def test_relu_finite_differences(rng):
    x = rng.uniform(-1, 1, (3, 4))
    x[np.abs(x) < 0.05] = 0.5  # stay away from the kink
    coef = rng.uniform(-1, 1, x.shape)
    num = numeric_grad(lambda: float((ops.relu_forward(x) * coef).sum()), x)
    assert rel_error(ops.relu_backward(x, coef), num).max() < 1e-3


def pool_oracle(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for i in range(n):
        for ch in range(c):
            for y in range(h // 2):
                for xx in range(w // 2):
                    out[i, ch, y, xx] = max(x[i, ch, 2 * y + a, 2 * xx + b] for a in (0, 1) for b in (0, 1))
    return out


def test_maxpool_windows():
    x = np.array([[1, 2, 5, 0], [3, 4, 1, 1], [0, 0, 9, 8], [7, 0, 8, 9]], dtype=float)[None, None]
    out, _ = ops.maxpool2x2_forward(x)
    np.testing.assert_array_equal(out[0, 0], [[4, 5], [7, 9]])
    np.testing.assert_array_equal(out, pool_oracle(x))


def test_maxpool_random_vs_oracle(rng):
    x = rng.standard_normal((2, 3, 6, 8))
    np.testing.assert_array_equal(ops.maxpool2x2_forward(x)[0], pool_oracle(x))


def test_maxpool_ties_first_in_row_major():
    x = np.full((1, 1, 2, 2), 0.7)
    out, arg = ops.maxpool2x2_forward(x)
    assert out[0, 0, 0, 0] == 0.7 and arg[0, 0, 0, 0] == 0
    g = ops.maxpool2x2_backward(arg, np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(g[0, 0], [[1, 0], [0, 0]])
    x = np.array([[[[0.0, 3.0], [3.0, 1.0]]]])
    assert ops.maxpool2x2_forward(x)[1][0, 0, 0, 0] == 1


def test_maxpool_odd_rejected():
    with pytest.raises(ValueError, match="even"):
        ops.maxpool2x2_forward(np.zeros((1, 1, 3, 4)))


def test_maxpool_backward_routes_and_conserves(rng):
    x = rng.standard_normal((2, 2, 4, 6))
    out, arg = ops.maxpool2x2_forward(x)
    go = rng.standard_normal(out.shape)
    gi = ops.maxpool2x2_backward(arg, go)
    assert gi.sum() == pytest.approx(go.sum(), abs=1e-12)
    assert np.count_nonzero(gi) == go.size
    num = numeric_grad(lambda: float((ops.maxpool2x2_forward(x)[0] * go).sum()), x)
    assert rel_error(gi, num).max() < 1e-3


def test_upsample():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])[None, None]
    want = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
    np.testing.assert_array_equal(ops.upsample2x_nearest(x)[0, 0], want)
    np.testing.assert_array_equal(ops.upsample2x_backward(np.ones((1, 1, 4, 4))), np.full((1, 1, 2, 2), 4.0))


def test_upsample_finite_differences(rng):
    x = rng.uniform(-1, 1, (1, 2, 3, 2))
    coef = rng.uniform(-1, 1, (1, 2, 6, 4))
    num = numeric_grad(lambda: float((ops.upsample2x_nearest(x) * coef).sum()), x)
    assert rel_error(ops.upsample2x_backward(coef), num).max() < 1e-3


def test_concat_and_split(rng):
    a = rng.random((1, 1, 3, 3))
    b = rng.random((1, 3, 3, 3))
    c = ops.concat_channels(a, b)
    assert c.shape == (1, 4, 3, 3)
    np.testing.assert_array_equal(c[:, :1], a)
    np.testing.assert_array_equal(c[:, 1:], b)
    ra, rb = ops.split_channels(c, 1)
    np.testing.assert_array_equal(ra, a)
    np.testing.assert_array_equal(rb, b)
    np.testing.assert_array_equal(ops.concat_channels(a, np.zeros((1, 0, 3, 3))), a)
    with pytest.raises(ValueError):
        ops.concat_channels(a, np.zeros((1, 1, 2, 3)))


def test_sigmoid_values():
    assert ops.sigmoid(np.array(0.0)) == 0.5
    hi, lo = ops.sigmoid(np.array([50.0, -50.0]))
    assert np.isfinite(hi) and hi <= 1.0 and np.isfinite(lo) and lo > 0.0
    mpmath.mp.dps = 30
    want = float(1 / (1 + mpmath.exp(-1)))
    assert ops.sigmoid(np.array([1.0]))[0] == pytest.approx(want, abs=1e-15)
    assert want == pytest.approx(0.7310585786, abs=1e-10)
    with np.errstate(over="raise"):
        ops.sigmoid(np.array([-1000.0, 1000.0]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-700, 700)))
def test_sigmoid_open_interval_and_monotone(x):
    s = ops.sigmoid(x)
    assert np.all((s >= 0) & (s <= 1)) and np.all(np.isfinite(s))
    order = np.argsort(x, kind="stable")
    assert np.all(np.diff(s[order]) >= 0)


def test_ops_are_deterministic(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    a = ops.conv2d_forward(x, w, np.zeros(4), 1)
    b = ops.conv2d_forward(x.copy(), w.copy(), np.zeros(4), 1)
    assert a.tobytes() == b.tobytes()
