import numpy as np
import pytest
from scipy.ndimage import gaussian_filter


def numeric_grad(f, x, h=1e-4):
    """Central differences of scalar ``f`` w.r.t. every entry of float64 ``x`` (mutated then restored)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(a, b, floor=1e-7):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def texture(seed, n=96, sigma=2.0):
    t = gaussian_filter(np.random.default_rng(seed).random((n, n)), sigma, mode="wrap")
    return (t - t.min()) / (t.max() - t.min())


def translated_pair(seed, dx, dy, size=64, sigma=2.0):
    """``I2(x, y) = I1(x - dx, y - dy)``: content moves by ``(dx, dy)``, true flow ``(dx, dy)``."""
    t = texture(seed, size + 32, sigma)
    o = 16
    return t[o : o + size, o : o + size], t[o - dy : o - dy + size, o - dx : o - dx + size]




def central(a, frac=0.75):
    h, w = a.shape[:2]
    mh, mw = int(round(h * (1 - frac) / 2)), int(round(w * (1 - frac) / 2))
    return a[mh : h - mh, mw : w - mw]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
