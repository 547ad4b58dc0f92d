import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from funet.evaluation import EvalReport, compare_dirs, dice, overlay
from funet.imageio import save_mask

masks = arrays(np.uint8, (5, 6), elements=st.integers(0, 1))


def test_dice_cases():
    a = np.zeros((4, 4), np.uint8)
    a[0, :] = 1
    assert dice(a, a) == 1.0
    b = np.zeros((4, 4), np.uint8)
    b[3, :] = 1
    assert dice(a, b) == 0.0
    c = np.zeros((4, 4), np.uint8)
    c[0, 2:] = 1
    c[1, :2] = 1
    assert dice(a, c) == 0.5
    empty = np.zeros((4, 4), np.uint8)
    assert dice(empty, empty) == 1.0
    assert dice(empty, a) == 0.0


def test_dice_errors():
    with pytest.raises(ValueError):
        dice(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        dice(np.full((2, 2), 2), np.zeros((2, 2)))


@settings(max_examples=60, deadline=None)
@given(masks, masks)
def test_dice_symmetric_and_bounded(a, b):
    d = dice(a, b)
    assert d == dice(b, a)
    assert 0.0 <= d <= 1.0
    assert dice(a, a) == 1.0


def test_report_mean(rng):
    scores = list(rng.random(17))
    r = EvalReport.from_scores(scores, 0.5)
    assert abs(r.mean_dice - sum(scores) / len(scores)) < 1e-12
    assert r.frame_count == 17


def test_compare_dirs(tmp_path, rng):
    gt, pred = tmp_path / "gt", tmp_path / "pred"
    gt.mkdir()
    pred.mkdir()
    for k in range(4):
        m = (rng.random((8, 8)) > 0.5).astype(np.uint8)
        save_mask(m, gt / f"frame_{k:06d}.png")
        save_mask(m, pred / f"frame_{k:06d}.png")
    rep = compare_dirs(pred, gt)
    assert rep.per_frame == [1.0] * 4 and rep.mean_dice == 1.0
    for k in range(4):
        save_mask(np.zeros((8, 8), np.uint8), pred / f"frame_{k:06d}.png")
    assert compare_dirs(pred, gt).mean_dice == 0.0
    rep.save(tmp_path / "r.json")
    assert set(json.loads((tmp_path / "r.json").read_text())) == {"per_frame", "mean_dice", "frame_count", "threshold"}
    save_mask(np.zeros((8, 8), np.uint8), pred / "frame_000009.png")
    with pytest.raises(ValueError, match="ground-truth"):
        compare_dirs(pred, gt)


def test_overlay():
    f = np.full((2, 2, 3), 0.2)
    m = np.array([[1, 0], [0, 0]])
    out = overlay(f, m)
    np.testing.assert_allclose(out[0, 0], [0.6, 0.1, 0.1])
    np.testing.assert_array_equal(out[1, 1], f[1, 1])
