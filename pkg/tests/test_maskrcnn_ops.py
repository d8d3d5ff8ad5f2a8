import math

import numpy as np
import pytest

from boneage.autograd import Tensor, gradcheck
from boneage.autograd import functional as F
from boneage.maskrcnn_ops import (
    DetectionTarget,
    RoiBox,
    box_loss,
    cls_loss,
    composite_loss,
    mask_loss,
    roi_align,
)


def bilinear_at(feat, y, x):
    """Brute-force clamped bilinear lookup on a [H, W] map."""
    H, W = feat.shape
    y = min(max(y, 0.0), H - 1)
    x = min(max(x, 0.0), W - 1)
    y0, x0 = int(math.floor(y)), int(math.floor(x))
    y1, x1 = min(y0 + 1, H - 1), min(x0 + 1, W - 1)
    ly, lx = y - y0, x - x0
    return ((1 - ly) * (1 - lx) * feat[y0, x0] + (1 - ly) * lx * feat[y0, x1]
            + ly * (1 - lx) * feat[y1, x0] + ly * lx * feat[y1, x1])


def roi_align_oracle(feat, box, out_h, out_w, s):
    C = feat.shape[0]
    out = np.zeros((C, out_h, out_w))
    bh = (box.y2 - box.y1) / out_h
    bw = (box.x2 - box.x1) / out_w
    for c in range(C):
        for i in range(out_h):
            for j in range(out_w):
                acc = 0.0
                for a in range(s):
                    for b in range(s):
                        y = box.y1 + i * bh + (a + 0.5) * bh / s
                        x = box.x1 + j * bw + (b + 0.5) * bw / s
                        acc += bilinear_at(feat[c], y, x)
                out[c, i, j] = acc / (s * s)
    return out


def random_box(rng, H, W):
    x1, x2 = sorted(rng.uniform(-1.0, W, size=2))
    y1, y2 = sorted(rng.uniform(-1.0, H, size=2))
    return RoiBox(x1, y1, x2, y2)


def test_roi_align_center_of_full_map():
    feat = Tensor([[[1.0, 2.0], [3.0, 4.0]]])
    out = roi_align(feat, RoiBox(0, 0, 1, 1), 1, 1, samples_per_bin=1)
    assert out.data.item() == pytest.approx(2.5)


def test_roi_align_single_cell_on_pixel():
    feat = np.random.default_rng(0).normal(size=(2, 5, 5))
    out = roi_align(Tensor(feat), RoiBox(1.5, 2.5, 2.5, 3.5), 1, 1, samples_per_bin=1)
    np.testing.assert_allclose(out.data[:, 0, 0], feat[:, 3, 2], rtol=1e-6)


def test_roi_align_degenerate_box_samples_collapsed_point():
    feat = np.random.default_rng(1).normal(size=(1, 4, 4))
    out = roi_align(Tensor(feat, dtype=np.float64), RoiBox(1.25, 2.0, 1.25, 2.0), 2, 3)
    np.testing.assert_allclose(out.data, bilinear_at(feat[0], 2.0, 1.25))


def test_roi_align_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(40):
        feat = rng.normal(size=(2, 5, 5))
        box = random_box(rng, 5, 5)
        oh, ow, s = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
        out = roi_align(Tensor(feat, dtype=np.float64), box, oh, ow, s).data
        np.testing.assert_allclose(out, roi_align_oracle(feat, box, oh, ow, s), atol=1e-6)


def test_roi_align_ignores_far_pixels():
    rng = np.random.default_rng(3)
    feat = rng.normal(size=(1, 9, 9))
    box = RoiBox(3.2, 3.6, 5.1, 4.9)
    base = roi_align(Tensor(feat, dtype=np.float64), box, 2, 2).data
    yy, xx = np.mgrid[0:9, 0:9]
    far = (yy <= 3.6 - 2) | (yy >= 4.9 + 2) | (xx <= 3.2 - 2) | (xx >= 5.1 + 2)
    perturbed = feat.copy()
    perturbed[0][far] += rng.normal(size=far.sum()) * 10
    np.testing.assert_array_equal(roi_align(Tensor(perturbed, dtype=np.float64), box, 2, 2).data, base)


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-3), (np.float64, 1e-6)])
def test_roi_align_gradcheck(dtype, tol):
    rng = np.random.default_rng(4)
    feat = Tensor(rng.normal(size=(2, 5, 5)), requires_grad=True, dtype=dtype)
    box = RoiBox(0.7, 1.1, 3.9, 4.2)
    g = Tensor(rng.normal(size=(2, 3, 2)), dtype=dtype)
    assert gradcheck(lambda: F.reduce_sum(F.hadamard(roi_align(feat, box, 3, 2), g)), [feat]) < tol


def test_roi_box_validation():
    with pytest.raises(ValueError):
        RoiBox(2, 0, 1, 1)
    with pytest.raises(ValueError):
        roi_align(Tensor(np.ones((1, 3, 3))), RoiBox(0, 0, 1, 1), 1, 1, samples_per_bin=0)


def test_cls_loss_examples():
    assert cls_loss(Tensor([0.0, 0.0]), 0).data.item() == pytest.approx(math.log(2), abs=1e-6)
    assert cls_loss(Tensor([100.0, 0.0]), 0).data.item() == pytest.approx(0.0, abs=1e-6)
    assert cls_loss(Tensor([1.0, 2.0, 3.0], dtype=np.float64), 2).data.item() == pytest.approx(0.40761, abs=1e-5)
    assert cls_loss(Tensor([20.0, -20.0, -20.0], dtype=np.float64), 0).data.item() < 1e-6
    with pytest.raises(ValueError):
        cls_loss(Tensor([0.0, 0.0]), 2)


def test_box_loss_examples():
    zero = np.zeros(4)
    assert box_loss(Tensor(zero), zero).data.item() == 0.0
    assert box_loss(Tensor([0.5, 0, 0, 0]), zero).data.item() == pytest.approx(0.03125)
    assert box_loss(Tensor([2.0, 0, 0, 0]), zero).data.item() == pytest.approx(0.375)


def test_mask_loss_examples():
    target = np.random.default_rng(5).random((3, 4)) > 0.5
    assert mask_loss(Tensor(np.zeros((3, 4))), target).data.item() == pytest.approx(math.log(2), abs=1e-6)
    logits = np.where(target, 20.0, -20.0)
    assert mask_loss(Tensor(logits, dtype=np.float64), target).data.item() < 1e-6
    val = mask_loss(Tensor([[0.0, 0.0]]), np.array([[True, False]])).data.item()
    assert val == pytest.approx(math.log(2), abs=1e-6)
    with pytest.raises(ValueError):
        mask_loss(Tensor(np.zeros((2, 2))), np.zeros((2, 3), bool))


def test_losses_nonnegative_on_random_inputs():
    rng = np.random.default_rng(6)
    for _ in range(50):
        k = rng.integers(2, 6)
        assert cls_loss(Tensor(rng.normal(size=k) * 5), rng.integers(0, k)).data >= 0
        assert box_loss(Tensor(rng.normal(size=4) * 3), rng.normal(size=4)).data >= 0
        assert mask_loss(Tensor(rng.normal(size=(3, 3)) * 5), rng.random((3, 3)) > 0.5).data >= 0


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-3), (np.float64, 1e-6)])
def test_loss_gradchecks(dtype, tol):
    rng = np.random.default_rng(7)
    logits = Tensor(rng.normal(size=5), requires_grad=True, dtype=dtype)
    assert gradcheck(lambda: cls_loss(logits, 3), [logits]) < tol
    # keep deltas away from the |d| = 1 kink
    deltas = Tensor([0.3, -0.6, 1.8, -2.4], requires_grad=True, dtype=dtype)
    assert gradcheck(lambda: box_loss(deltas, np.zeros(4)), [deltas]) < tol
    mlog = Tensor(rng.normal(size=(3, 3)), requires_grad=True, dtype=dtype)
    tgt = rng.random((3, 3)) > 0.5
    assert gradcheck(lambda: mask_loss(mlog, tgt), [mlog]) < tol


def test_composite_examples():
    assert composite_loss(0, 0, 0, 0).data.item() == 0.0
    assert composite_loss(1, 2, 3, 4).data.item() == 10.0


def test_composite_gradient_equals_each_term_gradient():
    rng = np.random.default_rng(8)
    logits = Tensor(rng.normal(size=3), requires_grad=True, dtype=np.float64)
    deltas = Tensor(rng.normal(size=4) * 0.5, requires_grad=True, dtype=np.float64)
    mlog = Tensor(rng.normal(size=(2, 2)), requires_grad=True, dtype=np.float64)
    pred = Tensor(rng.normal(size=(3, 1)), requires_grad=True, dtype=np.float64)
    truth = Tensor(rng.normal(size=(3, 1)), dtype=np.float64)
    tgt = rng.random((2, 2)) > 0.5

    def total():
        reg = F.reduce_mean(F.absolute(F.sub(pred, truth)))
        return composite_loss(cls_loss(logits, 1), box_loss(deltas, np.zeros(4)), mask_loss(mlog, tgt), reg)

    total().backward()
    joint = [t.grad.copy() for t in (logits, deltas, mlog, pred)]
    singles = [
        lambda: cls_loss(logits, 1),
        lambda: box_loss(deltas, np.zeros(4)),
        lambda: mask_loss(mlog, tgt),
        lambda: F.reduce_mean(F.absolute(F.sub(pred, truth))),
    ]
    for t, f, g in zip((logits, deltas, mlog, pred), singles, joint):
        t.grad = None
        f().backward()
        np.testing.assert_allclose(g, t.grad, rtol=1e-12)
    assert gradcheck(total, [logits, deltas, mlog, pred]) < 1e-6


def test_composite_coefficients_are_one():
    base = composite_loss(1.0, 2.0, 3.0, 4.0).data.item()
    for i in range(4):
        args = [1.0, 2.0, 3.0, 4.0]
        args[i] += 0.25
        assert composite_loss(*args).data.item() - base == pytest.approx(0.25)


def test_detection_target_resolution():
    t = DetectionTarget(1, RoiBox(0, 0, 4, 4), np.zeros((14, 14), bool))
    t.check_resolution(14)
    with pytest.raises(ValueError):
        t.check_resolution(28)
