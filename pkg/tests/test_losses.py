"""Loss value and analytic-gradient tests via finite differences."""
import numpy as np
import pytest

from pixelground.losses import (DEFAULT_LAMBDA_SEG, LossBreakdown, ProbMask,
                                dice_loss, lm_loss, pixel_ce, total_loss)
from pixelground.raster import BinaryMask

from . import oracles


def _rand_case(rng, h=16, w=16):
    probs = rng.uniform(0.05, 0.95, size=(h, w))
    gt = BinaryMask(rng.random((h, w)) < 0.5)
    return ProbMask(probs=probs), gt


# ------------------------------------------------------------------------ dice

def test_dice_perfect_prediction_near_zero():
    gt = BinaryMask.full(8, 8)
    loss, _ = dice_loss(ProbMask(probs=np.ones((8, 8))), gt)
    # smoothing keeps it from being exactly 0 but it must be tiny
    assert 0.0 <= loss < 1e-5


def test_dice_value_closed_form():
    # p = 0.5 everywhere, g = half foreground on a 4x4 grid
    probs = np.full((4, 4), 0.5)
    px = np.zeros((4, 4), dtype=bool)
    px[:2] = True
    loss, _ = dice_loss(ProbMask(probs=probs), BinaryMask(px))
    num = 2 * (0.5 * 8) + 1.0
    den = 8.0 + 8.0 + 1.0
    assert loss == pytest.approx(1 - num / den, abs=1e-12)


def test_dice_worst_case_approaches_one():
    gt = BinaryMask.full(16, 16)
    loss, _ = dice_loss(ProbMask(probs=np.zeros((16, 16))), gt)
    assert loss > 0.99


def test_dice_gradient_matches_finite_differences():
    rng = np.random.default_rng(131)
    for _ in range(25):
        pred, gt = _rand_case(rng)
        _, grad = dice_loss(pred, gt)

        def f(p):
            return dice_loss(ProbMask(probs=p), gt)[0]

        want = oracles.central_difference(f, np.asarray(pred.probs), step=1e-5)
        denom = np.maximum(np.abs(want), 1e-8)
        assert np.max(np.abs(grad - want) / denom) <= 1e-4


# -------------------------------------------------------------------------- ce

def test_ce_uniform_half_is_ln2():
    probs = np.full((8, 8), 0.5)
    px = np.zeros((8, 8), dtype=bool)
    px[::2] = True
    loss, _ = pixel_ce(ProbMask(probs=probs), BinaryMask(px))
    assert abs(loss - np.log(2.0)) <= 1e-9


def test_ce_clamps_extreme_probabilities():
    gt = BinaryMask.full(4, 4)
    loss, _ = pixel_ce(ProbMask(probs=np.zeros((4, 4))), gt)
    assert np.isfinite(loss)
    assert loss == pytest.approx(-np.log(1e-7), rel=1e-6)


def test_ce_gradient_matches_finite_differences():
    rng = np.random.default_rng(137)
    for _ in range(25):
        pred, gt = _rand_case(rng)
        _, grad = pixel_ce(pred, gt)

        def f(p):
            return pixel_ce(ProbMask(probs=p), gt)[0]

        want = oracles.central_difference(f, np.asarray(pred.probs), step=1e-5)
        denom = np.maximum(np.abs(want), 1e-8)
        assert np.max(np.abs(grad - want) / denom) <= 1e-4


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        dice_loss(ProbMask(probs=np.zeros((3, 3))), BinaryMask.empty(4, 4))


# -------------------------------------------------------------------------- lm

def test_lm_uniform_logits_is_log_vocab():
    logits = np.zeros((6, 11))
    loss = lm_loss(logits, targets=[0, 1, 2, 3, 4, 5])
    assert abs(loss - np.log(11.0)) <= 1e-12


def test_lm_excluded_positions_do_not_count():
    rng = np.random.default_rng(139)
    logits = rng.standard_normal((5, 7))
    targets = [1, 2, 3, 4, 5]
    # corrupting an excluded position must not change the loss
    base = lm_loss(logits, targets, exclude=[2])
    corrupted = logits.copy()
    corrupted[2] = 1e6
    assert lm_loss(corrupted, targets, exclude=[2]) == pytest.approx(base)
    assert lm_loss(logits, targets) != pytest.approx(base)


def test_lm_all_excluded_raises():
    with pytest.raises(ValueError):
        lm_loss(np.zeros((2, 3)), [0, 1], exclude=[0, 1])


def test_lm_exclude_out_of_range():
    with pytest.raises(ValueError):
        lm_loss(np.zeros((2, 3)), [0, 1], exclude=[5])


# ----------------------------------------------------------------------- total

def test_total_uses_half_lambda_by_default():
    assert DEFAULT_LAMBDA_SEG == 0.5
    breakdown = total_loss(lm=1.0, dice=0.4, ce=0.6)
    assert isinstance(breakdown, LossBreakdown)
    assert breakdown.total == pytest.approx(1.0 + 0.5 * (0.4 + 0.6))


def test_total_custom_lambda():
    breakdown = total_loss(lm=2.0, dice=1.0, ce=1.0, lambda_seg=0.25)
    assert breakdown.total == pytest.approx(2.5)


def test_total_rejects_negative_components():
    with pytest.raises(ValueError):
        total_loss(lm=-0.1, dice=0.0, ce=0.0)
