"""Evaluation metric tests: option extraction, IoU, correlation analysis."""
import json

import numpy as np
import pytest

from pixelground import evalharness as ev
from pixelground.raster import BinaryMask, rle_encode

from . import oracles


def _rle(px):
    return rle_encode(BinaryMask(np.asarray(px, dtype=bool)))


def _block(h, w, y0, y1, x0, x1):
    px = np.zeros((h, w), dtype=bool)
    px[y0:y1, x0:x1] = True
    return rle_encode(BinaryMask(px))


# ------------------------------------------------------------------ extraction

def test_extract_direct_letter():
    assert ev.extract_option("B") == "B"


def test_extract_first_occurrence_wins():
    assert ev.extract_option("The answer is C, not D.") == "C"


def test_extract_no_letter_returns_none():
    assert ev.extract_option("the largest region is water") is None


def test_extract_requires_word_boundary():
    assert ev.extract_option("CAB rides") is None
    assert ev.extract_option("grade: A+") == "A"


# ------------------------------------------------------------------------- IoU

def test_iou_identical_is_one():
    a = _block(8, 8, 0, 4, 0, 4)
    assert ev.mask_iou(a, a) == 1.0


def test_iou_disjoint_is_zero():
    a = _block(8, 8, 0, 4, 0, 4)
    b = _block(8, 8, 4, 8, 4, 8)
    assert ev.mask_iou(a, b) == 0.0


def test_iou_half_overlap_is_one_third():
    a = _block(8, 8, 0, 8, 0, 4)
    b = _block(8, 8, 0, 8, 2, 6)
    assert ev.mask_iou(a, b) == pytest.approx(1.0 / 3.0)


def test_iou_both_empty_is_one():
    a = _rle(np.zeros((4, 4)))
    assert ev.mask_iou(a, a) == 1.0


def test_iou_dimension_mismatch():
    with pytest.raises(ValueError):
        ev.mask_iou(_block(8, 8, 0, 4, 0, 4), _block(8, 9, 0, 4, 0, 4))


def test_grounding_iou_greedy_matching():
    gt = [_block(8, 8, 0, 4, 0, 8), _block(8, 8, 4, 8, 0, 8)]
    pred = [_block(8, 8, 4, 8, 0, 8), _block(8, 8, 0, 4, 0, 8)]
    assert ev.grounding_iou(pred, gt) == 1.0


def test_grounding_iou_unmatched_gt_scores_zero():
    gt = [_block(8, 8, 0, 4, 0, 8), _block(8, 8, 4, 8, 0, 8)]
    pred = [_block(8, 8, 0, 4, 0, 8)]
    assert ev.grounding_iou(pred, gt) == pytest.approx(0.5)


def test_grounding_iou_no_predictions():
    gt = [_block(8, 8, 0, 4, 0, 8)]
    assert ev.grounding_iou([], gt) == 0.0


def test_grounding_iou_order_invariant():
    rng = np.random.default_rng(113)
    gt = [_rle(rng.random((10, 10)) < 0.4) for _ in range(3)]
    pred = [_rle(rng.random((10, 10)) < 0.4) for _ in range(4)]
    base = ev.grounding_iou(pred, gt)
    assert ev.grounding_iou(pred[::-1], gt) == pytest.approx(base)


# ------------------------------------------------------------------ correlation

def _rec(i, correct, iou):
    return ev.EvalRecord(sample_id=f"s{i}", task="coverage", predicted="A",
                         correct=correct, mean_iou=iou)


def test_pearson_matches_covariance_oracle():
    rng = np.random.default_rng(127)
    for _ in range(20):
        n = int(rng.integers(5, 40))
        x = rng.integers(0, 2, size=n).astype(float)
        if len(set(x.tolist())) < 2:
            continue
        y = rng.random(n)
        records = [_rec(i, bool(x[i]), float(y[i])) for i in range(n)]
        _, _, r = ev.iou_correlation(records)
        want = oracles.pearson_covariance(x, y)
        assert abs(r - want) <= 1e-9


def test_perfect_separation_gives_r_one():
    records = ([_rec(i, True, 1.0) for i in range(5)]
               + [_rec(i + 5, False, 0.0) for i in range(5)])
    mc, mi, r = ev.iou_correlation(records)
    assert mc == 1.0 and mi == 0.0
    assert r == pytest.approx(1.0)


def test_constant_column_raises():
    records = [_rec(i, True, 0.5 + 0.01 * i) for i in range(5)]
    with pytest.raises(ev.ConstantColumnError):
        ev.iou_correlation(records)


def test_group_means_fixture_reproduces_targets():
    """Records constructed with group means 0.628 / 0.443 must report exactly
    those group means back."""
    correct_ious = [0.628 - 0.1, 0.628, 0.628 + 0.1]
    incorrect_ious = [0.443 - 0.05, 0.443, 0.443 + 0.05]
    records = ([_rec(i, True, v) for i, v in enumerate(correct_ious)]
               + [_rec(10 + i, False, v) for i, v in enumerate(incorrect_ious)])
    mc, mi, r = ev.iou_correlation(records)
    assert mc == pytest.approx(0.628, abs=1e-12)
    assert mi == pytest.approx(0.443, abs=1e-12)
    assert r > 0  # higher IoU goes with correct answers


def test_macro_accuracy_unweighted():
    records = ([ev.EvalRecord(f"a{i}", "coverage", "A", True, None) for i in range(9)]
               + [ev.EvalRecord("a9", "coverage", "B", False, None)]
               + [ev.EvalRecord("b0", "distance", "A", False, None)])
    per_task, macro, counts = ev.score_answers(records)
    assert per_task["coverage"] == pytest.approx(90.0)
    assert per_task["distance"] == 0.0
    assert macro == pytest.approx(45.0)  # mean of 90 and 0, not sample-weighted
    assert counts == {"coverage": 10, "distance": 1}


# ------------------------------------------------------------------- file level

def test_load_responses_names_bad_line(tmp_path):
    path = tmp_path / "resp.jsonl"
    path.write_text('{"id": "a", "response": "A"}\nnot json\n')
    with pytest.raises(ev.ResponseSchemaError, match="line 2"):
        ev.load_responses(path)


def test_load_responses_requires_id(tmp_path):
    path = tmp_path / "resp.jsonl"
    path.write_text('{"response": "A"}\n')
    with pytest.raises(ev.ResponseSchemaError, match="line 1"):
        ev.load_responses(path)


def test_missing_response_scores_incorrect(tmp_path):
    from pixelground import benchforge as bf
    from pixelground.geoquery import SpatialAnswer

    sample = bf.BenchSample(
        id="q1", task="adjacency", question="q",
        options=(("A", "Yes"), ("B", "No")), answer="A",
        gt_masks=({"role": "target", "image_index": 1,
                   "rle": _block(8, 8, 0, 4, 0, 4).to_json()},),
        images=(), source_answer=SpatialAnswer(kind="adjacency", value=True))
    records, report = ev.evaluate_records([sample], {})
    assert not records[0].correct
    assert records[0].predicted is None
    assert report.macro_accuracy == 0.0
