"""Relevance scoring and optical/SAR selection tests."""
import numpy as np
import pytest

from pixelground.grid import TokenFeatures, TokenSelection
from pixelground.modality import (OPTICAL, SAR, RelevanceField, TextEmbeddings,
                                  fuse_features, relevance_scores,
                                  select_modality)

from . import oracles


def _features(rng, n, d):
    return TokenFeatures(rows=rng.standard_normal((n, d)))


def test_beta_sums_to_one():
    rng = np.random.default_rng(61)
    v = _features(rng, 40, 8)
    q = TextEmbeddings(rows=rng.standard_normal((5, 8)))
    beta = relevance_scores(v, q).beta
    assert abs(beta.sum() - 1.0) <= 1e-9
    assert (beta > 0).all()


def test_single_text_token_is_plain_softmax():
    rng = np.random.default_rng(67)
    v = _features(rng, 10, 4)
    q = TextEmbeddings(rows=rng.standard_normal((1, 4)))
    logits = (v.rows @ q.rows[0]) / 2.0
    want = np.exp(logits - logits.max())
    want /= want.sum()
    got = relevance_scores(v, q).beta
    assert np.max(np.abs(got - want)) <= 1e-12


def test_identical_features_give_uniform_beta():
    v = TokenFeatures(rows=np.ones((8, 3)))
    q = TextEmbeddings(rows=np.array([[1.0, -2.0, 0.5], [0.0, 1.0, 1.0]]))
    beta = relevance_scores(v, q).beta
    assert np.allclose(beta, 1.0 / 8)


def test_matches_double_loop_oracle():
    rng = np.random.default_rng(71)
    for _ in range(50):
        n = int(rng.integers(2, 257))
        l = int(rng.integers(1, 17))
        d = int(rng.integers(1, 65))
        v = _features(rng, n, d)
        q = TextEmbeddings(rows=rng.standard_normal((l, d)))
        got = relevance_scores(v, q).beta
        want = oracles.naive_relevance(v.rows, q.rows)
        assert np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-300)) <= 1e-9


def test_token_permutation_equivariance():
    rng = np.random.default_rng(73)
    v = _features(rng, 20, 6)
    q = TextEmbeddings(rows=rng.standard_normal((3, 6)))
    perm = rng.permutation(20)
    beta = relevance_scores(v, q).beta
    beta_p = relevance_scores(TokenFeatures(rows=v.rows[perm]), q).beta
    assert np.max(np.abs(beta_p - beta[perm])) <= 1e-12


def test_dim_mismatch_rejected():
    with pytest.raises(ValueError):
        relevance_scores(TokenFeatures(rows=np.zeros((4, 3))),
                         TextEmbeddings(rows=np.zeros((2, 5))))


# -------------------------------------------------------------------- selection

def _field(modality, beta):
    return RelevanceField(modality=modality, beta=np.asarray(beta, dtype=float))


def test_strictly_greater_optical_wins():
    sel = TokenSelection((0, 1, 2))
    assign = select_modality(_field(OPTICAL, [0.5, 0.2, 0.3]),
                             _field(SAR, [0.1, 0.6, 0.3]), sel)
    assert assign.choices == (OPTICAL, SAR, SAR)


def test_all_ties_select_sar_everywhere():
    beta = np.full(16, 1.0 / 16)
    sel = TokenSelection(tuple(range(16)))
    assign = select_modality(_field(OPTICAL, beta), _field(SAR, beta.copy()), sel)
    assert all(c == SAR for c in assign.choices)


def test_selection_out_of_range():
    with pytest.raises(IndexError):
        select_modality(_field(OPTICAL, [0.5, 0.5]), _field(SAR, [0.5, 0.5]),
                        TokenSelection((5,)))


def test_fuse_picks_rows_from_assigned_modality():
    rng = np.random.default_rng(79)
    v_opt = _features(rng, 6, 3)
    v_sar = _features(rng, 6, 3)
    sel = TokenSelection((0, 2, 5))
    assign = select_modality(_field(OPTICAL, [1, 0, 1, 0, 0, 0]),
                             _field(SAR, [0, 1, 0, 1, 1, 1]), sel)
    seq = fuse_features(assign, v_opt, v_sar, sel)
    assert np.array_equal(seq.rows[0], v_opt.rows[0])
    assert np.array_equal(seq.rows[1], v_opt.rows[2])
    assert np.array_equal(seq.rows[2], v_sar.rows[5])


def test_fuse_all_sar_equals_sar_gather():
    rng = np.random.default_rng(83)
    v_opt = _features(rng, 8, 4)
    v_sar = _features(rng, 8, 4)
    sel = TokenSelection((1, 3, 6))
    beta = np.full(8, 0.125)
    assign = select_modality(_field(OPTICAL, beta), _field(SAR, beta.copy()), sel)
    seq = fuse_features(assign, v_opt, v_sar, sel)
    assert np.array_equal(seq.rows, v_sar.rows[[1, 3, 6]])


def test_fuse_rejects_foreign_selection():
    rng = np.random.default_rng(89)
    v = _features(rng, 4, 2)
    sel_a = TokenSelection((0, 1))
    sel_b = TokenSelection((2, 3))
    assign = select_modality(_field(OPTICAL, [1, 1, 0, 0]),
                             _field(SAR, [0, 0, 1, 1]), sel_a)
    with pytest.raises(ValueError):
        fuse_features(assign, v, v, sel_b)
