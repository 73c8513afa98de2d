"""Text-guided optical/SAR relevance scoring and per-token modality selection.

Relevance of each visual token to the question is a scaled dot-product
attention score, softmax-normalized over the visual tokens for each text
token and then averaged across text tokens. During fusion every selected
token takes its features from whichever modality scored higher, with ties
going to SAR.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FeatureSequence, TokenFeatures, TokenSelection

OPTICAL = "optical"
SAR = "sar"


@dataclass(frozen=True)
class TextEmbeddings:
    """Per-text-token embedding vectors (L x D), D matching the visual dim."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValueError(f"text embeddings must be (L, D) with L >= 1, got {rows.shape}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def length(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class RelevanceField:
    """Per-visual-token relevance scores for one modality; sums to 1."""

    modality: str
    beta: np.ndarray  # float64, length N


@dataclass(frozen=True)
class ModalityAssignment:
    """Per-selected-token modality choice, aligned with one TokenSelection."""

    selection: TokenSelection
    choices: tuple[str, ...]  # OPTICAL or SAR, one per selection index

    def __post_init__(self):
        if len(self.choices) != len(self.selection):
            raise ValueError("one choice per selected token required")


def relevance_scores(v: TokenFeatures, q: TextEmbeddings, modality: str = OPTICAL) -> RelevanceField:
    """Aggregate scaled dot-product attention of the question over the visual
    tokens: softmax over the token axis per text token, averaged over text
    tokens. The result sums to 1 across tokens."""
    if v.dim != q.dim:
        raise ValueError(f"feature dim {v.dim} != text embedding dim {q.dim}")
    logits = (v.rows @ q.rows.T) / np.sqrt(v.dim)  # (N, L)
    logits = logits - logits.max(axis=0, keepdims=True)
    expd = np.exp(logits)
    attn = expd / expd.sum(axis=0, keepdims=True)  # softmax over tokens j, per text token
    beta = attn.mean(axis=1)
    return RelevanceField(modality=modality, beta=beta)


def select_modality(beta_opt: RelevanceField, beta_sar: RelevanceField,
                    sel: TokenSelection) -> ModalityAssignment:
    """Pick optical where it strictly wins; ties and losses go to SAR."""
    if beta_opt.beta.shape != beta_sar.beta.shape:
        raise ValueError("relevance fields must cover the same token count")
    n = beta_opt.beta.shape[0]
    if sel.indices and max(sel.indices) >= n:
        raise IndexError(f"selection index out of range for {n} tokens")
    choices = tuple(
        OPTICAL if beta_opt.beta[j] > beta_sar.beta[j] else SAR
        for j in sel.indices
    )
    return ModalityAssignment(selection=sel, choices=choices)


def fuse_features(assign: ModalityAssignment, v_opt: TokenFeatures,
                  v_sar: TokenFeatures, sel: TokenSelection) -> FeatureSequence:
    """Gather each selected token's features from its assigned modality."""
    if v_opt.rows.shape != v_sar.rows.shape:
        raise ValueError("optical and SAR features must share count and dim")
    if assign.selection.indices != sel.indices:
        raise ValueError("assignment was computed for a different selection")
    rows = np.empty((len(sel), v_opt.dim), dtype=np.float64)
    for pos, (j, choice) in enumerate(zip(sel.indices, assign.choices)):
        source = v_opt if choice == OPTICAL else v_sar
        rows[pos] = source.rows[j]
    return FeatureSequence(rows=rows)
