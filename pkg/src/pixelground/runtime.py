"""Interleaved inference loop: autoregressive text generation with
[SEG]-triggered mask decoding and masked-feature injection.

The loop runs over pluggable generator / mask-decoder / feature-provider
interfaces. Scripted implementations stand in for the real models so every
trace is deterministic and replayable.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Protocol, runtime_checkable

import numpy as np

from . import modality as mod
from .grid import (FeatureSequence, PatchLayout, TokenFeatures, TokenSelection,
                   downsample_mask, extract_features, spatial_uniform_sample)
from .raster import BinaryMask, RleMask, rle_decode, rle_encode

SEG_TOKEN = "[SEG]"
EOS_TOKEN = "<eos>"
THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"

SYSTEM_PREAMBLE = (
    "A conversation between User and Assistant. The user asks a question, "
    "and the Assistant solves it. The Assistant first thinks about the "
    "reasoning process in their mind, generating segmentation masks when "
    "needed using [SEG] tokens, and then provides the user a concise final "
    "answer in a short word or phrase. The reasoning process and answer are "
    "enclosed within <think> </think> and <answer> </answer> tags, "
    "respectively, i.e., <think> reasoning process with [SEG] for "
    "segmentation </think><answer> answer here </answer>."
)

_TEMPORAL_RE = re.compile(r"Image:\s*t(\d+)")
_ANSWER_RE = re.compile(re.escape(ANSWER_OPEN) + r"(.*?)" + re.escape(ANSWER_CLOSE), re.DOTALL)


class TemporalIndexError(ValueError):
    """A temporal indicator referenced an image beyond the available set."""


class DecoderMismatchError(ValueError):
    """Mask decoder output dimensions disagree with the target image."""


@dataclass(frozen=True)
class GenerationConfig:
    max_tokens: int = 512
    token_cap: int = 128      # cap on injected visual tokens per [SEG]
    seg_token: str = SEG_TOKEN
    think_open: str = THINK_OPEN
    think_close: str = THINK_CLOSE
    answer_open: str = ANSWER_OPEN
    answer_close: str = ANSWER_CLOSE

    def __post_init__(self):
        if self.max_tokens < 1 or self.token_cap < 1:
            raise ValueError("max_tokens and token_cap must be >= 1")


@runtime_checkable
class TextGenerator(Protocol):
    eos_token: str

    def step(self, context: list[dict]) -> tuple[str, Optional[object]]:
        """Produce the next token given the full context. Returns the token
        and, for [SEG] tokens, an opaque prompt state for the mask decoder."""
        ...


@runtime_checkable
class MaskDecoderIface(Protocol):
    def decode(self, seg_prompt_state: object, image_index: int) -> BinaryMask:
        ...


@runtime_checkable
class FeatureProvider(Protocol):
    @property
    def image_count(self) -> int: ...

    def layout(self, image_index: int) -> PatchLayout: ...

    def features(self, image_index: int, modality: str) -> TokenFeatures: ...

    def modalities(self, image_index: int) -> tuple[str, ...]: ...

    def text_embeddings(self) -> Optional[mod.TextEmbeddings]: ...


# ---------------------------------------------------------------------------
# Trace events

@dataclass(frozen=True)
class TextEvent:
    token: str

    def to_json(self) -> dict:
        return {"type": "text", "token": self.token}


@dataclass(frozen=True)
class SegEvent:
    step: int
    image_index: int
    mask: RleMask
    selection: TokenSelection
    modality_flags: Optional[tuple[str, ...]]

    def to_json(self) -> dict:
        return {
            "type": "seg",
            "step": self.step,
            "image_index": self.image_index,
            "mask": self.mask.to_json(),
            "selection": self.selection.to_json(),
            "modality": list(self.modality_flags) if self.modality_flags is not None else None,
        }


@dataclass(frozen=True)
class InjectEvent:
    count: int
    rows: np.ndarray

    def to_json(self) -> dict:
        return {"type": "inject", "count": self.count, "rows": self.rows.tolist()}


@dataclass(frozen=True)
class ReasoningTrace:
    events: tuple
    answer: str
    flags: tuple[str, ...] = ()

    def seg_events(self) -> list[SegEvent]:
        return [e for e in self.events if isinstance(e, SegEvent)]

    def text(self) -> str:
        return "".join(e.token for e in self.events if isinstance(e, TextEvent))

    def to_json(self) -> dict:
        return {
            "events": [e.to_json() for e in self.events],
            "answer": self.answer,
            "masks": [e.mask.to_json() for e in self.seg_events()],
            "flags": list(self.flags),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ReasoningTrace":
        events = []
        for e in obj["events"]:
            if e["type"] == "text":
                events.append(TextEvent(token=e["token"]))
            elif e["type"] == "seg":
                events.append(SegEvent(
                    step=e["step"], image_index=e["image_index"],
                    mask=RleMask.from_json(e["mask"]),
                    selection=TokenSelection(tuple(e["selection"])),
                    modality_flags=tuple(e["modality"]) if e.get("modality") is not None else None))
            elif e["type"] == "inject":
                events.append(InjectEvent(count=e["count"],
                                          rows=np.asarray(e["rows"], dtype=np.float64)))
            else:
                raise ValueError(f"unknown event type {e['type']!r}")
        return cls(events=tuple(events), answer=obj["answer"],
                   flags=tuple(obj.get("flags", [])))


# ---------------------------------------------------------------------------
# Scripted test doubles

@dataclass
class ScriptedTextGenerator:
    """Replays a fixed script of (token, optional seg state) pairs; emits the
    end token once the script is exhausted. Stateless across calls: the next
    token is chosen by counting previously generated text tokens in the
    context, so identical contexts always yield identical output."""

    script: list[tuple[str, Optional[object]]]
    eos_token: str = EOS_TOKEN

    def step(self, context: list[dict]) -> tuple[str, Optional[object]]:
        emitted = sum(1 for item in context if item["kind"] == "text")
        if emitted >= len(self.script):
            return self.eos_token, None
        return self.script[emitted]


@dataclass
class ScriptedMaskDecoder:
    """Maps an opaque state name to a per-image mask table."""

    masks: dict  # state -> {image_index(int, 1-based): BinaryMask}

    def decode(self, seg_prompt_state: object, image_index: int) -> BinaryMask:
        table = self.masks[seg_prompt_state]
        key = max(int(image_index), 1)  # index 0 aliases the first image
        return table[key]


@dataclass
class ArrayFeatureProvider:
    """In-memory features/layouts for a temporal sequence of images.

    Images are addressed 1-based by temporal index; index 0 aliases image 1
    (the default target when no temporal indicator was generated).
    """

    layouts: list[PatchLayout]
    feature_table: list[dict]  # per image: modality -> TokenFeatures
    question_embeddings: Optional[mod.TextEmbeddings] = None

    def _resolve(self, image_index: int) -> int:
        idx = max(int(image_index), 1)
        if idx > len(self.layouts):
            raise TemporalIndexError(
                f"image index {image_index} out of range for {len(self.layouts)} images")
        return idx - 1

    @property
    def image_count(self) -> int:
        return len(self.layouts)

    def layout(self, image_index: int) -> PatchLayout:
        return self.layouts[self._resolve(image_index)]

    def features(self, image_index: int, modality: str) -> TokenFeatures:
        return self.feature_table[self._resolve(image_index)][modality]

    def modalities(self, image_index: int) -> tuple[str, ...]:
        return tuple(sorted(self.feature_table[self._resolve(image_index)].keys()))

    def text_embeddings(self) -> Optional[mod.TextEmbeddings]:
        return self.question_embeddings


# ---------------------------------------------------------------------------
# Operations

def parse_temporal_indicator(recent_text: str) -> Optional[int]:
    """Return k from the nearest preceding literal "Image: t<k>" marker, or
    None when no marker is present."""
    matches = list(_TEMPORAL_RE.finditer(recent_text))
    if not matches:
        return None
    return int(matches[-1].group(1))


def assemble_prompt(question: str) -> str:
    """System preamble plus the user question."""
    if not question or not question.strip():
        raise ValueError("question must be nonempty")
    return f"{SYSTEM_PREAMBLE}\nUser: {question}\nAssistant: "


def extract_answer(text: str) -> str:
    """Content of the first <answer>...</answer> pair, or empty string."""
    m = _ANSWER_RE.search(text)
    return m.group(1).strip() if m else ""


def _compute_injection(feat: FeatureProvider, image_index: int, mask: BinaryMask,
                       cap: int, betas: dict) -> tuple[TokenSelection, Optional[tuple[str, ...]], FeatureSequence]:
    """Shared by the loop and by trace verification: mask -> token selection ->
    (optionally fused) feature rows for one image."""
    layout = feat.layout(image_index)
    if mask.width != layout.image_width or mask.height != layout.image_height:
        raise DecoderMismatchError(
            f"decoded mask {mask.width}x{mask.height} does not match image "
            f"{layout.image_width}x{layout.image_height}")
    tok = downsample_mask(mask, layout)
    sel = spatial_uniform_sample(tok, cap=cap)
    mods = feat.modalities(image_index)
    if mod.OPTICAL in mods and mod.SAR in mods:
        beta_opt, beta_sar = betas[max(int(image_index), 1)]
        assign = mod.select_modality(beta_opt, beta_sar, sel)
        seq = mod.fuse_features(assign, feat.features(image_index, mod.OPTICAL),
                                feat.features(image_index, mod.SAR), sel)
        return sel, assign.choices, seq
    only = mods[0]
    return sel, None, extract_features(feat.features(image_index, only), sel)


def _prefill_betas(feat: FeatureProvider) -> dict:
    """Relevance scores per bi-modal image, computed once before generation."""
    betas: dict = {}
    q = feat.text_embeddings()
    for idx in range(1, feat.image_count + 1):
        mods = feat.modalities(idx)
        if mod.OPTICAL in mods and mod.SAR in mods:
            if q is None:
                raise ValueError("question embeddings required for multi-modal inputs")
            betas[idx] = (
                mod.relevance_scores(feat.features(idx, mod.OPTICAL), q, mod.OPTICAL),
                mod.relevance_scores(feat.features(idx, mod.SAR), q, mod.SAR),
            )
    return betas


def run_inference(gen: TextGenerator, seg: MaskDecoderIface, feat: FeatureProvider,
                  question: str, cfg: GenerationConfig) -> ReasoningTrace:
    """Run the interleaved loop: generate text until the end token or
    max_tokens; on each [SEG], resolve the target image from the most recent
    temporal indicator (default image 0), decode its mask, select and inject
    masked visual features, then resume generation."""
    if feat.image_count < 1:
        raise ValueError("feature provider must expose at least one image")
    betas = _prefill_betas(feat)

    context: list[dict] = [{"kind": "prompt", "text": assemble_prompt(question)}]
    events: list = []
    generated_text: list[str] = []
    step = 0
    truncated = True
    for _ in range(cfg.max_tokens):
        token, state = gen.step(context)
        if token == gen.eos_token:
            truncated = False
            break
        context.append({"kind": "text", "text": token})
        events.append(TextEvent(token=token))
        generated_text.append(token)
        if token == cfg.seg_token:
            step += 1
            k = parse_temporal_indicator("".join(generated_text))
            if k is not None and (k < 1 or k > feat.image_count):
                raise TemporalIndexError(
                    f"temporal indicator t{k} out of range for {feat.image_count} images")
            image_index = k if k is not None else 0
            mask = seg.decode(state, image_index)
            sel, flags, seq = _compute_injection(feat, image_index, mask,
                                                 cfg.token_cap, betas)
            events.append(SegEvent(step=step, image_index=image_index,
                                   mask=rle_encode(mask), selection=sel,
                                   modality_flags=flags))
            events.append(InjectEvent(count=len(sel), rows=seq.rows))
            context.append({"kind": "inject", "rows": seq.rows})

    text = "".join(generated_text)
    answer = extract_answer(text)
    trace_flags: list[str] = []
    if truncated:
        trace_flags.append("truncated")
    if _seg_inside_answer(events, cfg):
        trace_flags.append("seg-in-answer")
    return ReasoningTrace(events=tuple(events), answer=answer, flags=tuple(trace_flags))


def _seg_inside_answer(events: list, cfg: GenerationConfig) -> bool:
    depth = 0
    for e in events:
        if isinstance(e, TextEvent):
            depth += e.token.count(cfg.answer_open) - e.token.count(cfg.answer_close)
        elif isinstance(e, SegEvent) and depth > 0:
            return True
    return False


def verify_trace(trace: ReasoningTrace, feat: FeatureProvider,
                 cfg: GenerationConfig) -> None:
    """Check the structural trace invariants and recompute every injection
    from the recorded masks. Raises AssertionError on any violation."""
    segs = trace.seg_events()
    assert [s.step for s in segs] == list(range(1, len(segs) + 1)), \
        "seg step indices must be consecutive from 1"
    betas = _prefill_betas(feat)
    for i, e in enumerate(trace.events):
        if not isinstance(e, SegEvent):
            continue
        assert i + 1 < len(trace.events) and isinstance(trace.events[i + 1], InjectEvent), \
            "every seg event must be immediately followed by an inject event"
        inj = trace.events[i + 1]
        assert inj.count <= cfg.token_cap, "injection exceeds token cap"
        mask = rle_decode(e.mask)
        sel, flags, seq = _compute_injection(feat, e.image_index, mask,
                                             cfg.token_cap, betas)
        assert sel.indices == e.selection.indices, "recorded selection does not recompute"
        assert flags == e.modality_flags, "recorded modality flags do not recompute"
        assert inj.count == len(sel), "inject count disagrees with selection"
        assert np.array_equal(inj.rows, seq.rows), "injected rows do not recompute"
