"""Scenario files: JSON descriptions of scripted inference runs.

A scenario declares the images (dimensions, modalities, feature seeds), the
generator script, and the masks the scripted decoder returns, so a full
interleaved inference run needs no model weights and replays byte-identically.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .grid import PatchLayout, TokenFeatures, plan_patches
from .modality import TextEmbeddings
from .raster import RleMask, rle_decode
from .runtime import (ArrayFeatureProvider, GenerationConfig, ReasoningTrace,
                      ScriptedMaskDecoder, ScriptedTextGenerator, run_inference)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    question: str
    generator: ScriptedTextGenerator
    decoder: ScriptedMaskDecoder
    provider: ArrayFeatureProvider
    config: GenerationConfig

    def run(self) -> ReasoningTrace:
        return run_inference(self.generator, self.decoder, self.provider,
                             self.question, self.config)


def _image_features(seed: int, modality: str, count: int, dim: int) -> TokenFeatures:
    # modality folded into the stream so optical/SAR features differ
    offset = sum(modality.encode())
    rng = np.random.default_rng(seed * 1000 + offset)
    return TokenFeatures(rows=rng.standard_normal((count, dim)))


def load_scenario(path: Union[str, Path]) -> Scenario:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    for key in ("question", "images", "script", "masks"):
        if key not in obj:
            raise ScenarioError(f"scenario missing required field {key!r}")
    dim = int(obj.get("feature_dim", 16))
    layouts: list[PatchLayout] = []
    feature_table: list[dict] = []
    for spec in obj["images"]:
        layout = plan_patches(spec["width"], spec["height"])
        layouts.append(layout)
        feature_table.append({
            m: _image_features(int(spec.get("seed", 0)), m, layout.tile_token_count, dim)
            for m in spec["modalities"]
        })
    embeddings = None
    if any(len(spec["modalities"]) > 1 for spec in obj["images"]):
        if "text_embedding_seed" not in obj:
            raise ScenarioError("bi-modal scenarios need a text_embedding_seed")
        rng = np.random.default_rng(int(obj["text_embedding_seed"]))
        embeddings = TextEmbeddings(rows=rng.standard_normal(
            (int(obj.get("text_length", 4)), dim)))
    provider = ArrayFeatureProvider(layouts=layouts, feature_table=feature_table,
                                    question_embeddings=embeddings)

    script = []
    for item in obj["script"]:
        if isinstance(item, str):
            script.append((item, None))
        elif isinstance(item, dict) and "token" in item:
            script.append((item["token"], item.get("mask")))
        else:
            raise ScenarioError(f"malformed script item: {item!r}")
    masks = {
        name: {int(k): rle_decode(RleMask.from_json(v)) for k, v in table.items()}
        for name, table in obj["masks"].items()
    }
    cfg = GenerationConfig(max_tokens=int(obj.get("max_tokens", 512)),
                           token_cap=int(obj.get("token_cap", 128)))
    return Scenario(question=obj["question"],
                    generator=ScriptedTextGenerator(script=script),
                    decoder=ScriptedMaskDecoder(masks=masks),
                    provider=provider, config=cfg)
