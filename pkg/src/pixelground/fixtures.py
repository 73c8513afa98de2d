"""Bundled deterministic fixtures: synthetic semantic rasters, building-footprint
files, and scripted inference scenarios.

Everything is generated from fixed seeds so fixture files are byte-stable and
the downstream pipelines (benchmark build, scripted inference) are replayable.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geoquery import BuildingSet, SemanticRaster
from .raster import BinaryMask, rle_encode

RASTER_SIZE = 96
RASTER_RESOLUTION = 10.0
CLASS_NAMES = {1: "water", 2: "forest", 3: "cropland", 4: "urban"}
N_RASTERS = 12
N_BUILDING_SETS = 10
BUILDING_CANVAS = 128


def make_raster(index: int) -> SemanticRaster:
    """One synthetic land-cover raster: a large water block on the left, a
    forest block on the right with a clear gap (>10 px) from the water, and a
    cropland block touching the forest from below. Sizes jitter with the index
    so significance and margin filters fire on some pairs and not others."""
    rng = np.random.default_rng(1000 + index)
    labels = np.zeros((RASTER_SIZE, RASTER_SIZE), dtype=np.int32)

    ww = int(rng.integers(30, 41))
    wh = int(rng.integers(32, 46))
    wr = int(rng.integers(4, 10))
    labels[wr:wr + wh, 4:4 + ww] = 1  # water

    fw = int(rng.integers(20, 31))
    fh = int(rng.integers(22, 36))
    fc = RASTER_SIZE - 4 - fw  # left edge >= 61, water right edge <= 44
    fr = int(rng.integers(6, 12))
    labels[fr:fr + fh, fc:fc + fw] = 2  # forest

    ch = int(rng.integers(16, 30))
    labels[fr + fh:min(fr + fh + ch, RASTER_SIZE - 2), fc:fc + fw] = 3  # cropland

    if index % 3 == 0:  # occasional small urban patch near the water side
        labels[RASTER_SIZE - 10:RASTER_SIZE - 4, 8:14] = 4
    return SemanticRaster(labels=labels, resolution=RASTER_RESOLUTION,
                          class_names=dict(CLASS_NAMES))


def make_building_set(index: int) -> BuildingSet:
    """10-14 square footprints on a grid, 3-5 of them labeled destroyed."""
    rng = np.random.default_rng(2000 + index)
    n = int(rng.integers(10, 15))
    n_destroyed = int(rng.integers(3, 6))
    polys = []
    for k in range(n):
        gx, gy = k % 4, k // 4
        x0 = 8 + gx * 28 + int(rng.integers(0, 6))
        y0 = 8 + gy * 28 + int(rng.integers(0, 6))
        side = int(rng.integers(6, 11))
        polys.append(((x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)))
    destroyed_idx = set(rng.choice(n, size=n_destroyed, replace=False).tolist())
    labels = tuple("destroyed" if k in destroyed_idx else "intact" for k in range(n))
    return BuildingSet(polygons=tuple(polys), damage_labels=labels)


def write_rasters(out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(N_RASTERS):
        path = out_dir / f"raster_{i:02d}.json"
        make_raster(i).save(path)
        paths.append(path)
    for i in range(N_BUILDING_SETS):
        path = out_dir / f"buildings_{i:02d}.buildings.json"
        make_building_set(i).save(path)
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# Scenarios

def _block_mask_rle(width: int, height: int, x0: int, y0: int, w: int, h: int) -> dict:
    px = np.zeros((height, width), dtype=bool)
    px[y0:y0 + h, x0:x0 + w] = True
    return rle_encode(BinaryMask(px)).to_json()


def single_image_scenario() -> dict:
    return {
        "question": "What percentage of the image is covered by water?",
        "feature_dim": 16,
        "max_tokens": 64,
        "token_cap": 128,
        "images": [{"width": 448, "height": 448, "modalities": ["optical"], "seed": 11}],
        "script": [
            "<think>", "To answer, ", "I first segment ", "the water regions. ",
            {"token": "[SEG]", "mask": "water"},
            " The region covers ", "about a quarter ", "of the image.",
            "</think>", "<answer>", "25.0%", "</answer>",
        ],
        "masks": {"water": {"1": _block_mask_rle(448, 448, 32, 32, 224, 224)}},
    }


def bi_temporal_scenario() -> dict:
    return {
        "question": "Did the water area grow between the two observations?",
        "feature_dim": 16,
        "max_tokens": 64,
        "token_cap": 128,
        "images": [
            {"width": 448, "height": 448, "modalities": ["optical"], "seed": 21},
            {"width": 448, "height": 448, "modalities": ["optical"], "seed": 22},
        ],
        "script": [
            "<think>", "First the early observation. ", "Image: t1 ",
            {"token": "[SEG]", "mask": "water"},
            " Now the later one. ", "Image: t2 ",
            {"token": "[SEG]", "mask": "water"},
            " The region clearly expanded.", "</think>",
            "<answer>", "Yes", "</answer>",
        ],
        "masks": {"water": {
            "1": _block_mask_rle(448, 448, 64, 64, 128, 128),
            "2": _block_mask_rle(448, 448, 64, 64, 224, 224),
        }},
    }


def optical_sar_scenario() -> dict:
    return {
        "question": "Is the flooded area adjacent to the road?",
        "feature_dim": 16,
        "max_tokens": 64,
        "token_cap": 128,
        "text_embedding_seed": 7,
        "text_length": 5,
        "images": [{"width": 448, "height": 448,
                    "modalities": ["optical", "sar"], "seed": 31}],
        "script": [
            "<think>", "Segmenting the flooded area ", "using both sensors. ",
            {"token": "[SEG]", "mask": "flood"},
            " The flood touches the road.", "</think>",
            "<answer>", "Yes", "</answer>",
        ],
        "masks": {"flood": {"1": _block_mask_rle(448, 448, 0, 160, 448, 160)}},
    }


SCENARIOS = {
    "single_image": single_image_scenario,
    "bi_temporal": bi_temporal_scenario,
    "optical_sar": optical_sar_scenario,
}


def write_scenarios(out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, builder in SCENARIOS.items():
        path = out_dir / f"{name}.json"
        path.write_text(json.dumps(builder(), sort_keys=True, indent=1))
        paths.append(path)
    return paths


def write_all(root: Path) -> dict:
    return {
        "rasters": write_rasters(root / "rasters"),
        "scenarios": write_scenarios(root / "scenarios"),
    }
