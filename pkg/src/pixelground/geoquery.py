"""Deterministic spatial answers from semantic rasters.

Six rule families over per-pixel class labels: absolute area, coverage
percentage, area ranking/comparison, minimum inter-class distance, boundary
adjacency, and building damage rates. Each answer carries a validity flag and
a machine-readable reject reason when a significance filter fires.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from shapely.geometry import Polygon
from shapely.validation import explain_validity

from .raster import (BinaryMask, connected_components, dilate, distance_transform,
                     open_mask)

# validity filters
MIN_COVERAGE_PCT = 5.0        # class significance for coverage/ranking
MIN_ADJACENCY_PCT = 3.0       # minimum size for adjacency questions
MAX_ADJACENCY_COMPONENTS = 5  # fragmentation limit (8-connectivity)
AREA_MARGIN = 0.1             # |A_i - A_j| must exceed this fraction of the max
MIN_DISTANCE_PX = 10.0        # distances at or below this are trivially adjacent
MIN_BUILDINGS = 10
MIN_DESTROYED = 3
DESTROYED_LABEL = "destroyed"


class UnknownClassError(KeyError):
    pass


class DegeneratePolygonError(ValueError):
    pass


@dataclass(frozen=True)
class SemanticRaster:
    """Per-pixel class labels (0 = void/background) plus spatial resolution."""

    labels: np.ndarray          # int, shape (height, width)
    resolution: float           # meters per pixel
    class_names: dict           # id -> name

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int32)
        if labels.ndim != 2:
            raise ValueError("labels must be a 2D grid")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        for cid in np.unique(labels):
            if cid != 0 and int(cid) not in self.class_names:
                raise ValueError(f"class id {cid} has no name")

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def present_classes(self) -> list[int]:
        return [int(c) for c in np.unique(self.labels) if c != 0]

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "resolution": self.resolution,
            "labels": self.labels.ravel().tolist(),
            "class_names": {str(k): v for k, v in self.class_names.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SemanticRaster":
        labels = np.asarray(obj["labels"], dtype=np.int32).reshape(obj["height"], obj["width"])
        return cls(labels=labels, resolution=float(obj["resolution"]),
                   class_names={int(k): v for k, v in obj["class_names"].items()})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SemanticRaster":
        path = Path(path)
        if path.suffix == ".json":
            return cls.from_json(json.loads(path.read_text()))
        # grayscale image: pixel value is the class id, names are synthesized
        from PIL import Image
        arr = np.asarray(Image.open(path).convert("L"), dtype=np.int32)
        names = {int(c): f"class_{int(c)}" for c in np.unique(arr) if c != 0}
        return cls(labels=arr, resolution=10.0, class_names=names)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))


@dataclass(frozen=True)
class SpatialAnswer:
    kind: str                       # area|coverage|ranking|distance|adjacency|building_change
    value: object                   # number, ordering, or bool
    units: str = ""
    valid: bool = True
    reject_reason: Optional[str] = None

    def __post_init__(self):
        if not self.valid and not self.reject_reason:
            raise ValueError("invalid answers must carry a reject_reason")

    def to_json(self) -> dict:
        return {"kind": self.kind, "value": self.value, "units": self.units,
                "valid": self.valid, "reject_reason": self.reject_reason}

    @classmethod
    def from_json(cls, obj: dict) -> "SpatialAnswer":
        return cls(kind=obj["kind"], value=obj["value"], units=obj.get("units", ""),
                   valid=obj["valid"], reject_reason=obj.get("reject_reason"))


@dataclass(frozen=True)
class BuildingSet:
    """Building footprint polygons (pixel coordinates) with damage labels."""

    polygons: tuple            # tuple of vertex tuples ((x, y), ...)
    damage_labels: tuple       # per polygon: "destroyed" or other

    def __post_init__(self):
        if len(self.polygons) != len(self.damage_labels):
            raise ValueError("one damage label per polygon required")
        for poly in self.polygons:
            if len(poly) < 3:
                raise DegeneratePolygonError(f"polygon with {len(poly)} vertices")
            shp = Polygon(poly)
            if not shp.is_valid:
                raise DegeneratePolygonError(
                    f"self-intersecting or invalid polygon: {explain_validity(shp)}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BuildingSet":
        records = json.loads(Path(path).read_text())
        return cls(
            polygons=tuple(tuple(tuple(pt) for pt in rec["polygon"]) for rec in records),
            damage_labels=tuple(rec["label"] for rec in records),
        )

    def save(self, path: Union[str, Path]) -> None:
        records = [{"polygon": [list(pt) for pt in poly], "label": lbl}
                   for poly, lbl in zip(self.polygons, self.damage_labels)]
        Path(path).write_text(json.dumps(records, sort_keys=True))


# ---------------------------------------------------------------------------

def class_mask(raster: SemanticRaster, class_id: int) -> BinaryMask:
    """Binary mask of one nonzero class."""
    if class_id == 0 or int(class_id) not in raster.class_names:
        raise UnknownClassError(f"unknown class id {class_id}")
    return BinaryMask(raster.labels == class_id)


def area(raster: SemanticRaster, class_id: int) -> SpatialAnswer:
    """A = pixel count * r^2, in square meters. Absent classes are invalid."""
    count = class_mask(raster, class_id).count()
    value = count * raster.resolution ** 2
    if count == 0:
        return SpatialAnswer(kind="area", value=value, units="m^2",
                             valid=False, reject_reason="zero area")
    return SpatialAnswer(kind="area", value=value, units="m^2")


def coverage_percentage(raster: SemanticRaster, class_id: int) -> SpatialAnswer:
    """P = 100 * N_c / N_total over valid (nonzero-label) pixels; classes
    under 5% are rejected as visually insignificant."""
    valid_pixels = int((raster.labels != 0).sum())
    if valid_pixels == 0:
        raise ValueError("raster has no valid (nonzero-label) pixels")
    count = class_mask(raster, class_id).count()
    pct = 100.0 * count / valid_pixels
    if pct < MIN_COVERAGE_PCT:
        return SpatialAnswer(kind="coverage", value=pct, units="%", valid=False,
                             reject_reason="below 5% significance")
    return SpatialAnswer(kind="coverage", value=pct, units="%")


def _eligible_classes(raster: SemanticRaster) -> list[tuple[int, int]]:
    """(class_id, pixel count) for classes at or above the 5% coverage gate."""
    valid_pixels = int((raster.labels != 0).sum())
    out = []
    for cid in raster.present_classes():
        count = int((raster.labels == cid).sum())
        if 100.0 * count / valid_pixels >= MIN_COVERAGE_PCT:
            out.append((cid, count))
    return out


def rank_areas(raster: SemanticRaster) -> SpatialAnswer:
    """Classes at >=5% coverage ranked by area, descending; ties broken by
    ascending class id."""
    eligible = _eligible_classes(raster)
    if len(eligible) < 2:
        raise ValueError("ranking needs at least 2 classes at >=5% coverage")
    ordered = [cid for cid, _ in sorted(eligible, key=lambda t: (-t[1], t[0]))]
    return SpatialAnswer(kind="ranking", value=ordered, units="")


def compare_pair(raster: SemanticRaster, c_i: int, c_j: int) -> SpatialAnswer:
    """Is class c_i larger than c_j? Valid only when both classes clear the
    5% gate and the areas differ by more than 10% of the larger."""
    if c_i == c_j:
        raise ValueError("cannot compare a class with itself")
    a_i = class_mask(raster, c_i).count()
    a_j = class_mask(raster, c_j).count()
    larger = a_i > a_j
    eligible_ids = {cid for cid, _ in _eligible_classes(raster)}
    if c_i not in eligible_ids or c_j not in eligible_ids:
        return SpatialAnswer(kind="ranking", value=larger, valid=False,
                             reject_reason="below 5% significance")
    if abs(a_i - a_j) <= AREA_MARGIN * max(a_i, a_j):
        return SpatialAnswer(kind="ranking", value=larger, valid=False,
                             reject_reason="ambiguous sizes")
    return SpatialAnswer(kind="ranking", value=larger)


def min_distance(raster: SemanticRaster, c_i: int, c_j: int) -> SpatialAnswer:
    """Minimum Euclidean distance between two classes, in meters. Both masks
    are opened (3x3) first to discard isolated pixels; distances at or below
    10 px are rejected as trivially adjacent."""
    if c_i == c_j:
        raise ValueError("distance requires two distinct classes")
    m_i = class_mask(raster, c_i)
    m_j = class_mask(raster, c_j)
    if m_i.is_empty() or m_j.is_empty():
        raise UnknownClassError(f"class {c_i if m_i.is_empty() else c_j} absent from raster")
    o_i = open_mask(m_i)
    o_j = open_mask(m_j)
    if o_i.is_empty() or o_j.is_empty():
        return SpatialAnswer(kind="distance", value=None, units="m", valid=False,
                             reject_reason="no region survives opening")
    d_px = float(distance_transform(o_i).values[o_j.pixels].min())
    meters = d_px * raster.resolution
    if d_px <= MIN_DISTANCE_PX:
        return SpatialAnswer(kind="distance", value=meters, units="m", valid=False,
                             reject_reason="trivially adjacent (<=10 px)")
    return SpatialAnswer(kind="distance", value=meters, units="m")


def adjacency(raster: SemanticRaster, c_i: int, c_j: int) -> SpatialAnswer:
    """Do the two classes share a boundary? True iff the 3x3 dilation of one
    intersects the other. Classes under 3% coverage or split into more than 5
    components (8-conn) are rejected as unclear."""
    if c_i == c_j:
        raise ValueError("adjacency requires two distinct classes")
    m_i = class_mask(raster, c_i)
    m_j = class_mask(raster, c_j)
    if m_i.is_empty() or m_j.is_empty():
        raise UnknownClassError(f"class {c_i if m_i.is_empty() else c_j} absent from raster")
    touching = bool((dilate(m_i).pixels & m_j.pixels).any())
    valid_pixels = int((raster.labels != 0).sum())
    for cid, m in ((c_i, m_i), (c_j, m_j)):
        pct = 100.0 * m.count() / valid_pixels
        if pct < MIN_ADJACENCY_PCT:
            return SpatialAnswer(kind="adjacency", value=touching, valid=False,
                                 reject_reason=f"class {cid} below 3% significance")
        if connected_components(m, connectivity=8).count > MAX_ADJACENCY_COMPONENTS:
            return SpatialAnswer(kind="adjacency", value=touching, valid=False,
                                 reject_reason=f"class {cid} too fragmented (>5 components)")
    return SpatialAnswer(kind="adjacency", value=touching)


# ---------------------------------------------------------------------------
# Polygon rasterization and building change

def _point_in_polygon(px: float, py: float, poly) -> bool:
    """Even-odd test with points on the boundary counted as inside."""
    n = len(poly)
    inside = False
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        # on-segment check
        if (min(x1, x2) - 1e-12 <= px <= max(x1, x2) + 1e-12
                and min(y1, y2) - 1e-12 <= py <= max(y1, y2) + 1e-12):
            cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
            if abs(cross) < 1e-9:
                return True
        if (y1 <= py) != (y2 <= py):
            x_at = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            if px < x_at:
                inside = not inside
    return inside


def rasterize_polygon(poly, width: int, height: int) -> BinaryMask:
    """Even-odd scanline fill of a polygon, sampled at integer pixel
    coordinates with boundary pixels included, clipped to the image bounds."""
    if len(poly) < 3:
        raise DegeneratePolygonError(f"polygon needs >= 3 vertices, got {len(poly)}")
    xs = [p[0] for p in poly]
    ys = [p[1] for p in poly]
    x_lo = max(0, int(np.floor(min(xs))))
    x_hi = min(width - 1, int(np.ceil(max(xs))))
    y_lo = max(0, int(np.floor(min(ys))))
    y_hi = min(height - 1, int(np.ceil(max(ys))))
    out = np.zeros((height, width), dtype=bool)
    for y in range(y_lo, y_hi + 1):
        for x in range(x_lo, x_hi + 1):
            if _point_in_polygon(float(x), float(y), poly):
                out[y, x] = True
    return BinaryMask(out)


def building_change(pre: BuildingSet, width: int, height: int) -> tuple[SpatialAnswer, BinaryMask]:
    """Damage rate R = 100 * destroyed / total, plus the union mask of the
    destroyed footprints. Fewer than 10 buildings or fewer than 3 destroyed
    makes the assessment statistically meaningless."""
    n_total = len(pre.polygons)
    if n_total == 0:
        raise ValueError("building set is empty")
    destroyed = [poly for poly, lbl in zip(pre.polygons, pre.damage_labels)
                 if lbl == DESTROYED_LABEL]
    n_destroyed = len(destroyed)
    rate = 100.0 * n_destroyed / n_total
    union = np.zeros((height, width), dtype=bool)
    for poly in destroyed:
        union |= rasterize_polygon(poly, width, height).pixels
    mask = BinaryMask(union)
    if n_total < MIN_BUILDINGS:
        ans = SpatialAnswer(kind="building_change", value=rate, units="%",
                            valid=False, reject_reason="too few buildings")
    elif n_destroyed < MIN_DESTROYED:
        ans = SpatialAnswer(kind="building_change", value=rate, units="%",
                            valid=False, reject_reason="too few destroyed buildings")
    else:
        ans = SpatialAnswer(kind="building_change", value=rate, units="%")
    return ans, mask


def existence(raster: SemanticRaster, class_id: int) -> SpatialAnswer:
    """Is the class present at all? Always valid; binary value."""
    if class_id == 0 or int(class_id) not in raster.class_names:
        raise UnknownClassError(f"unknown class id {class_id}")
    present = bool((raster.labels == class_id).any())
    return SpatialAnswer(kind="existence", value=present)
