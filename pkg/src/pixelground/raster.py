"""Dense binary-mask primitives: RLE codec, connectivity, morphology, distance transform.

Everything here operates on immutable value objects backed by numpy arrays.
All functions are pure; no shared state.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

_STRUCT_3X3 = np.ones((3, 3), dtype=bool)


class MalformedMaskError(ValueError):
    """Raised when an RLE record or mask payload violates its invariants."""


class EmptySourceError(ValueError):
    """Raised when an operation requires a nonempty foreground."""


@dataclass(frozen=True)
class BinaryMask:
    """A single-class region as a row-major boolean pixel plane."""

    pixels: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=bool)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise MalformedMaskError(f"mask must be 2D with positive dims, got shape {px.shape}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BinaryMask)
            and self.pixels.shape == other.pixels.shape
            and bool(np.array_equal(self.pixels, other.pixels))
        )

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    @classmethod
    def from_rows(cls, rows) -> "BinaryMask":
        return cls(np.asarray(rows, dtype=bool))

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    def count(self) -> int:
        return int(self.pixels.sum())

    def is_empty(self) -> bool:
        return not self.pixels.any()


@dataclass(frozen=True)
class RleMask:
    """Run-length form of a mask: alternating background/foreground run counts,
    starting with background, over the row-major scan."""

    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if self.width < 1 or self.height < 1:
            raise MalformedMaskError("RLE dimensions must be >= 1")
        if any(c < 0 for c in self.counts):
            raise MalformedMaskError("RLE counts must be nonnegative")
        if sum(self.counts) != self.width * self.height:
            raise MalformedMaskError(
                f"RLE counts sum to {sum(self.counts)}, expected {self.width * self.height}"
            )

    def to_json(self) -> dict:
        return {"width": self.width, "height": self.height, "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        return cls(width=obj["width"], height=obj["height"], counts=obj["counts"])


@dataclass(frozen=True)
class DistanceField:
    """Per-pixel Euclidean distance (in pixel units) to the nearest foreground pixel."""

    values: np.ndarray  # float64, shape (height, width)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ComponentLabeling:
    """Connected-component labels (0 = background), ids contiguous 1..count."""

    labels: np.ndarray  # int32, shape (height, width)
    count: int
    connectivity: int  # 4 or 8


def rle_encode(mask: BinaryMask) -> RleMask:
    """Encode a mask as alternating background/foreground run lengths.

    The first count is the leading background run; it is 0 when the mask
    starts with foreground.
    """
    flat = mask.pixels.ravel()
    if flat.size == 0:
        raise MalformedMaskError("cannot encode empty pixel plane")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:  # leading zero-length background run keeps the alternation convention
        runs = [0] + runs
    return RleMask(width=mask.width, height=mask.height, counts=runs)


def rle_decode(rle: RleMask) -> BinaryMask:
    """Inverse of :func:`rle_encode`. Count-sum mismatch raises MalformedMaskError
    (enforced by the RleMask constructor)."""
    flat = np.zeros(rle.width * rle.height, dtype=bool)
    pos = 0
    fg = False
    for c in rle.counts:
        if fg and c:
            flat[pos:pos + c] = True
        pos += c
        fg = not fg
    return BinaryMask(flat.reshape(rle.height, rle.width))


def connected_components(mask: BinaryMask, connectivity: int = 8) -> ComponentLabeling:
    """Label foreground components under 4- or 8-connectivity."""
    if connectivity == 4:
        structure = ndimage.generate_binary_structure(2, 1)
    elif connectivity == 8:
        structure = ndimage.generate_binary_structure(2, 2)
    else:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    labels, count = ndimage.label(mask.pixels, structure=structure)
    return ComponentLabeling(labels=labels.astype(np.int32), count=int(count), connectivity=connectivity)


def dilate(mask: BinaryMask) -> BinaryMask:
    """3x3 square dilation, one iteration. Neighborhoods are clipped at the
    image border; pixels outside the image never contribute."""
    return BinaryMask(ndimage.binary_dilation(mask.pixels, structure=_STRUCT_3X3))


def erode(mask: BinaryMask) -> BinaryMask:
    """3x3 square erosion, one iteration, with border-clipped neighborhoods
    (a border pixel survives if every in-bounds neighbor is foreground)."""
    return BinaryMask(ndimage.binary_erosion(mask.pixels, structure=_STRUCT_3X3, border_value=1))


def open_mask(mask: BinaryMask) -> BinaryMask:
    """Morphological opening (erosion then dilation, 3x3). Removes isolated
    pixels; idempotent."""
    return dilate(erode(mask))


def distance_transform(mask: BinaryMask) -> DistanceField:
    """Exact Euclidean distance transform: distance from every pixel to the
    nearest foreground pixel of `mask`. Zero exactly on the foreground."""
    if mask.is_empty():
        raise EmptySourceError("distance transform needs a nonempty source mask")
    values = ndimage.distance_transform_edt(~mask.pixels)
    return DistanceField(values=np.asarray(values, dtype=np.float64))
