"""Patch/token accounting and the pixel-mask -> token-selection pipeline.

An image is tiled into n x m patches; each patch contributes an s x s block of
visual tokens, so grounding happens on an (n*s) x (m*s) token grid. A token is
selected when the mask covers strictly more than half of its pixel cell, and
oversized selections are reduced by spatial uniform sampling with a hard cap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raster import BinaryMask

DEFAULT_TILE_SIZE = 448
DEFAULT_TOKENS_PER_SIDE = 16
DEFAULT_TOKEN_CAP = 128


class LayoutMismatchError(ValueError):
    """Mask or feature dimensions disagree with the declared layout."""


@dataclass(frozen=True)
class PatchLayout:
    """Tile counts and token geometry for one image."""

    n: int  # tiles along height
    m: int  # tiles along width
    s: int  # tokens per tile side
    has_thumbnail: bool
    image_width: int
    image_height: int

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.s < 1:
            raise ValueError("n, m, s must all be >= 1")

    @property
    def grid_height(self) -> int:
        return self.n * self.s

    @property
    def grid_width(self) -> int:
        return self.m * self.s

    @property
    def tile_token_count(self) -> int:
        return self.n * self.m * self.s * self.s

    @property
    def token_count(self) -> int:
        """Total visual tokens, thumbnail included."""
        extra = self.s * self.s if self.has_thumbnail else 0
        return self.tile_token_count + extra


@dataclass(frozen=True)
class TokenMask:
    """Per-token mask coverage over the tile-token grid, row-major."""

    layout: PatchLayout
    coverage: np.ndarray  # float64, length n*m*s^2
    selected: np.ndarray  # bool, length n*m*s^2

    def selected_indices(self) -> np.ndarray:
        return np.flatnonzero(self.selected)


@dataclass(frozen=True)
class TokenSelection:
    """Strictly increasing tile-token indices over the (n*s) x (m*s) grid."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("selection indices must be strictly increasing")
        if idx and idx[0] < 0:
            raise ValueError("selection indices must be nonnegative")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)

    def to_json(self) -> list[int]:
        return list(self.indices)


@dataclass(frozen=True)
class TokenFeatures:
    """Per-token feature vectors (N x D)."""

    rows: np.ndarray  # float64, shape (count, dim)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] < 1:
            raise ValueError(f"features must be (N, D) with D >= 1, got {rows.shape}")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class FeatureSequence:
    """Feature rows gathered for one selection, in selection order."""

    rows: np.ndarray  # float64, shape (len(selection), dim)


def plan_patches(image_width: int, image_height: int,
                 tile_size: int = DEFAULT_TILE_SIZE,
                 max_tiles: int = 12,
                 s: int = DEFAULT_TOKENS_PER_SIDE) -> PatchLayout:
    """Choose the n x m tile layout for an image.

    n = ceil(height / tile), m = ceil(width / tile); when that exceeds
    max_tiles, fall back to the feasible (n, m) whose aspect ratio best
    matches the image (ties: more tiles, then smaller n). A thumbnail tile
    is added whenever more than one tile is used.
    """
    if image_width < 1 or image_height < 1:
        raise ValueError("image dimensions must be >= 1")
    n = math.ceil(image_height / tile_size)
    m = math.ceil(image_width / tile_size)
    if n * m > max_tiles:
        aspect = image_height / image_width
        best = None
        for cand_n in range(1, max_tiles + 1):
            for cand_m in range(1, max_tiles // cand_n + 1):
                err = abs(cand_n / cand_m - aspect)
                key = (err, -(cand_n * cand_m), cand_n)
                if best is None or key < best[0]:
                    best = (key, cand_n, cand_m)
        n, m = best[1], best[2]
    return PatchLayout(n=n, m=m, s=s, has_thumbnail=(n * m > 1),
                       image_width=image_width, image_height=image_height)


def _cell_bounds(total_pixels: int, cells: int) -> np.ndarray:
    # floor-rational boundaries: cell k spans [floor(k*W/T), floor((k+1)*W/T))
    return np.array([(k * total_pixels) // cells for k in range(cells + 1)], dtype=np.int64)


def downsample_mask(mask: BinaryMask, layout: PatchLayout) -> TokenMask:
    """Exact per-cell coverage of the mask over the tile-token grid, with the
    strict >50% selection rule. Zero-width cells (image smaller than the grid)
    get coverage 0."""
    if mask.width != layout.image_width or mask.height != layout.image_height:
        raise LayoutMismatchError(
            f"mask is {mask.width}x{mask.height}, layout expects "
            f"{layout.image_width}x{layout.image_height}")
    gh, gw = layout.grid_height, layout.grid_width
    yb = _cell_bounds(mask.height, gh)
    xb = _cell_bounds(mask.width, gw)
    # integral image of foreground counts
    integral = np.zeros((mask.height + 1, mask.width + 1), dtype=np.int64)
    np.cumsum(np.cumsum(mask.pixels, axis=0), axis=1, out=integral[1:, 1:])
    y0, y1 = yb[:-1][:, None], yb[1:][:, None]
    x0, x1 = xb[:-1][None, :], xb[1:][None, :]
    counts = integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]
    sizes = (y1 - y0) * (x1 - x0)
    coverage = np.where(sizes > 0, counts / np.maximum(sizes, 1), 0.0).ravel()
    selected = coverage > 0.5
    return TokenMask(layout=layout, coverage=coverage, selected=selected)


def spatial_uniform_sample(tok: TokenMask, cap: int = DEFAULT_TOKEN_CAP) -> TokenSelection:
    """Cap a token selection at `cap` indices while preserving spatial coverage.

    At or under the cap, the selection is just every selected token. Over the
    cap, a ceil(sqrt(cap))-sided grid is overlaid on the bounding box of the
    selected tokens and each nonempty overlay cell contributes the selected
    token nearest its center (ties to the lowest row-major index). If the
    per-cell picks still exceed the cap, the first `cap` picks in row-major
    cell order are kept. Fully deterministic.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    sel = tok.selected_indices()
    if sel.size <= cap:
        return TokenSelection(tuple(sel.tolist()))

    gw = tok.layout.grid_width
    rows = sel // gw
    cols = sel % gw
    r0, r1 = int(rows.min()), int(rows.max())
    c0, c1 = int(cols.min()), int(cols.max())
    bh, bw = r1 - r0 + 1, c1 - c0 + 1
    g = math.isqrt(cap)
    if g * g < cap:
        g += 1

    cell_r = (rows - r0) * g // bh
    cell_c = (cols - c0) * g // bw
    picks: list[tuple[int, int, int]] = []  # (cell_r, cell_c, token index)
    for a in range(g):
        ra0, ra1 = r0 + a * bh / g, r0 + (a + 1) * bh / g
        center_r = (ra0 + ra1) / 2 - 0.5
        in_row = cell_r == a
        for b in range(g):
            members = sel[in_row & (cell_c == b)]
            if members.size == 0:
                continue
            ca0, ca1 = c0 + b * bw / g, c0 + (b + 1) * bw / g
            center_c = (ca0 + ca1) / 2 - 0.5
            d2 = (members // gw - center_r) ** 2 + (members % gw - center_c) ** 2
            # argmin returns the first minimum, and members are index-sorted,
            # so ties already resolve to the lowest row-major index
            picks.append((a, b, int(members[np.argmin(d2)])))
    picks.sort(key=lambda t: (t[0], t[1]))
    kept = [p[2] for p in picks[:cap]]
    return TokenSelection(tuple(sorted(kept)))


def extract_features(features: TokenFeatures, sel: TokenSelection) -> FeatureSequence:
    """Gather feature rows for a selection, unmodified, in selection order."""
    if sel.indices and max(sel.indices) >= features.count:
        raise IndexError(
            f"selection index {max(sel.indices)} out of range for {features.count} tokens")
    idx = np.asarray(sel.indices, dtype=np.int64)
    return FeatureSequence(rows=features.rows[idx].copy())
