"""Vector map tiles and their raster / patch / mask representations.

A tile is a small rectangular region holding polyline and polygon map
elements in tile-local meter coordinates.  Tiles are rendered to
single-channel binary rasters (element vs background) or to per-pixel
one-hot category rasters.  Rasters are decomposed into non-overlapping
patches, and a seeded mask plan selects which patches stay visible.

Stroke semantics: an element marks every grid cell whose closed square the
element's boundary segments touch (a supercover traversal; polygons are
traced on their outline, not filled).  This is resolution-independent and
needs no stroke-width parameter.  Pixel (row r, col c) covers the closed
square [c*res, (c+1)*res] x [r*res, (r+1)*res]; x grows with columns and y
with rows.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import GeometryError
from .rng import Rng


class Category(Enum):
    PEDESTRIAN_CROSSING = "pedestrian_crossing"
    LANE_DIVIDER = "lane_divider"
    ROAD_BOUNDARY = "road_boundary"


#: Channel order of class rasters: channel 0 is background, then these.
CATEGORY_ORDER = (
    Category.PEDESTRIAN_CROSSING,
    Category.LANE_DIVIDER,
    Category.ROAD_BOUNDARY,
)

#: Paint order at overlapping pixels, least visible first.  Crossings are
#: the rarest elements so they win ties, then dividers, then boundaries.
PAINT_ORDER = (
    Category.ROAD_BOUNDARY,
    Category.LANE_DIVIDER,
    Category.PEDESTRIAN_CROSSING,
)


@dataclass(frozen=True)
class MapElement:
    """One map element: an open polyline or a closed polygon outline."""

    category: Category
    points: tuple[tuple[float, float], ...]
    closed: bool

    def __post_init__(self):
        if len(self.points) < 2:
            raise GeometryError(f"element needs >= 2 points, got {len(self.points)}")
        if self.category is Category.PEDESTRIAN_CROSSING and not self.closed:
            raise GeometryError("pedestrian crossings must be closed polygons")
        if self.category is not Category.PEDESTRIAN_CROSSING and self.closed:
            raise GeometryError(f"{self.category.value} must be an open polyline")

    def segments(self):
        """Consecutive point pairs; closed elements wrap around."""
        pts = self.points
        for a, b in zip(pts, pts[1:]):
            yield a, b
        if self.closed:
            yield pts[-1], pts[0]


@dataclass(frozen=True)
class VectorTile:
    tile_id: str
    extent: tuple[float, float]  # (width_m, height_m)
    elements: tuple[MapElement, ...]

    def __post_init__(self):
        w, h = self.extent
        if not (w > 0 and h > 0):
            raise GeometryError(f"tile extent must be positive, got {self.extent}")
        for el in self.elements:
            for x, y in el.points:
                if not (0.0 <= x <= w and 0.0 <= y <= h):
                    raise GeometryError(
                        f"point ({x}, {y}) outside tile extent {self.extent}"
                    )


@dataclass(frozen=True)
class GrayRaster:
    """Single-channel raster; ground truth is binary, model output in [0,1]."""

    values: np.ndarray  # (h, w) float64
    resolution: float

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise GeometryError(f"gray raster must be 2-d, got shape {v.shape}")
        if self.resolution <= 0:
            raise GeometryError(f"resolution must be positive, got {self.resolution}")
        if v.size and (v.min() < -1e-9 or v.max() > 1 + 1e-9):
            raise GeometryError("gray raster values must lie in [0, 1]")

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ClassRaster:
    """Per-pixel categorical raster; channel 0 is background.

    Every pixel's channel values are a probability vector (sum 1 within
    1e-6); ground-truth rasters are exactly one-hot.
    """

    values: np.ndarray  # (h, w, c) float64
    resolution: float

    def __post_init__(self):
        v = self.values
        if v.ndim != 3 or v.shape[2] < 2:
            raise GeometryError(f"class raster must be (h, w, c>=2), got {v.shape}")
        if self.resolution <= 0:
            raise GeometryError(f"resolution must be positive, got {self.resolution}")
        sums = v.sum(axis=2)
        if v.size and np.abs(sums - 1.0).max() > 1e-6:
            raise GeometryError("class raster channel sums must equal 1 per pixel")

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    @property
    def c(self) -> int:
        return self.values.shape[2]

    def background(self) -> np.ndarray:
        return self.values[:, :, 0]


@dataclass(frozen=True)
class PatchGrid:
    """Row-major decomposition of a raster into k x l patches."""

    patches: np.ndarray  # (num_patches, k*l), source dtype preserved
    patch_h: int
    patch_w: int
    grid_h: int  # source raster height in pixels
    grid_w: int
    resolution: float

    @property
    def num_patches(self) -> int:
        return self.patches.shape[0]


@dataclass(frozen=True)
class MaskPlan:
    """Which patches stay visible after random masking."""

    mask_ratio: float
    kept_indices: tuple[int, ...]
    seed: int
    num_patches: int

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio < 1.0:
            raise GeometryError(f"mask ratio must be in [0, 1), got {self.mask_ratio}")
        ks = self.kept_indices
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise GeometryError("kept indices must be strictly increasing")
        if ks and (ks[0] < 0 or ks[-1] >= self.num_patches):
            raise GeometryError("kept indices out of range")

    @property
    def removed_indices(self) -> tuple[int, ...]:
        kept = set(self.kept_indices)
        return tuple(i for i in range(self.num_patches) if i not in kept)


# ---------------------------------------------------------------------------
# rasterization


def _index_span(lo: float, hi: float, res: float, n: int) -> tuple[int, int]:
    """Inclusive cell index range whose closed spans intersect [lo, hi].

    A value exactly on a cell boundary belongs to both adjacent cells.
    """
    q_lo = lo / res
    first = int(math.ceil(q_lo)) - 1 if float(q_lo).is_integer() else int(math.floor(q_lo))
    last = int(math.floor(hi / res))
    return max(first, 0), min(last, n - 1)


def trace_segment(p0, p1, resolution: float, h: int, w: int) -> list[tuple[int, int]]:
    """All (row, col) cells whose closed square touches the closed segment.

    Column-slab sweep: for each column the segment crosses, intersect the
    segment with the column's x-span and mark every row overlapping the
    resulting y-interval.
    """
    x0, y0 = p0
    x1, y1 = p1
    cells: list[tuple[int, int]] = []
    c_lo, c_hi = _index_span(min(x0, x1), max(x0, x1), resolution, w)
    dx = x1 - x0
    dy = y1 - y0
    for c in range(c_lo, c_hi + 1):
        if dx == 0.0:
            ya, yb = y0, y1
        else:
            xa = max(min(x0, x1), c * resolution)
            xb = min(max(x0, x1), (c + 1) * resolution)
            ta = (xa - x0) / dx
            tb = (xb - x0) / dx
            ya = y0 + ta * dy
            yb = y0 + tb * dy
        r_lo, r_hi = _index_span(min(ya, yb), max(ya, yb), resolution, h)
        for r in range(r_lo, r_hi + 1):
            cells.append((r, c))
    return cells


def _check_raster_covers(tile: VectorTile, resolution: float, h: int, w: int) -> None:
    if resolution <= 0:
        raise GeometryError(f"resolution must be positive, got {resolution}")
    if h <= 0 or w <= 0:
        raise GeometryError(f"raster size must be positive, got {h}x{w}")
    ext_w, ext_h = tile.extent
    if h * resolution < ext_h - 1e-12 or w * resolution < ext_w - 1e-12:
        raise GeometryError(
            f"raster {h}x{w} at {resolution} m/px does not cover tile extent {tile.extent}"
        )


def _stroke_mask(elements, resolution: float, h: int, w: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    for el in elements:
        for p0, p1 in el.segments():
            for r, c in trace_segment(p0, p1, resolution, h, w):
                mask[r, c] = True
    return mask


def rasterize_gray(tile: VectorTile, resolution: float, h: int, w: int) -> GrayRaster:
    """Binary raster: 1 wherever any element's stroked geometry covers a pixel."""
    _check_raster_covers(tile, resolution, h, w)
    mask = _stroke_mask(tile.elements, resolution, h, w)
    return GrayRaster(values=mask.astype(np.float64), resolution=resolution)


def rasterize_class(
    tile: VectorTile,
    resolution: float,
    h: int,
    w: int,
    category_order: tuple[Category, ...] = CATEGORY_ORDER,
) -> ClassRaster:
    """One-hot raster: channel 0 background, then one channel per category.

    Overlapping pixels resolve by PAINT_ORDER (crossing > divider >
    boundary); categories are painted least-visible first so later paints
    win.
    """
    _check_raster_covers(tile, resolution, h, w)
    c = len(category_order) + 1
    channel = {cat: i + 1 for i, cat in enumerate(category_order)}
    label = np.zeros((h, w), dtype=np.int64)  # 0 = background
    for cat in PAINT_ORDER:
        if cat not in channel:
            continue
        els = [el for el in tile.elements if el.category is cat]
        if not els:
            continue
        mask = _stroke_mask(els, resolution, h, w)
        label[mask] = channel[cat]
    values = np.zeros((h, w, c), dtype=np.float64)
    np.put_along_axis(values, label[:, :, None], 1.0, axis=2)
    return ClassRaster(values=values, resolution=resolution)


# ---------------------------------------------------------------------------
# patches and masking


def patchify(values: np.ndarray, k: int, l: int) -> np.ndarray:
    """(h, w) array -> (num_patches, k*l) in row-major patch order."""
    h, w = values.shape
    if h % k or w % l:
        raise GeometryError(f"patch {k}x{l} does not divide raster {h}x{w}")
    blocks = values.reshape(h // k, k, w // l, l).transpose(0, 2, 1, 3)
    return blocks.reshape((h // k) * (w // l), k * l)


def unpatchify(patches: np.ndarray, k: int, l: int, h: int, w: int) -> np.ndarray:
    """Inverse of `patchify`; exact for every dtype."""
    blocks = patches.reshape(h // k, w // l, k, l).transpose(0, 2, 1, 3)
    return blocks.reshape(h, w)


def split_patches(raster: GrayRaster, k: int, l: int) -> PatchGrid:
    return PatchGrid(
        patches=patchify(raster.values, k, l),
        patch_h=k,
        patch_w=l,
        grid_h=raster.h,
        grid_w=raster.w,
        resolution=raster.resolution,
    )


def reassemble(grid: PatchGrid) -> GrayRaster:
    values = unpatchify(grid.patches, grid.patch_h, grid.patch_w, grid.grid_h, grid.grid_w)
    return GrayRaster(values=values, resolution=grid.resolution)


def sample_mask(num_patches: int, mask_ratio: float, seed: int) -> MaskPlan:
    """Keep round((1-ratio)*num_patches) patches, uniformly over subsets.

    Selection is the prefix of a seeded Fisher-Yates shuffle (see rng.Rng),
    so the plan is identical on every platform for a given seed.
    """
    if not 0.0 <= mask_ratio < 1.0:
        raise GeometryError(f"mask ratio must be in [0, 1), got {mask_ratio}")
    keep = int(math.floor((1.0 - mask_ratio) * num_patches + 0.5))
    kept = tuple(sorted(Rng(seed).sample_prefix(num_patches, keep)))
    return MaskPlan(
        mask_ratio=mask_ratio, kept_indices=kept, seed=seed, num_patches=num_patches
    )


def apply_mask(grid: PatchGrid, plan: MaskPlan) -> tuple[np.ndarray, MaskPlan]:
    """Visible patches only, in ascending patch-index order."""
    if plan.num_patches != grid.num_patches:
        raise GeometryError(
            f"mask plan for {plan.num_patches} patches applied to grid of {grid.num_patches}"
        )
    return grid.patches[list(plan.kept_indices)], plan


# ---------------------------------------------------------------------------
# file formats

_RASTER_DTYPE = "f32"


def tile_to_dict(tile: VectorTile) -> dict:
    return {
        "tile_id": tile.tile_id,
        "extent": [tile.extent[0], tile.extent[1]],
        "elements": [
            {
                "category": el.category.value,
                "closed": el.closed,
                "points": [[x, y] for x, y in el.points],
            }
            for el in tile.elements
        ],
    }


def tile_from_dict(doc: dict) -> VectorTile:
    elements = tuple(
        MapElement(
            category=Category(el["category"]),
            points=tuple((float(x), float(y)) for x, y in el["points"]),
            closed=bool(el["closed"]),
        )
        for el in doc["elements"]
    )
    return VectorTile(
        tile_id=str(doc["tile_id"]),
        extent=(float(doc["extent"][0]), float(doc["extent"][1])),
        elements=elements,
    )


def save_tile(tile: VectorTile, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(tile_to_dict(tile), f, sort_keys=True, separators=(",", ":"))


def load_tile(path: str) -> VectorTile:
    with open(path, encoding="utf-8") as f:
        return tile_from_dict(json.load(f))


def save_raster(raster: GrayRaster | ClassRaster, path: str) -> None:
    """JSON header line + raw little-endian f32, row-major, channels innermost."""
    if isinstance(raster, GrayRaster):
        data = raster.values[:, :, None]
    else:
        data = raster.values
    h, w, c = data.shape
    header = {"h": h, "w": w, "c": c, "resolution": raster.resolution, "dtype": _RASTER_DTYPE}
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("ascii"))
        f.write(b"\n")
        f.write(payload)


def load_raster(path: str) -> GrayRaster | ClassRaster:
    with open(path, "rb") as f:
        header_line = f.readline()
        blob = f.read()
    header = json.loads(header_line.decode("ascii"))
    if header.get("dtype") != _RASTER_DTYPE:
        raise GeometryError(f"unsupported raster dtype {header.get('dtype')!r} in {path}")
    h, w, c = int(header["h"]), int(header["w"]), int(header["c"])
    expected = h * w * c * 4
    if len(blob) != expected:
        raise GeometryError(f"raster {path}: expected {expected} data bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4").astype(np.float64).reshape(h, w, c)
    resolution = float(header["resolution"])
    if c == 1:
        return GrayRaster(values=data[:, :, 0], resolution=resolution)
    return ClassRaster(values=data, resolution=resolution)


def dataset_file_checksum(path: str) -> str:
    """Stable content checksum used by dataset regeneration tests."""
    import hashlib

    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def tree_checksum(root: str) -> str:
    """Checksum of a directory tree: file names and contents, order-independent."""
    import hashlib

    entries = []
    for dirpath, _dirnames, filenames in os.walk(root):
        for name in filenames:
            full = os.path.join(dirpath, name)
            rel = os.path.relpath(full, root)
            entries.append((rel, dataset_file_checksum(full)))
    digest = hashlib.sha256()
    for rel, chk in sorted(entries):
        digest.update(rel.encode("utf-8"))
        digest.update(chk.encode("ascii"))
    return digest.hexdigest()
