"""Synthetic tile dataset: ground-truth road tiles plus degraded per-tour views.

Each tile holds a road corridor crossing the square: 2-4 road boundaries,
1-6 lane dividers between the outermost boundaries, and 0-2 pedestrian
crossings drawn as closed rectangles spanning the roadway.  A tour is one
simulated traversal: each element survives with probability `coverage`
(element-level dropout, since single-pass incompleteness is counted in
elements) and surviving geometry is jittered with isotropic Gaussian noise
before rasterization.

Everything derives deterministically from the config seed; the manifest
records every per-tile and per-tour seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, GeometryError
from .map_model import (
    CATEGORY_ORDER,
    Category,
    ClassRaster,
    GrayRaster,
    MapElement,
    VectorTile,
    load_raster,
    load_tile,
    rasterize_class,
    rasterize_gray,
    save_raster,
    save_tile,
)
from .rng import Rng, derive_seed

_MASK64 = (1 << 64) - 1

#: Disjoint per-split seed ranges: tile i of a split draws from
#: config.seed + offset + i, so splits can never share a tile seed.
SPLIT_SEED_OFFSETS = {"train": 0, "valid": 1 << 32, "test": 2 << 32}
SPLIT_NAMES = ("train", "valid", "test")


@dataclass(frozen=True)
class StyleParams:
    boundary_count: tuple[int, int] = (2, 4)
    divider_count: tuple[int, int] = (1, 6)
    #: probabilities of 0, 1, 2 pedestrian crossings per tile
    crossing_count_probs: tuple[float, float, float] = (0.25, 0.5, 0.25)
    edge_margin: float = 0.5  # m kept clear around the tile border
    meander: float = 0.35  # m max lateral wobble of polyline points
    points_per_line: int = 5
    crossing_width: tuple[float, float] = (1.0, 2.0)  # m along the road


@dataclass(frozen=True)
class RasterParams:
    h: int = 64
    w: int = 64
    resolution: float = 0.25


@dataclass(frozen=True)
class SynthConfig:
    train_tiles: int = 40
    valid_tiles: int = 5
    test_tiles: int = 5
    tours_per_tile: int = 5
    coverage: float = 0.65
    jitter_sigma: float = 0.15
    #: chance that a surviving open element is reported as the other open
    #: category (divider <-> boundary); per-tour perception confusion hook
    category_flip_prob: float = 0.0
    seed: int = 0
    extent: tuple[float, float] = (16.0, 16.0)
    raster: RasterParams = field(default_factory=RasterParams)
    style: StyleParams = field(default_factory=StyleParams)
    #: draw each tile's tour count from {T-1, T, T+1} so the per-split
    #: mean lands near T without being integral
    vary_tours: bool = True

    def split_counts(self) -> dict[str, int]:
        return {"train": self.train_tiles, "valid": self.valid_tiles, "test": self.test_tiles}


@dataclass(frozen=True)
class TourObservation:
    tour_id: int
    observed: ClassRaster


@dataclass(frozen=True)
class TileSample:
    tile: VectorTile
    gt_class: ClassRaster
    gt_gray: GrayRaster
    tours: tuple[TourObservation, ...]

    def __post_init__(self):
        if len(self.tours) < 1:
            raise GeometryError(f"tile {self.tile.tile_id} has no tours")
        ref = self.gt_class
        for t in self.tours:
            o = t.observed
            if (o.h, o.w, o.c, o.resolution) != (ref.h, ref.w, ref.c, ref.resolution):
                raise GeometryError(
                    f"tour raster geometry mismatch in tile {self.tile.tile_id}"
                )


# ---------------------------------------------------------------------------
# tile generation


def _polyline(rng: Rng, length: float, band: tuple[float, float], n_pts: int):
    """Points spanning [0, length] on the main axis, wobbling inside `band`."""
    lo, hi = band
    xs = [length * i / (n_pts - 1) for i in range(n_pts)]
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0
    ys = [center + (2.0 * rng.uniform() - 1.0) * half for _ in xs]
    return list(zip(xs, ys))


def _stratified_bands(lo: float, hi: float, n: int, rng: Rng, fill: float = 0.6):
    """n disjoint sub-bands of [lo, hi], one band per stratum."""
    bands = []
    width = (hi - lo) / n
    for i in range(n):
        pad = width * (1.0 - fill) / 2.0
        a = lo + i * width + pad
        b = lo + (i + 1) * width - pad
        # shrink further to a narrow band around a random center
        c = a + rng.uniform() * (b - a)
        half = min(0.5 * (b - a), 0.3)
        bands.append((max(a, c - half), min(b, c + half)))
    return bands


def gen_tile(
    seed: int,
    extent: tuple[float, float] = (16.0, 16.0),
    style: StyleParams = StyleParams(),
    tile_id: str | None = None,
) -> VectorTile:
    """Deterministic synthetic road tile for a 64-bit seed."""
    ew, eh = extent
    if ew <= 0 or eh <= 0:
        raise GeometryError(f"degenerate extent {extent}")
    rng = Rng(seed)
    vertical = rng.uniform() < 0.5
    # generate with the road running along x; swap axes afterwards if vertical
    length, cross = (eh, ew) if vertical else (ew, eh)
    m = style.edge_margin

    n_b = rng.randrange(*style.boundary_count)
    bands = _stratified_bands(m, cross - m, n_b, rng)
    boundaries = [
        _polyline(rng, length, band, style.points_per_line) for band in bands
    ]
    road_lo = min(p[1] for p in boundaries[0])
    road_hi = max(p[1] for p in boundaries[-1])

    n_d = rng.randrange(*style.divider_count)
    inner_lo = road_lo + 0.3
    inner_hi = road_hi - 0.3
    divider_bands = _stratified_bands(inner_lo, inner_hi, n_d, rng)
    dividers = [
        _polyline(rng, length, band, style.points_per_line) for band in divider_bands
    ]

    u = rng.uniform()
    p0, p1, _p2 = style.crossing_count_probs
    n_c = 0 if u < p0 else (1 if u < p0 + p1 else 2)
    crossings = []
    for i in range(n_c):
        # keep two crossings in separate halves of the road
        lo_x = (0.12 + 0.44 * i) * length if n_c == 2 else 0.15 * length
        hi_x = (0.44 + 0.44 * i) * length if n_c == 2 else 0.85 * length
        width = style.crossing_width[0] + rng.uniform() * (
            style.crossing_width[1] - style.crossing_width[0]
        )
        cx = lo_x + rng.uniform() * max(hi_x - lo_x - width, 0.1)
        y0 = road_lo + 0.15
        y1 = road_hi - 0.15
        crossings.append([(cx, y0), (cx + width, y0), (cx + width, y1), (cx, y1)])

    def to_tile_frame(pts):
        out = []
        for x, y in pts:
            if vertical:
                x, y = y, x
            out.append((min(max(x, 0.0), ew), min(max(y, 0.0), eh)))
        return tuple(out)

    elements = [
        MapElement(Category.ROAD_BOUNDARY, to_tile_frame(p), closed=False)
        for p in boundaries
    ]
    elements += [
        MapElement(Category.LANE_DIVIDER, to_tile_frame(p), closed=False)
        for p in dividers
    ]
    elements += [
        MapElement(Category.PEDESTRIAN_CROSSING, to_tile_frame(p), closed=True)
        for p in crossings
    ]
    return VectorTile(
        tile_id=tile_id if tile_id is not None else f"tile_{seed:016x}",
        extent=extent,
        elements=tuple(elements),
    )


# ---------------------------------------------------------------------------
# tour simulation


def tour_retention_flags(tile: VectorTile, seed: int, coverage: float) -> list[bool]:
    """The per-element survival draws a tour with this seed will make.

    Retention uses the first len(elements) uniforms of the stream, before
    any jitter draws, so it can be reproduced independently of the noise.
    """
    rng = Rng(seed)
    return [rng.uniform() < coverage for _ in tile.elements]


_OPEN_FLIP = {Category.LANE_DIVIDER: Category.ROAD_BOUNDARY,
              Category.ROAD_BOUNDARY: Category.LANE_DIVIDER}


def simulate_tour(
    tile: VectorTile,
    seed: int,
    coverage: float,
    jitter_sigma: float,
    raster_params: RasterParams = RasterParams(),
    tour_id: int = 0,
    category_flip_prob: float = 0.0,
) -> TourObservation:
    """One degraded traversal of a tile, rasterized to a class raster."""
    if not 0.0 <= coverage <= 1.0:
        raise ConfigError(f"coverage must be in [0, 1], got {coverage}")
    if jitter_sigma < 0.0:
        raise ConfigError(f"jitter sigma must be >= 0, got {jitter_sigma}")
    rng = Rng(seed)
    flags = [rng.uniform() < coverage for _ in tile.elements]
    ew, eh = tile.extent
    observed = []
    for el, keep in zip(tile.elements, flags):
        if not keep:
            continue
        category = el.category
        if (
            category_flip_prob > 0.0
            and category in _OPEN_FLIP
            and rng.uniform() < category_flip_prob
        ):
            category = _OPEN_FLIP[category]
        pts = []
        for x, y in el.points:
            nx = x + rng.normal(jitter_sigma)
            ny = y + rng.normal(jitter_sigma)
            pts.append((min(max(nx, 0.0), ew), min(max(ny, 0.0), eh)))
        observed.append(MapElement(category, tuple(pts), el.closed))
    degraded = VectorTile(
        tile_id=f"{tile.tile_id}/tour{tour_id}", extent=tile.extent, elements=tuple(observed)
    )
    raster = rasterize_class(
        degraded, raster_params.resolution, raster_params.h, raster_params.w, CATEGORY_ORDER
    )
    return TourObservation(tour_id=tour_id, observed=raster)


# ---------------------------------------------------------------------------
# dataset assembly


def _gen_sample(config: SynthConfig, split: str, index: int) -> tuple[TileSample, dict]:
    tile_seed = (config.seed + SPLIT_SEED_OFFSETS[split] + index) & _MASK64
    tile = gen_tile(
        derive_seed(tile_seed, "tile"),
        config.extent,
        config.style,
        tile_id=f"{split}_{index:04d}",
    )
    t = config.tours_per_tile
    if config.vary_tours and t > 1:
        t = t - 1 + Rng(derive_seed(tile_seed, "tours")).randint(3)
    tour_seeds = [derive_seed(tile_seed, f"tour{j}") for j in range(t)]
    tours = tuple(
        simulate_tour(
            tile,
            tour_seeds[j],
            config.coverage,
            config.jitter_sigma,
            config.raster,
            tour_id=j,
            category_flip_prob=config.category_flip_prob,
        )
        for j in range(t)
    )
    rp = config.raster
    gt_class = rasterize_class(tile, rp.resolution, rp.h, rp.w, CATEGORY_ORDER)
    gt_gray = rasterize_gray(tile, rp.resolution, rp.h, rp.w)
    sample = TileSample(tile=tile, gt_class=gt_class, gt_gray=gt_gray, tours=tours)
    record = {
        "tile_id": tile.tile_id,
        "tile_seed": tile_seed,
        "num_tours": t,
        "tour_seeds": tour_seeds,
    }
    return sample, record


@dataclass
class Dataset:
    splits: dict[str, list[TileSample]]
    manifest: dict


def gen_dataset(config: SynthConfig) -> Dataset:
    """All three splits, a pure function of the config."""
    counts = config.split_counts()
    for split, count in counts.items():
        if count < 1:
            raise ConfigError(f"{split} split needs >= 1 tiles, got {count}")
    splits: dict[str, list[TileSample]] = {}
    records: dict[str, list[dict]] = {}
    for split in SPLIT_NAMES:
        samples = []
        recs = []
        for i in range(counts[split]):
            sample, rec = _gen_sample(config, split, i)
            samples.append(sample)
            recs.append(rec)
        splits[split] = samples
        records[split] = recs
    manifest = {"config": asdict(config), "tiles": records}
    return Dataset(splits=splits, manifest=manifest)


def write_dataset(dataset: Dataset, out_dir: str) -> None:
    """Layout: <split>/<tile_id>/{tile.json, gt_class.bin, tour_<i>.bin} + manifest.json."""
    os.makedirs(out_dir, exist_ok=True)
    for split, samples in dataset.splits.items():
        for sample in samples:
            tdir = os.path.join(out_dir, split, sample.tile.tile_id)
            os.makedirs(tdir, exist_ok=True)
            save_tile(sample.tile, os.path.join(tdir, "tile.json"))
            save_raster(sample.gt_class, os.path.join(tdir, "gt_class.bin"))
            for tour in sample.tours:
                save_raster(tour.observed, os.path.join(tdir, f"tour_{tour.tour_id}.bin"))
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(dataset.manifest, f, sort_keys=True, indent=1)


def load_split(data_dir: str, split: str) -> list[TileSample]:
    """Read one split back; gt_gray is recovered as 1 - background channel."""
    split_dir = os.path.join(data_dir, split)
    if not os.path.isdir(split_dir):
        raise ConfigError(f"dataset at {data_dir!r} has no {split!r} split")
    samples = []
    for tile_id in sorted(os.listdir(split_dir)):
        tdir = os.path.join(split_dir, tile_id)
        tile = load_tile(os.path.join(tdir, "tile.json"))
        gt_class = load_raster(os.path.join(tdir, "gt_class.bin"))
        if not isinstance(gt_class, ClassRaster):
            raise GeometryError(f"{tdir}/gt_class.bin is not a class raster")
        gray = GrayRaster(
            values=1.0 - gt_class.background(), resolution=gt_class.resolution
        )
        tour_files = sorted(
            (name for name in os.listdir(tdir) if name.startswith("tour_")),
            key=lambda name: int(name[len("tour_") : -len(".bin")]),
        )
        tours = []
        for name in tour_files:
            raster = load_raster(os.path.join(tdir, name))
            tour_id = int(name[len("tour_") : -len(".bin")])
            tours.append(TourObservation(tour_id=tour_id, observed=raster))
        samples.append(
            TileSample(tile=tile, gt_class=gt_class, gt_gray=gray, tours=tuple(tours))
        )
    return samples


def load_manifest(data_dir: str) -> dict:
    with open(os.path.join(data_dir, "manifest.json"), encoding="utf-8") as f:
        return json.load(f)
