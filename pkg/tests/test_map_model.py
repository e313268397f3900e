import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnmap.errors import GeometryError
from gnmap.map_model import (
    CATEGORY_ORDER,
    PAINT_ORDER,
    Category,
    ClassRaster,
    GrayRaster,
    MapElement,
    VectorTile,
    apply_mask,
    load_raster,
    load_tile,
    rasterize_class,
    rasterize_gray,
    reassemble,
    sample_mask,
    save_raster,
    save_tile,
    split_patches,
    tile_from_dict,
    tile_to_dict,
    trace_segment,
    tree_checksum,
    unpatchify,
)
from gnmap.rng import Rng

RES = 0.25
EXTENT = (16.0, 16.0)


def line(category, pts, closed=False):
    return MapElement(category, tuple(pts), closed)


def tile_of(*elements, tile_id="t"):
    return VectorTile(tile_id, EXTENT, tuple(elements))


# ---------------------------------------------------------------------------
# independent supercover oracle: a cell is covered iff the closed segment
# touches its closed square (Liang-Barsky clipping, brute force over cells)


def _segment_touches_box(p0, p1, xmin, xmax, ymin, ymax):
    x0, y0 = p0
    x1, y1 = p1
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 - xmin), (dx, xmax - x0), (-dy, y0 - ymin), (dy, ymax - y0)):
        if p == 0.0:
            if q < 0.0:
                return False
        else:
            r = q / p
            if p < 0.0:
                t0 = max(t0, r)
            else:
                t1 = min(t1, r)
    return t0 <= t1


def supercover_oracle(p0, p1, res, h, w):
    cells = set()
    for r in range(h):
        for c in range(w):
            if _segment_touches_box(p0, p1, c * res, (c + 1) * res, r * res, (r + 1) * res):
                cells.add((r, c))
    return cells


def stroke_oracle(tile, res, h, w):
    """Per-pixel painter's-order class oracle, brute force."""
    label = np.zeros((h, w), dtype=int)
    channel = {cat: i + 1 for i, cat in enumerate(CATEGORY_ORDER)}
    for cat in PAINT_ORDER:
        for el in tile.elements:
            if el.category is not cat:
                continue
            for p0, p1 in el.segments():
                for r, c in supercover_oracle(p0, p1, res, h, w):
                    label[r, c] = channel[cat]
    return label


# ---------------------------------------------------------------------------
# domain type invariants


def test_element_needs_two_points():
    with pytest.raises(GeometryError):
        MapElement(Category.LANE_DIVIDER, ((1.0, 1.0),), False)


def test_crossing_must_be_closed_and_lines_open():
    with pytest.raises(GeometryError):
        MapElement(Category.PEDESTRIAN_CROSSING, ((0, 0), (1, 0), (1, 1)), False)
    with pytest.raises(GeometryError):
        MapElement(Category.ROAD_BOUNDARY, ((0, 0), (1, 0), (1, 1)), True)


def test_tile_rejects_points_outside_extent():
    el = line(Category.LANE_DIVIDER, [(0.0, 0.0), (17.0, 1.0)])
    with pytest.raises(GeometryError):
        tile_of(el)


def test_tile_rejects_degenerate_extent():
    with pytest.raises(GeometryError):
        VectorTile("t", (0.0, 16.0), ())


def test_class_raster_requires_normalized_channels():
    bad = np.zeros((4, 4, 3))
    with pytest.raises(GeometryError):
        ClassRaster(values=bad, resolution=RES)


# ---------------------------------------------------------------------------
# rasterize_gray


def test_empty_tile_rasterizes_to_zeros():
    g = rasterize_gray(tile_of(), RES, 64, 64)
    assert g.values.shape == (64, 64)
    assert not g.values.any()


def test_horizontal_line_at_row_center_marks_one_full_row():
    y = (32 + 0.5) * RES
    g = rasterize_gray(tile_of(line(Category.LANE_DIVIDER, [(0.0, y), (16.0, y)])), RES, 64, 64)
    assert g.values[32].all()
    assert g.values.sum() == 64


def test_diagonal_matches_supercover_oracle():
    g = rasterize_gray(
        tile_of(line(Category.ROAD_BOUNDARY, [(0.0, 0.0), (16.0, 16.0)])), RES, 64, 64
    )
    got = set(zip(*np.nonzero(g.values)))
    assert got == supercover_oracle((0.0, 0.0), (16.0, 16.0), RES, 64, 64)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_segments_match_supercover_oracle(seed):
    rng = Rng(seed)
    p0 = (rng.uniform() * 4.0, rng.uniform() * 4.0)
    p1 = (rng.uniform() * 4.0, rng.uniform() * 4.0)
    got = set(trace_segment(p0, p1, RES, 16, 16))
    assert got == supercover_oracle(p0, p1, RES, 16, 16)


def test_rasterize_gray_is_deterministic_and_binary():
    tile = tile_of(
        line(Category.ROAD_BOUNDARY, [(0.0, 2.0), (16.0, 3.7)]),
        line(Category.PEDESTRIAN_CROSSING, [(3.0, 2.5), (4.0, 2.5), (4.0, 3.4), (3.0, 3.4)], True),
    )
    a = rasterize_gray(tile, RES, 64, 64)
    b = rasterize_gray(tile, RES, 64, 64)
    assert np.array_equal(a.values, b.values)
    assert set(np.unique(a.values)) <= {0.0, 1.0}


def test_rasterize_rejects_bad_geometry():
    tile = tile_of(line(Category.LANE_DIVIDER, [(0.0, 1.0), (16.0, 1.0)]))
    with pytest.raises(GeometryError):
        rasterize_gray(tile, -0.25, 64, 64)
    with pytest.raises(GeometryError):
        rasterize_gray(tile, RES, 32, 64)  # 32 px * 0.25 m < 16 m extent


# ---------------------------------------------------------------------------
# rasterize_class


def test_empty_tile_is_all_background():
    c = rasterize_class(tile_of(), RES, 64, 64)
    assert c.values.shape == (64, 64, 4)
    assert c.background().all()


def test_class_raster_is_one_hot():
    tile = tile_of(line(Category.LANE_DIVIDER, [(1.0, 1.0), (15.0, 13.0)]))
    c = rasterize_class(tile, RES, 64, 64)
    assert np.abs(c.values.sum(axis=2) - 1.0).max() == 0.0
    assert set(np.unique(c.values)) <= {0.0, 1.0}


def test_overlap_resolves_by_precedence():
    # divider and boundary cross; divider outranks boundary at shared pixels
    div = line(Category.LANE_DIVIDER, [(0.0, 8.1), (16.0, 8.1)])
    bou = line(Category.ROAD_BOUNDARY, [(8.1, 0.0), (8.1, 16.0)])
    c = rasterize_class(tile_of(div, bou), RES, 64, 64)
    labels = c.values.argmax(axis=2)
    oracle = stroke_oracle(tile_of(div, bou), RES, 64, 64)
    assert np.array_equal(labels, oracle)
    shared = (32, 32)
    assert labels[shared] == 2  # channel 2 = lane_divider


def test_crossing_outranks_everything():
    div = line(Category.LANE_DIVIDER, [(0.0, 8.1), (16.0, 8.1)])
    ped = line(
        Category.PEDESTRIAN_CROSSING,
        [(7.0, 7.0), (9.0, 7.0), (9.0, 9.0), (7.0, 9.0)],
        True,
    )
    c = rasterize_class(tile_of(div, ped), RES, 64, 64)
    labels = c.values.argmax(axis=2)
    assert np.array_equal(labels, stroke_oracle(tile_of(div, ped), RES, 64, 64))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_tiles_match_painter_oracle(seed):
    from gnmap.synth import gen_tile

    tile = gen_tile(seed, extent=(4.0, 4.0))
    c = rasterize_class(tile, RES, 16, 16)
    assert np.array_equal(c.values.argmax(axis=2), stroke_oracle(tile, RES, 16, 16))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gray_equals_inverse_background(seed):
    from gnmap.synth import gen_tile

    tile = gen_tile(seed)
    g = rasterize_gray(tile, RES, 64, 64)
    c = rasterize_class(tile, RES, 64, 64)
    assert np.array_equal(g.values, 1.0 - c.background())


# ---------------------------------------------------------------------------
# patches


def test_patch_count_64x64_k16():
    g = GrayRaster(values=np.zeros((64, 64)), resolution=RES)
    grid = split_patches(g, 16, 16)
    assert grid.num_patches == 16
    assert grid.patches.shape == (16, 256)


def test_split_requires_divisibility():
    g = GrayRaster(values=np.zeros((64, 64)), resolution=RES)
    with pytest.raises(GeometryError):
        split_patches(g, 24, 16)


@settings(max_examples=20, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.sampled_from([(64, 64, 8, 8), (64, 64, 16, 16), (32, 16, 8, 4), (16, 16, 16, 16)]),
)
def test_split_reassemble_round_trip(seed, geom):
    h, w, k, l = geom
    rng = np.random.default_rng(seed)
    values = rng.random((h, w))
    g = GrayRaster(values=values, resolution=RES)
    back = reassemble(split_patches(g, k, l))
    assert np.array_equal(back.values, values)
    assert back.values.dtype == values.dtype


def test_round_trip_preserves_other_dtypes():
    values = (np.arange(64 * 64).reshape(64, 64) % 7).astype(np.int32)
    from gnmap.map_model import patchify

    assert np.array_equal(unpatchify(patchify(values, 8, 8), 8, 8, 64, 64), values)
    assert unpatchify(patchify(values, 8, 8), 8, 8, 64, 64).dtype == np.int32


def test_constant_raster_gives_constant_patches():
    g = GrayRaster(values=np.full((64, 64), 0.5), resolution=RES)
    grid = split_patches(g, 8, 8)
    assert (grid.patches == 0.5).all()


# ---------------------------------------------------------------------------
# masking


def test_mask_ratio_zero_keeps_everything():
    plan = sample_mask(16, 0.0, seed=1)
    assert plan.kept_indices == tuple(range(16))


def test_mask_ratio_three_quarters_keeps_four_of_sixteen():
    plan = sample_mask(16, 0.75, seed=1)
    assert len(plan.kept_indices) == 4
    assert len(plan.removed_indices) == 12


def test_mask_plan_is_deterministic():
    assert sample_mask(64, 0.75, seed=9) == sample_mask(64, 0.75, seed=9)
    assert sample_mask(64, 0.75, seed=9) != sample_mask(64, 0.75, seed=10)


def test_mask_rejects_bad_ratio():
    with pytest.raises(GeometryError):
        sample_mask(16, 1.0, seed=0)
    with pytest.raises(GeometryError):
        sample_mask(16, -0.1, seed=0)


def test_mask_kept_and_removed_partition():
    plan = sample_mask(64, 0.75, seed=3)
    kept, removed = set(plan.kept_indices), set(plan.removed_indices)
    assert kept | removed == set(range(64))
    assert not (kept & removed)


def test_mask_sampling_is_uniform_over_indices():
    # Monte Carlo: with 16 patches at ratio 0.75, each index keeps with p=0.25
    n, trials = 16, 10_000
    counts = np.zeros(n)
    for seed in range(trials):
        for i in sample_mask(n, 0.75, seed=seed).kept_indices:
            counts[i] += 1
    freq = counts / trials
    assert np.abs(freq - 0.25).max() < 0.02


def test_apply_mask_identity_when_nothing_removed():
    g = GrayRaster(values=np.arange(64.0 * 64).reshape(64, 64) / (64 * 64), resolution=RES)
    grid = split_patches(g, 8, 8)
    visible, _ = apply_mask(grid, sample_mask(grid.num_patches, 0.0, seed=0))
    assert np.array_equal(visible, grid.patches)


def test_apply_mask_keeps_index_order():
    g = GrayRaster(values=np.arange(64.0 * 64).reshape(64, 64) / (64 * 64), resolution=RES)
    grid = split_patches(g, 16, 16)
    plan = sample_mask(grid.num_patches, 0.75, seed=2)
    visible, _ = apply_mask(grid, plan)
    assert visible.shape == (4, 256)
    for row, idx in zip(visible, plan.kept_indices):
        assert np.array_equal(row, grid.patches[idx])


def test_apply_mask_scatter_back_property():
    g = GrayRaster(values=np.random.default_rng(0).random((64, 64)), resolution=RES)
    grid = split_patches(g, 8, 8)
    plan = sample_mask(grid.num_patches, 0.75, seed=5)
    visible, _ = apply_mask(grid, plan)
    canvas = np.zeros_like(grid.patches)
    canvas[list(plan.kept_indices)] = visible
    back = unpatchify(canvas, 8, 8, 64, 64)
    for idx in plan.kept_indices:
        r, c = divmod(idx, 8)
        assert np.array_equal(
            back[r * 8 : (r + 1) * 8, c * 8 : (c + 1) * 8],
            g.values[r * 8 : (r + 1) * 8, c * 8 : (c + 1) * 8],
        )
    for idx in plan.removed_indices:
        r, c = divmod(idx, 8)
        assert not back[r * 8 : (r + 1) * 8, c * 8 : (c + 1) * 8].any()


def test_apply_mask_rejects_size_mismatch():
    g = GrayRaster(values=np.zeros((64, 64)), resolution=RES)
    grid = split_patches(g, 8, 8)
    with pytest.raises(GeometryError):
        apply_mask(grid, sample_mask(16, 0.75, seed=0))


# ---------------------------------------------------------------------------
# file formats


def test_tile_json_round_trip(tmp_path):
    tile = tile_of(
        line(Category.ROAD_BOUNDARY, [(0.0, 2.25), (16.0, 3.5)]),
        line(Category.PEDESTRIAN_CROSSING, [(3.0, 2.5), (4.5, 2.5), (4.5, 3.25), (3.0, 3.25)], True),
        tile_id="roundtrip",
    )
    path = tmp_path / "tile.json"
    save_tile(tile, str(path))
    assert load_tile(str(path)) == tile
    assert tile_from_dict(tile_to_dict(tile)) == tile


def test_raster_io_round_trip(tmp_path):
    tile = tile_of(line(Category.LANE_DIVIDER, [(0.0, 8.0), (16.0, 8.0)]))
    c = rasterize_class(tile, RES, 64, 64)
    g = rasterize_gray(tile, RES, 64, 64)
    save_raster(c, str(tmp_path / "c.bin"))
    save_raster(g, str(tmp_path / "g.bin"))
    c2 = load_raster(str(tmp_path / "c.bin"))
    g2 = load_raster(str(tmp_path / "g.bin"))
    assert isinstance(c2, ClassRaster) and isinstance(g2, GrayRaster)
    assert np.array_equal(c2.values, c.values)  # exact: values are 0/1
    assert np.array_equal(g2.values, g.values)
    assert c2.resolution == RES


def test_truncated_raster_file_fails(tmp_path):
    tile = tile_of(line(Category.LANE_DIVIDER, [(0.0, 8.0), (16.0, 8.0)]))
    path = tmp_path / "r.bin"
    save_raster(rasterize_class(tile, RES, 64, 64), str(path))
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(GeometryError):
        load_raster(str(path))


def test_tree_checksum_tracks_content(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "a" / "x.txt").write_text("hello")
    first = tree_checksum(str(tmp_path))
    assert first == tree_checksum(str(tmp_path))
    (tmp_path / "a" / "x.txt").write_text("world")
    assert tree_checksum(str(tmp_path)) != first
