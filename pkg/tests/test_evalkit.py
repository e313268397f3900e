import json
import math

import numpy as np
import pytest

from gnmap.errors import GeometryError
from gnmap.map_model import CATEGORY_ORDER, Category, ClassRaster
from gnmap.evalkit import (
    EvalReport,
    PointSet,
    aggregate,
    best_single_tour_report,
    evaluate_rasters,
    extract_points,
    fmt_metric,
    instance_pr,
    match_points,
    pr_from_counts,
    precision_recall,
    render_csv,
    render_json,
    render_text,
    report_from_class_values,
    report_from_json,
)
from gnmap.rng import Rng

PED, DIV, BOU = CATEGORY_ORDER


def class_raster_from_labels(labels, resolution=0.25, c=4):
    labels = np.asarray(labels)
    values = np.zeros((*labels.shape, c))
    np.put_along_axis(values, labels[:, :, None], 1.0, axis=2)
    return ClassRaster(values=values, resolution=resolution)


def points(cat_to_pts):
    ps = PointSet({cat: [] for cat in CATEGORY_ORDER})
    for cat, pts in cat_to_pts.items():
        ps.points[cat] = list(pts)
    return ps


# ---------------------------------------------------------------------------
# exhaustive maximum matching oracle (memoized search over gt subsets)


def max_matching_oracle(pred, gt, threshold):
    adj = []
    for p in pred:
        row = 0
        for j, g in enumerate(gt):
            if math.dist(p, g) <= threshold:
                row |= 1 << j
        adj.append(row)
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def best(i, used):
        if i == len(adj):
            return 0
        result = best(i + 1, used)
        free = adj[i] & ~used
        while free:
            bit = free & -free
            free ^= bit
            result = max(result, 1 + best(i + 1, used | bit))
        return result

    return best(0, 0)


# ---------------------------------------------------------------------------
# extract_points


def test_background_only_raster_has_no_points():
    raster = class_raster_from_labels(np.zeros((8, 8), dtype=int))
    ps = extract_points(raster)
    assert all(not ps.of(cat) for cat in CATEGORY_ORDER)


def test_single_pixel_center_arithmetic():
    labels = np.zeros((8, 8), dtype=int)
    labels[2, 3] = 2  # lane divider channel
    ps = extract_points(class_raster_from_labels(labels, resolution=0.25))
    assert ps.of(DIV) == [(0.875, 0.625)]


def test_point_counts_match_channel_pixel_counts():
    rng = Rng(3)
    labels = np.array([[rng.randint(4) for _ in range(16)] for _ in range(16)])
    raster = class_raster_from_labels(labels)
    ps = extract_points(raster)
    for ch, cat in enumerate(CATEGORY_ORDER, start=1):
        assert len(ps.of(cat)) == int((labels == ch).sum())


def test_extract_points_requires_expected_channels():
    values = np.zeros((4, 4, 2))
    values[:, :, 0] = 1.0
    with pytest.raises(GeometryError):
        extract_points(ClassRaster(values=values, resolution=0.25))


# ---------------------------------------------------------------------------
# matching


def test_identical_point_sets_match_fully():
    pts = [(0.5, 0.5), (1.25, 2.0), (3.0, 0.75)]
    result = match_points(points({DIV: pts}), points({DIV: pts}))
    m = result.per_category[DIV]
    assert m.num_accepted == 3
    assert all(p.distance == 0.0 for p in m.pairs)


def fig5_configuration():
    """Dividers: 7 predicted, 4 gt, exactly 3 in range; boundaries: 8/5/4."""
    gt_div = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]
    pred_div = [
        (0.0, 0.2), (1.0, 0.3), (2.0, 0.4),      # accepted
        (0.0, 5.0), (1.0, 5.0), (2.0, 5.0), (3.0, 5.0),  # far away
    ]
    gt_bou = [(0.0, 10.0), (1.0, 10.0), (2.0, 10.0), (3.0, 10.0), (4.0, 10.0)]
    pred_bou = [
        (0.0, 10.1), (1.0, 10.2), (2.0, 10.3), (3.0, 10.4),  # accepted
        (0.0, 15.0), (1.0, 15.0), (2.0, 15.0), (3.0, 15.0),  # far away
    ]
    pred = points({DIV: pred_div, BOU: pred_bou})
    gt = points({DIV: gt_div, BOU: gt_bou})
    return pred, gt


def test_fig5_acceptance_counts():
    pred, gt = fig5_configuration()
    result = match_points(pred, gt, threshold=0.5)
    assert result.per_category[DIV].num_accepted == 3
    assert result.per_category[BOU].num_accepted == 4


def test_fig5_precision_recall_fractions():
    pred, gt = fig5_configuration()
    result = match_points(pred, gt, threshold=0.5)
    p_div, r_div = precision_recall(result, DIV)
    p_bou, r_bou = precision_recall(result, BOU)
    assert abs(p_div - 3 / 7) < 1e-12
    assert abs(r_div - 3 / 4) < 1e-12
    assert abs(p_bou - 4 / 8) < 1e-12
    assert abs(r_bou - 4 / 5) < 1e-12


def test_categories_never_cross_match():
    pred = points({DIV: [(0.0, 0.0)]})
    gt = points({BOU: [(0.0, 0.0)]})
    result = match_points(pred, gt)
    assert result.per_category[DIV].num_accepted == 0
    assert result.per_category[BOU].num_accepted == 0


def test_matching_invariants_on_random_instances():
    rng = Rng(9)
    for _ in range(200):
        pred = [(rng.uniform() * 3, rng.uniform() * 3) for _ in range(rng.randint(9))]
        gt = [(rng.uniform() * 3, rng.uniform() * 3) for _ in range(rng.randint(9))]
        result = match_points(points({DIV: pred}), points({DIV: gt}), threshold=0.5)
        m = result.per_category[DIV]
        assert m.num_accepted <= min(m.num_pred, m.num_gt)
        assert len({p.pred_idx for p in m.pairs}) == m.num_accepted
        assert len({p.gt_idx for p in m.pairs}) == m.num_accepted
        assert all(p.distance <= 0.5 for p in m.pairs)


def test_greedy_never_beats_exhaustive_and_usually_ties():
    rng = Rng(12345)
    ties = 0
    trials = 1000
    for _ in range(trials):
        n_p = 1 + rng.randint(8)
        n_g = 1 + rng.randint(8)
        pred = [(rng.uniform() * 2.5, rng.uniform() * 2.5) for _ in range(n_p)]
        gt = [(rng.uniform() * 2.5, rng.uniform() * 2.5) for _ in range(n_g)]
        result = match_points(points({DIV: pred}), points({DIV: gt}), threshold=0.5)
        greedy = result.per_category[DIV].num_accepted
        best = max_matching_oracle(pred, gt, 0.5)
        assert greedy <= best
        ties += greedy == best
    assert ties / trials >= 0.95


def test_accepted_count_is_orientation_independent():
    rng = Rng(77)
    for _ in range(200):
        pred = [(rng.uniform() * 2, rng.uniform() * 2) for _ in range(1 + rng.randint(7))]
        gt = [(rng.uniform() * 2, rng.uniform() * 2) for _ in range(1 + rng.randint(7))]
        a = match_points(points({DIV: pred}), points({DIV: gt})).per_category[DIV].num_accepted
        b = match_points(points({DIV: gt}), points({DIV: pred})).per_category[DIV].num_accepted
        assert a == b


def test_accepted_count_monotone_in_threshold():
    rng = Rng(31)
    pred = [(rng.uniform() * 2, rng.uniform() * 2) for _ in range(8)]
    gt = [(rng.uniform() * 2, rng.uniform() * 2) for _ in range(8)]
    counts = [
        match_points(points({DIV: pred}), points({DIV: gt}), threshold=t)
        .per_category[DIV]
        .num_accepted
        for t in (0.1, 0.25, 0.5, 1.0, 2.0)
    ]
    assert counts == sorted(counts)


def test_adding_prediction_never_decreases_recall():
    rng = Rng(55)
    for _ in range(200):
        gt = [(rng.uniform() * 2, rng.uniform() * 2) for _ in range(1 + rng.randint(6))]
        pred = [(rng.uniform() * 2, rng.uniform() * 2) for _ in range(rng.randint(6))]
        extra = (rng.uniform() * 2, rng.uniform() * 2)
        _, r_before = pr_from_counts(
            match_points(points({DIV: pred}), points({DIV: gt})).per_category[DIV].num_accepted,
            len(pred),
            len(gt),
        )
        _, r_after = pr_from_counts(
            match_points(points({DIV: pred + [extra]}), points({DIV: gt}))
            .per_category[DIV]
            .num_accepted,
            len(pred) + 1,
            len(gt),
        )
        assert r_after >= r_before - 1e-12


def test_removing_unmatched_false_positive_raises_precision():
    gt = [(0.0, 0.0)]
    pred = [(0.1, 0.0), (1.5, 1.5)]  # second can never match
    result = match_points(points({DIV: pred}), points({DIV: gt}))
    m = result.per_category[DIV]
    assert m.num_accepted == 1
    p_before, _ = precision_recall(result, DIV)
    result2 = match_points(points({DIV: pred[:1]}), points({DIV: gt}))
    p_after, _ = precision_recall(result2, DIV)
    assert p_after > p_before


def test_match_rejects_bad_threshold():
    with pytest.raises(GeometryError):
        match_points(points({}), points({}), threshold=0.0)


# ---------------------------------------------------------------------------
# zero-denominator conventions


@pytest.mark.parametrize(
    "accepted,num_pred,num_gt,expected",
    [
        (0, 0, 0, (1.0, 1.0)),
        (0, 3, 0, (0.0, 1.0)),
        (0, 0, 4, (1.0, 0.0)),
        (2, 4, 8, (0.5, 0.25)),
    ],
)
def test_pr_conventions(accepted, num_pred, num_gt, expected):
    assert pr_from_counts(accepted, num_pred, num_gt) == expected


# ---------------------------------------------------------------------------
# aggregation


TABLE_ROWS = {
    # method: per-class AP (ped, div, bou), per-class AR, rendered mAP/mAR/F1
    "HDMapNet": ((42.8, 47.9, 45.1), (41.3, 47.5, 43.6), ("45.3", "44.1", "44.7")),
    "VectorMapNet": ((60.4, 65.3, 63.1), (59.2, 61.8, 63.4), ("62.9", "61.5", "62.2")),
    "InstaGraM": ((51.9, 54.2, 54.8), (59.8, 62.3, 65.1), ("53.6", "62.4", "57.7")),
    "BeMapNet": ((60.5, 61.6, 64.9), (62.8, 70.3, 65.1), ("62.3", "66.1", "64.1")),
    "MapTR": ((62.8, 65.2, 65.5), (71.3, 73.4, 74.9), ("64.5", "73.2", "68.6")),
    "PivotNet": ((63.1, 66.5, 64.8), (70.3, 72.8, 74.1), ("64.8", "72.4", "68.4")),
    "GMM": ((61.4, 64.7, 64.0), (59.8, 67.6, 62.3), ("63.4", "63.2", "63.3")),
    "GNMap": ((70.5, 74.8, 72.3), (75.4, 78.1, 73.3), ("72.5", "75.6", "74.0")),
}


@pytest.mark.parametrize("method", sorted(TABLE_ROWS))
def test_reference_rows_render_correctly(method):
    ap, ar, (m_ap, m_ar, f1) = TABLE_ROWS[method]
    report = report_from_class_values(
        tuple(v / 100.0 for v in ap), tuple(v / 100.0 for v in ar)
    )
    assert fmt_metric(report.mAP) == m_ap
    assert fmt_metric(report.mAR) == m_ar
    assert fmt_metric(report.F1) == f1


def test_f1_of_equal_values_is_identity():
    for x in (0.0, 0.25, 0.5, 1.0):
        report = report_from_class_values((x, x, x), (x, x, x))
        assert abs(report.F1 - x) < 1e-12


def test_aggregate_averages_instances():
    instances = [
        {PED: (1.0, 1.0), DIV: (0.5, 0.25), BOU: (0.0, 1.0)},
        {PED: (0.0, 0.0), DIV: (1.0, 0.75), BOU: (1.0, 0.0)},
    ]
    report = aggregate(instances)
    assert report.n == 2
    assert report.per_class["ped"] == {"AP": 0.5, "AR": 0.5}
    assert report.per_class["div"] == {"AP": 0.75, "AR": 0.5}
    assert abs(report.mAP - (0.5 + 0.75 + 0.5) / 3) < 1e-12


def test_aggregate_requires_instances():
    with pytest.raises(GeometryError):
        aggregate([])


def test_metric_bounds_and_f1_between_means():
    rng = Rng(8)
    for _ in range(100):
        ap = tuple(rng.uniform() for _ in range(3))
        ar = tuple(rng.uniform() for _ in range(3))
        rep = report_from_class_values(ap, ar)
        for v in (rep.mAP, rep.mAR, rep.F1):
            assert 0.0 <= v <= 1.0
        assert rep.F1 <= max(rep.mAP, rep.mAR) + 1e-12
        assert rep.F1 >= min(rep.mAP, rep.mAR) - 1e-12


# ---------------------------------------------------------------------------
# raster-level evaluation


def striped_raster(offset_px=0):
    labels = np.zeros((16, 16), dtype=int)
    labels[4, :] = 1   # crossing row
    labels[8, :] = 2   # divider row
    labels[12, :] = 3  # boundary row
    labels = np.roll(labels, offset_px, axis=0)
    return class_raster_from_labels(labels)


def test_ground_truth_scores_perfectly_against_itself():
    gts = [striped_raster(), striped_raster(1)]
    report = evaluate_rasters(gts, gts)
    assert report.mAP == 1.0 and report.mAR == 1.0 and report.F1 == 1.0


def test_background_prediction_has_zero_recall_where_gt_exists():
    gt = striped_raster()
    empty = class_raster_from_labels(np.zeros((16, 16), dtype=int))
    inst = instance_pr(empty, gt)
    for cat in CATEGORY_ORDER:
        assert inst[cat] == (1.0, 0.0)  # nothing predicted: P=1 by convention, R=0


def test_far_shift_zeroes_f1():
    # isolated single points per category, prediction displaced by 0.75 m
    labels = np.zeros((16, 16), dtype=int)
    labels[2, 2] = 1
    labels[6, 6] = 2
    labels[10, 10] = 3
    gt = class_raster_from_labels(labels)
    pred = class_raster_from_labels(np.roll(labels, 3, axis=1))  # 3 px = 0.75 m > 0.5 m
    report = evaluate_rasters([pred], [gt])
    assert report.F1 == 0.0
    assert report.mAP == 0.0 and report.mAR == 0.0


def test_best_single_tour_prefers_the_better_tour():
    from gnmap.synth import SynthConfig, gen_dataset

    ds = gen_dataset(SynthConfig(train_tiles=1, valid_tiles=1, test_tiles=3, seed=8))
    report = best_single_tour_report(ds.splits["test"])
    assert 0.0 < report.F1 <= 1.0
    assert report.n == 3


# ---------------------------------------------------------------------------
# rendering


def gnmap_reference_report():
    return report_from_class_values(
        (0.705, 0.748, 0.723), (0.754, 0.781, 0.733), n=5000,
        params={"threshold": 0.5, "resolution": 0.25},
    )


def test_text_table_contains_f1_cell():
    text = render_text([("fused", gnmap_reference_report())])
    assert "74.0" in text
    assert "72.5" in text and "75.6" in text


def test_json_round_trip():
    report = gnmap_reference_report()
    back = report_from_json(render_json(report))
    assert back == report
    doc = json.loads(render_json(report))
    assert set(doc) == {"n", "per_class", "mAP", "mAR", "F1", "params"}
    assert set(doc["per_class"]) == {"ped", "div", "bou"}
    assert set(doc["per_class"]["ped"]) == {"AP", "AR"}


def test_csv_column_order():
    lines = render_csv(gnmap_reference_report()).strip().split("\n")
    assert lines[0] == "category,AP,AR"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["ped", "div", "bou"]
    assert lines[1] == "ped,70.5,75.4"


def test_eval_report_equality_semantics():
    a = gnmap_reference_report()
    b = gnmap_reference_report()
    assert a == b and isinstance(a, EvalReport)
