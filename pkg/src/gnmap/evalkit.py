"""Point-matching evaluation: per-instance P/R at 0.5 m, AP/AR, mAP/mAR, F1.

A prediction raster is converted to category points (one point per
non-background argmax pixel, at the pixel center in meters).  Per category
and per instance, predicted and ground-truth points are matched one-to-one:
candidate pairs within the distance threshold are taken greedily by
ascending distance (ties broken by (pred index, gt index)), so each
prediction and each ground-truth point is used at most once.  Per-class
AP/AR are plain averages of instance P/R over the test set; mAP/mAR average
the three categories and F1 is their harmonic mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .map_model import CATEGORY_ORDER, Category, ClassRaster

#: report keys, in rendering order
SHORT_LABELS = {
    Category.PEDESTRIAN_CROSSING: "ped",
    Category.LANE_DIVIDER: "div",
    Category.ROAD_BOUNDARY: "bou",
}
LABEL_ORDER = ("ped", "div", "bou")

DEFAULT_THRESHOLD = 0.5  # meters


@dataclass
class PointSet:
    """Per-category 2-d points in meters."""

    points: dict[Category, list[tuple[float, float]]] = field(default_factory=dict)

    def of(self, category: Category) -> list[tuple[float, float]]:
        return self.points.get(category, [])


@dataclass(frozen=True)
class MatchPair:
    pred_idx: int
    gt_idx: int
    distance: float


@dataclass
class CategoryMatch:
    num_pred: int
    num_gt: int
    pairs: tuple[MatchPair, ...]

    @property
    def num_accepted(self) -> int:
        return len(self.pairs)


@dataclass
class MatchResult:
    per_category: dict[Category, CategoryMatch]
    threshold: float


@dataclass
class EvalReport:
    n: int
    per_class: dict[str, dict[str, float]]  # {"ped": {"AP": ..., "AR": ...}, ...}
    mAP: float
    mAR: float
    F1: float
    params: dict

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "per_class": self.per_class,
            "mAP": self.mAP,
            "mAR": self.mAR,
            "F1": self.F1,
            "params": self.params,
        }


# ---------------------------------------------------------------------------
# points and matching


def extract_points(raster: ClassRaster) -> PointSet:
    """Argmax pixels -> pixel-center points per category, row-major order."""
    if raster.c != len(CATEGORY_ORDER) + 1:
        raise GeometryError(
            f"raster has {raster.c} channels, expected {len(CATEGORY_ORDER) + 1}"
        )
    labels = raster.values.argmax(axis=2)
    res = raster.resolution
    out = PointSet({cat: [] for cat in CATEGORY_ORDER})
    for ch, cat in enumerate(CATEGORY_ORDER, start=1):
        rows, cols = np.nonzero(labels == ch)
        out.points[cat] = [
            ((c + 0.5) * res, (r + 0.5) * res) for r, c in zip(rows.tolist(), cols.tolist())
        ]
    return out


def _greedy_match(pred, gt, threshold: float) -> tuple[MatchPair, ...]:
    if not pred or not gt:
        return ()
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    dists = np.sqrt(((p[:, None, :] - g[None, :, :]) ** 2).sum(axis=2))
    pi, gi = np.nonzero(dists <= threshold)
    if pi.size == 0:
        return ()
    d = dists[pi, gi]
    order = np.lexsort((gi, pi, d))
    used_pred = np.zeros(len(pred), dtype=bool)
    used_gt = np.zeros(len(gt), dtype=bool)
    pairs = []
    for idx in order:
        a, b = int(pi[idx]), int(gi[idx])
        if used_pred[a] or used_gt[b]:
            continue
        used_pred[a] = True
        used_gt[b] = True
        pairs.append(MatchPair(pred_idx=a, gt_idx=b, distance=float(d[idx])))
    return tuple(pairs)


def match_points(pred: PointSet, gt: PointSet, threshold: float = DEFAULT_THRESHOLD) -> MatchResult:
    """One-to-one matching per category; cross-category pairs never match."""
    if threshold <= 0:
        raise GeometryError(f"threshold must be positive, got {threshold}")
    per_category = {
        cat: CategoryMatch(
            num_pred=len(pred.of(cat)),
            num_gt=len(gt.of(cat)),
            pairs=_greedy_match(pred.of(cat), gt.of(cat), threshold),
        )
        for cat in CATEGORY_ORDER
    }
    return MatchResult(per_category=per_category, threshold=threshold)


def pr_from_counts(accepted: int, num_pred: int, num_gt: int) -> tuple[float, float]:
    """P and R with the zero-denominator conventions in one place.

    Nothing predicted and nothing to find counts as vacuously perfect;
    predictions against empty ground truth are all false positives (P=0,
    R=1); an empty prediction against real ground truth misses everything
    (P=1, R=0).
    """
    if num_pred == 0 and num_gt == 0:
        return 1.0, 1.0
    if num_gt == 0:
        return 0.0, 1.0
    if num_pred == 0:
        return 1.0, 0.0
    return accepted / num_pred, accepted / num_gt


def precision_recall(result: MatchResult, category: Category) -> tuple[float, float]:
    m = result.per_category[category]
    return pr_from_counts(m.num_accepted, m.num_pred, m.num_gt)


def instance_pr(
    pred: ClassRaster, gt: ClassRaster, threshold: float = DEFAULT_THRESHOLD
) -> dict[Category, tuple[float, float]]:
    """Per-category (P, R) of a single predicted raster against its ground truth."""
    result = match_points(extract_points(pred), extract_points(gt), threshold)
    return {cat: precision_recall(result, cat) for cat in CATEGORY_ORDER}


# ---------------------------------------------------------------------------
# aggregation


def _combine(ap: dict[str, float], ar: dict[str, float], n: int, params: dict) -> EvalReport:
    m_ap = sum(ap[k] for k in LABEL_ORDER) / 3.0
    m_ar = sum(ar[k] for k in LABEL_ORDER) / 3.0
    f1 = 0.0 if m_ap + m_ar == 0 else 2.0 * m_ap * m_ar / (m_ap + m_ar)
    per_class = {k: {"AP": ap[k], "AR": ar[k]} for k in LABEL_ORDER}
    return EvalReport(n=n, per_class=per_class, mAP=m_ap, mAR=m_ar, F1=f1, params=params)


def aggregate(
    instances: list[dict[Category, tuple[float, float]]], params: dict | None = None
) -> EvalReport:
    """Average per-instance P/R into per-class AP/AR, then mAP/mAR/F1."""
    if not instances:
        raise GeometryError("aggregate needs at least one instance")
    n = len(instances)
    ap = {}
    ar = {}
    for cat in CATEGORY_ORDER:
        label = SHORT_LABELS[cat]
        ap[label] = sum(inst[cat][0] for inst in instances) / n
        ar[label] = sum(inst[cat][1] for inst in instances) / n
    return _combine(ap, ar, n, params or {})


def report_from_class_values(
    ap: tuple[float, float, float],
    ar: tuple[float, float, float],
    n: int = 1,
    params: dict | None = None,
) -> EvalReport:
    """Build a report directly from per-class AP/AR (ped, div, bou order)."""
    return _combine(
        dict(zip(LABEL_ORDER, ap)), dict(zip(LABEL_ORDER, ar)), n, params or {}
    )


# ---------------------------------------------------------------------------
# model-level evaluation


def evaluate_rasters(
    preds: list[ClassRaster],
    gts: list[ClassRaster],
    threshold: float = DEFAULT_THRESHOLD,
) -> EvalReport:
    if len(preds) != len(gts) or not preds:
        raise GeometryError("need equal nonempty prediction/ground-truth lists")
    instances = [instance_pr(p, g, threshold) for p, g in zip(preds, gts)]
    params = {"threshold": threshold, "resolution": gts[0].resolution}
    return aggregate(instances, params)


def evaluate_model(mp, samples, threshold: float = DEFAULT_THRESHOLD) -> EvalReport:
    """Fuse each tile's tours and score the result against the tile's GT."""
    from .gnmap_net.model import fuse_forward

    if not samples:
        raise GeometryError("test split is empty")
    t_max = mp.net.fusion.max_tours
    preds = [fuse_forward(list(s.tours[:t_max]), mp) for s in samples]
    gts = [s.gt_class for s in samples]
    return evaluate_rasters(preds, gts, threshold)


def _tile_f1(pr: dict[Category, tuple[float, float]]) -> float:
    mp_ = sum(v[0] for v in pr.values()) / len(pr)
    mr_ = sum(v[1] for v in pr.values()) / len(pr)
    return 0.0 if mp_ + mr_ == 0 else 2.0 * mp_ * mr_ / (mp_ + mr_)


def best_single_tour_report(samples, threshold: float = DEFAULT_THRESHOLD) -> EvalReport:
    """Strongest no-fusion baseline: per tile, the tour whose raster scores best.

    Each tile contributes its best single tour observation, evaluated
    directly as the prediction.
    """
    instances = []
    for s in samples:
        best = None
        for tour in s.tours:
            pr = instance_pr(tour.observed, s.gt_class, threshold)
            if best is None or _tile_f1(pr) > _tile_f1(best):
                best = pr
        instances.append(best)
    params = {"threshold": threshold, "resolution": samples[0].gt_class.resolution}
    return aggregate(instances, params)


# ---------------------------------------------------------------------------
# rendering


def fmt_metric(value: float) -> str:
    """Internal [0,1] metric -> percent with one decimal, e.g. 0.7403 -> '74.0'."""
    return f"{value * 100.0:.1f}"


def render_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True)


def report_from_json(text: str) -> EvalReport:
    doc = json.loads(text)
    return EvalReport(
        n=doc["n"],
        per_class=doc["per_class"],
        mAP=doc["mAP"],
        mAR=doc["mAR"],
        F1=doc["F1"],
        params=doc["params"],
    )


def render_csv(report: EvalReport) -> str:
    lines = ["category,AP,AR"]
    for label in LABEL_ORDER:
        cls = report.per_class[label]
        lines.append(f"{label},{fmt_metric(cls['AP'])},{fmt_metric(cls['AR'])}")
    return "\n".join(lines) + "\n"


def render_text(rows: list[tuple[str, EvalReport]]) -> str:
    """Fixed-width comparison table; metrics are percent, one decimal."""
    header = (
        f"{'method':24s}  {'mAP':>6s} {'ped':>6s} {'div':>6s} {'bou':>6s}"
        f"  {'mAR':>6s} {'ped':>6s} {'div':>6s} {'bou':>6s}  {'F1':>6s}"
    )
    lines = [header, "-" * len(header)]
    for label, rep in rows:
        cells = [f"{label:24s}", f" {fmt_metric(rep.mAP):>6s}"]
        cells += [f"{fmt_metric(rep.per_class[k]['AP']):>6s}" for k in LABEL_ORDER]
        cells += [f" {fmt_metric(rep.mAR):>6s}"]
        cells += [f"{fmt_metric(rep.per_class[k]['AR']):>6s}" for k in LABEL_ORDER]
        cells += [f" {fmt_metric(rep.F1):>6s}"]
        lines.append(" ".join(cells))
    return "\n".join(lines) + "\n"
