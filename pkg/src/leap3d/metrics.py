"""Confusion-matrix accumulation and IoU metrics.

The matrix has shape (c, c + 1): rows are ground truth, columns are
predictions, and the extra column tallies ignore-predictions when the
caller asked for them to count as errors. Ground-truth ignores are always
skipped.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ParameterError, TaxonomyError, UndefinedMetricError
from .taxonomy import ClassTaxonomy

MODE_IGNORE_UNLABELED = "ignore-unlabeled"
MODE_COUNT_AS_WRONG = "count-as-wrong"


class ConfusionMatrix:
    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise ParameterError("num_classes must be at least 1")
        self.num_classes = int(num_classes)
        self.counts = np.zeros((num_classes, num_classes + 1), dtype=np.int64)
        self.ignored = 0

    def accumulate(self, gt, pred, ignore_label: int, mode: str = MODE_IGNORE_UNLABELED) -> None:
        """Tally one batch of (ground truth, prediction) pairs.

        Ground-truth ignores are skipped. Prediction ignores are skipped in
        ignore-unlabeled mode; in count-as-wrong mode they land in the
        dedicated last column, which counts as a false negative for the
        ground-truth class and never as a true positive.
        """
        if mode not in (MODE_IGNORE_UNLABELED, MODE_COUNT_AS_WRONG):
            raise ParameterError(f"unknown mode {mode!r}")
        gt = np.asarray(gt).reshape(-1)
        pred = np.asarray(pred).reshape(-1)
        if gt.shape != pred.shape:
            raise DimensionError(f"gt has {gt.shape[0]} entries, pred has {pred.shape[0]}")
        c = self.num_classes
        gt_valid = gt != ignore_label
        if np.any((gt[gt_valid] < 0) | (gt[gt_valid] >= c)):
            raise ParameterError("ground-truth label outside taxonomy")
        pred_ignore = pred == ignore_label
        if mode == MODE_IGNORE_UNLABELED:
            keep = gt_valid & ~pred_ignore
        else:
            keep = gt_valid
        self.ignored += int(gt.shape[0] - keep.sum())
        g = gt[keep].astype(np.int64)
        p = pred[keep].astype(np.int64)
        p = np.where(p == ignore_label, c, p)
        if np.any((p < 0) | (p > c)):
            raise ParameterError("prediction label outside taxonomy")
        flat = np.bincount(g * (c + 1) + p, minlength=c * (c + 1))
        self.counts += flat.reshape(c, c + 1)

    def add(self, other: "ConfusionMatrix") -> None:
        if other.num_classes != self.num_classes:
            raise DimensionError("cannot add matrices with different class counts")
        self.counts += other.counts
        self.ignored += other.ignored

    def total(self) -> int:
        return int(self.counts.sum())


def iou(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class TP / (TP + FP + FN); NaN where the class never occurs."""
    counts = cm.counts
    tp = np.diag(counts[:, : cm.num_classes]).astype(np.float64)
    fn = counts.sum(axis=1) - tp  # row includes the ignore column
    fp = counts[:, : cm.num_classes].sum(axis=0) - tp
    denom = tp + fp + fn
    out = np.full(cm.num_classes, np.nan)
    defined = denom > 0
    out[defined] = tp[defined] / denom[defined]
    return out


def miou(cm: ConfusionMatrix) -> float:
    """Mean IoU over defined classes, in percent."""
    vals = iou(cm)
    defined = ~np.isnan(vals)
    if not np.any(defined):
        raise UndefinedMetricError("no class has any observation")
    return float(vals[defined].mean() * 100.0)


def rebin_by_category(cm: ConfusionMatrix, taxonomy: ClassTaxonomy) -> ConfusionMatrix:
    """Collapse the matrix onto the taxonomy's coarse categories."""
    if taxonomy.categories is None:
        raise TaxonomyError("taxonomy has no category map")
    if taxonomy.num_classes != cm.num_classes:
        raise DimensionError("taxonomy class count does not match the matrix")
    missing = [i for i in range(cm.num_classes) if i not in taxonomy.categories]
    if missing:
        raise TaxonomyError(f"category map missing classes {missing}")
    n_cat = max(taxonomy.categories.values()) + 1
    out = ConfusionMatrix(n_cat)
    cat_of = np.array([taxonomy.categories[i] for i in range(cm.num_classes)], dtype=np.int64)
    col_map = np.concatenate([cat_of, [n_cat]])  # ignore column stays last
    for g in range(cm.num_classes):
        for p in range(cm.num_classes + 1):
            out.counts[cat_of[g], col_map[p]] += cm.counts[g, p]
    out.ignored = cm.ignored
    return out


def category_miou(cm: ConfusionMatrix, taxonomy: ClassTaxonomy) -> float:
    return miou(rebin_by_category(cm, taxonomy))


def apply_merge_map(labels, taxonomy: ClassTaxonomy) -> np.ndarray:
    """Map labels through the taxonomy's merge map; ignores pass through."""
    if taxonomy.merge_map is None:
        raise TaxonomyError("taxonomy has no merge map")
    labels = np.asarray(labels).reshape(-1)
    out = labels.copy()
    for src, dst in taxonomy.merge_map.items():
        out[labels == src] = dst
    return out


def report(cm: ConfusionMatrix, taxonomy: ClassTaxonomy,
           labeled_fraction: float | None = None) -> dict:
    """JSON-ready metric summary."""
    vals = iou(cm)
    per_class = {
        taxonomy.classes[i]: (None if np.isnan(vals[i]) else round(float(vals[i]) * 100.0, 4))
        for i in range(cm.num_classes)
    }
    rep = {
        "miou": round(miou(cm), 4),
        "per_class_iou": per_class,
        "evaluated_points": cm.total(),
        "ignored_points": cm.ignored,
    }
    if taxonomy.categories is not None:
        rep["category_miou"] = round(category_miou(cm, taxonomy), 4)
    if labeled_fraction is not None:
        rep["labeled_point_fraction"] = round(float(labeled_fraction), 6)
    return rep
