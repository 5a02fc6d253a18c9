import numpy as np
import pytest

from leap3d.errors import DimensionError, ParameterError, TaxonomyError, UndefinedMetricError
from leap3d.metrics import (MODE_COUNT_AS_WRONG, MODE_IGNORE_UNLABELED, ConfusionMatrix,
                            apply_merge_map, category_miou, iou, miou, rebin_by_category,
                            report)
from leap3d.taxonomy import ClassTaxonomy

IGNORE = 255


def brute_force_iou(gt, pred, num_classes, ignore):
    """Per-point set oracle: |A intersect B| / |A union B| per class."""
    gt, pred = np.asarray(gt), np.asarray(pred)
    keep = (gt != ignore) & (pred != ignore)
    out = np.full(num_classes, np.nan)
    for c in range(num_classes):
        a = set(np.flatnonzero(keep & (gt == c)).tolist())
        b = set(np.flatnonzero(keep & (pred == c)).tolist())
        if a or b:
            out[c] = len(a & b) / len(a | b)
    return out


class TestAccumulate:
    def test_diagonal(self):
        cm = ConfusionMatrix(3)
        labels = np.array([0, 1, 2] * 34)[:100]
        cm.accumulate(labels, labels, IGNORE)
        assert np.trace(cm.counts[:, :3]) == 100
        assert cm.counts.sum() == 100

    def test_all_pred_ignored(self):
        cm = ConfusionMatrix(2)
        gt = np.zeros(100, dtype=int)
        pred = np.full(100, IGNORE)
        cm.accumulate(gt, pred, IGNORE, MODE_IGNORE_UNLABELED)
        assert cm.ignored == 100
        assert cm.counts.sum() == 0

    def test_hand_tally(self):
        cm = ConfusionMatrix(2)
        cm.accumulate([0, 0, 1, 1], [0, 1, 1, 1], IGNORE)
        assert cm.counts[0, 0] == 1
        assert cm.counts[0, 1] == 1
        assert cm.counts[1, 1] == 2

    def test_count_as_wrong_mode(self):
        cm = ConfusionMatrix(2)
        cm.accumulate([0, 0, 1], [IGNORE, 0, 1], IGNORE, MODE_COUNT_AS_WRONG)
        assert cm.counts[0, 2] == 1  # dedicated column
        vals = iou(cm)
        assert vals[0] == pytest.approx(0.5)  # TP 1, FN 1
        assert vals[1] == pytest.approx(1.0)

    def test_gt_ignore_always_skipped(self):
        cm = ConfusionMatrix(2)
        cm.accumulate([IGNORE, 0], [1, 0], IGNORE, MODE_COUNT_AS_WRONG)
        assert cm.ignored == 1
        assert cm.counts.sum() == 1

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            ConfusionMatrix(2).accumulate([0], [0, 1], IGNORE)

    def test_bad_mode(self):
        with pytest.raises(ParameterError):
            ConfusionMatrix(2).accumulate([0], [0], IGNORE, "bogus")

    def test_additive(self):
        rng = np.random.default_rng(40)
        gt = rng.integers(0, 4, 500)
        pred = rng.integers(0, 4, 500)
        pred[rng.random(500) < 0.1] = IGNORE
        whole = ConfusionMatrix(4)
        whole.accumulate(gt, pred, IGNORE)
        halves = ConfusionMatrix(4)
        halves.accumulate(gt[:250], pred[:250], IGNORE)
        halves.accumulate(gt[250:], pred[250:], IGNORE)
        np.testing.assert_array_equal(whole.counts, halves.counts)
        assert whole.ignored == halves.ignored


class TestIou:
    def test_perfect(self):
        cm = ConfusionMatrix(3)
        cm.accumulate([0, 1, 2], [0, 1, 2], IGNORE)
        np.testing.assert_array_equal(iou(cm), [1.0, 1.0, 1.0])
        assert miou(cm) == pytest.approx(100.0)

    def test_disjoint(self):
        cm = ConfusionMatrix(2)
        cm.accumulate([0, 0], [1, 1], IGNORE)
        assert iou(cm)[0] == 0.0

    def test_half(self):
        cm = ConfusionMatrix(2)
        # class 0: TP=2, FP=1, FN=1
        cm.accumulate([0, 0, 0, 1, 1], [0, 0, 1, 0, 1], IGNORE)
        assert iou(cm)[0] == pytest.approx(0.5)

    def test_absent_class_excluded(self):
        cm = ConfusionMatrix(3)
        cm.accumulate([0, 1], [0, 1], IGNORE)
        vals = iou(cm)
        assert np.isnan(vals[2])
        assert miou(cm) == pytest.approx(100.0)

    def test_undefined(self):
        with pytest.raises(UndefinedMetricError):
            miou(ConfusionMatrix(2))

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(41)
        for _ in range(200):
            c = int(rng.integers(2, 7))
            n = int(rng.integers(1, 120))
            gt = rng.integers(0, c, n)
            pred = rng.integers(0, c, n)
            pred[rng.random(n) < 0.15] = IGNORE
            gt[rng.random(n) < 0.1] = IGNORE
            cm = ConfusionMatrix(c)
            cm.accumulate(gt, pred, IGNORE, MODE_IGNORE_UNLABELED)
            expected = brute_force_iou(gt, pred, c, IGNORE)
            got = iou(cm)
            np.testing.assert_array_equal(np.isnan(got), np.isnan(expected))
            np.testing.assert_array_equal(got[~np.isnan(got)], expected[~np.isnan(expected)])


class TestCategories:
    def taxonomy(self, categories):
        return ClassTaxonomy(classes=("a", "b", "c"), categories=categories, ignore_label=IGNORE)

    def test_single_category_is_perfect(self):
        cm = ConfusionMatrix(3)
        rng = np.random.default_rng(42)
        gt = rng.integers(0, 3, 100)
        pred = rng.integers(0, 3, 100)
        cm.accumulate(gt, pred, IGNORE)
        tax = self.taxonomy({0: 0, 1: 0, 2: 0})
        assert category_miou(cm, tax) == pytest.approx(100.0)

    def test_identity_map_equals_class_miou(self):
        cm = ConfusionMatrix(3)
        rng = np.random.default_rng(43)
        cm.accumulate(rng.integers(0, 3, 200), rng.integers(0, 3, 200), IGNORE)
        tax = self.taxonomy({0: 0, 1: 1, 2: 2})
        assert category_miou(cm, tax) == pytest.approx(miou(cm))

    def test_rebinned_tallies(self):
        # classes 0 and 1 merge; their cross-confusion becomes category TP
        cm = ConfusionMatrix(3)
        gt = np.array([0, 0, 1, 1, 2, 2])
        pred = np.array([1, 0, 0, 1, 2, 0])
        cm.accumulate(gt, pred, IGNORE)
        tax = self.taxonomy({0: 0, 1: 0, 2: 1})
        rb = rebin_by_category(cm, tax)
        # brute-force re-binned confusion oracle
        cat = np.array([0, 0, 1])
        expected = np.zeros((2, 3), dtype=np.int64)
        for g, p in zip(gt, pred):
            expected[cat[g], cat[p]] += 1
        np.testing.assert_array_equal(rb.counts, expected)

    def test_requires_category_map(self):
        tax = ClassTaxonomy(classes=("a", "b", "c"), ignore_label=IGNORE)
        with pytest.raises(TaxonomyError):
            category_miou(ConfusionMatrix(3), tax)

    def test_partial_map_rejected(self):
        with pytest.raises(TaxonomyError):
            rebin_by_category(ConfusionMatrix(3), self.taxonomy({0: 0, 1: 0}))


class TestMergeMap:
    def test_applies_and_passes_ignore(self):
        tax = ClassTaxonomy(classes=("a", "b", "c"), merge_map={2: 0}, ignore_label=IGNORE)
        got = apply_merge_map([0, 1, 2, IGNORE], tax)
        np.testing.assert_array_equal(got, [0, 1, 0, IGNORE])

    def test_requires_map(self):
        tax = ClassTaxonomy(classes=("a",), ignore_label=IGNORE)
        with pytest.raises(TaxonomyError):
            apply_merge_map([0], tax)


class TestReport:
    def test_fields(self):
        tax = ClassTaxonomy(classes=("a", "b"), categories={0: 0, 1: 0}, ignore_label=IGNORE)
        cm = ConfusionMatrix(2)
        cm.accumulate([0, 1], [0, 1], IGNORE)
        rep = report(cm, tax, labeled_fraction=0.5)
        assert rep["miou"] == pytest.approx(100.0)
        assert rep["category_miou"] == pytest.approx(100.0)
        assert rep["per_class_iou"] == {"a": 100.0, "b": 100.0}
        assert rep["labeled_point_fraction"] == 0.5
        assert rep["evaluated_points"] == 2
