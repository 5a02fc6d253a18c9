import math

import numpy as np
import pytest
from scipy.special import expit

from leap3d.errors import DimensionError, FormatError, ParameterError
from leap3d.label2d import (MaskedRegion, PixelProbMap, RegionProposal, assemble_pixel_probs,
                            bbox_mask, decode_rle, encode_rle, filter_regions, rasterize,
                            read_region_file, region_class_probs, write_region_file)
from leap3d.taxonomy import PromptMap


def region(logits, bbox=(0, 0, 4, 4)):
    return RegionProposal(bbox=bbox, logits=np.asarray(logits, dtype=np.float64))


class TestFilterRegions:
    def test_keeps_above_threshold(self):
        # max sigmoid 0.3 with the published automotive threshold 0.25
        r = region([math.log(0.3 / 0.7)])
        assert filter_regions([r], 0.25) == [r]

    def test_empty_input(self):
        assert filter_regions([], 0.5) == []

    def test_drops_weak_logits(self):
        r = region([-10.0, -10.0])  # sigmoid ~ 4.5e-5
        assert filter_regions([r], 0.2) == []

    def test_threshold_range(self):
        with pytest.raises(ParameterError):
            filter_regions([], 0.0)
        with pytest.raises(ParameterError):
            filter_regions([], 1.0)

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        regions = [region(rng.normal(size=3)) for _ in range(50)]
        once = filter_regions(regions, 0.4)
        assert filter_regions(once, 0.4) == once


class TestRegionClassProbs:
    def test_symmetric_softmax(self):
        pm = PromptMap(prompts=(("a", 0), ("b", 1)), num_classes=2)
        dist, conf = region_class_probs(region([0.0, 0.0]), pm)
        np.testing.assert_array_equal(dist, [0.5, 0.5])
        assert conf == pytest.approx(0.5)

    def test_softmax_of_selected_logits(self):
        pm = PromptMap(prompts=(("a", 0), ("b", 1)), num_classes=2)
        dist, _ = region_class_probs(region([math.log(3.0), 0.0]), pm)
        np.testing.assert_allclose(dist, [0.75, 0.25], atol=1e-12)

    def test_per_class_max_then_softmax(self):
        pm = PromptMap(prompts=(("car", 0), ("automobile", 0)), num_classes=1)
        dist, conf = region_class_probs(region([1.0, 2.0]), pm)
        np.testing.assert_array_equal(dist, [1.0])
        assert conf == pytest.approx(float(expit(2.0)))

    def test_synonym_below_best_is_invisible(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            logits = rng.normal(size=3)
            pm = PromptMap(prompts=(("a", 0), ("b", 1), ("c", 1)), num_classes=2)
            base, _ = region_class_probs(region(logits), pm)
            pm2 = PromptMap(prompts=(("a", 0), ("b", 1), ("c", 1), ("a2", 0)), num_classes=2)
            weaker = np.concatenate([logits, [logits[0] - 1.0]])
            added, _ = region_class_probs(region(weaker), pm2)
            np.testing.assert_array_equal(base, added)

    def test_logit_count_mismatch(self):
        pm = PromptMap(prompts=(("a", 0), ("b", 1)), num_classes=2)
        with pytest.raises(DimensionError):
            region_class_probs(region([0.0]), pm)


def mr(mask, dist, conf):
    return MaskedRegion(mask=np.asarray(mask, dtype=bool), dist=np.asarray(dist, float),
                        confidence=conf)


class TestRasterize:
    def test_single_mask_identity(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[1:3, 1:3] = True
        ppm = rasterize([mr(mask, [0.9, 0.1], 0.7)], 4, 4)
        np.testing.assert_array_equal(ppm.coverage, mask)
        np.testing.assert_allclose(ppm.probs, np.tile([0.9, 0.1], (4, 1)), atol=1e-7)

    def test_equal_confidence_overlap(self):
        mask = np.ones((2, 2), dtype=bool)
        ppm = rasterize([mr(mask, [1.0, 0.0], 0.6), mr(mask, [0.0, 1.0], 0.6)], 2, 2)
        np.testing.assert_allclose(ppm.probs, np.tile([0.5, 0.5], (4, 1)), atol=1e-7)

    def test_confidence_weighted_overlap(self):
        mask = np.ones((1, 1), dtype=bool)
        ppm = rasterize([mr(mask, [1.0, 0.0], 0.8), mr(mask, [0.0, 1.0], 0.4)], 1, 1)
        np.testing.assert_allclose(ppm.probs[0], [2.0 / 3.0, 1.0 / 3.0], atol=1e-7)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            rasterize([mr(np.ones((2, 3), dtype=bool), [1.0, 0.0], 0.5)], 2, 2)

    def test_empty(self):
        ppm = rasterize([], 3, 2, num_classes=4)
        assert not ppm.coverage.any()
        assert ppm.probs.shape == (0, 4)

    def test_convex_combination(self):
        rng = np.random.default_rng(7)
        h = w = 6
        regions = []
        for _ in range(4):
            mask = rng.random((h, w)) < 0.6
            if not mask.any():
                mask[0, 0] = True
            d = rng.random(3) + 1e-3
            regions.append(mr(mask, d / d.sum(), rng.uniform(0.1, 1.0)))
        ppm = rasterize(regions, w, h)
        dense = ppm.dense()
        for y in range(h):
            for x in range(w):
                covering = [r for r in regions if r.mask[y, x]]
                if not covering:
                    continue
                stack = np.stack([r.dist for r in covering])
                assert np.all(dense[y, x] >= stack.min(axis=0) - 1e-6)
                assert np.all(dense[y, x] <= stack.max(axis=0) + 1e-6)

    def test_mask_needs_pixels(self):
        with pytest.raises(ParameterError):
            mr(np.zeros((2, 2)), [1.0, 0.0], 0.5)


class TestRle:
    def test_round_trip(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            h, w = rng.integers(1, 12, size=2)
            mask = rng.random((h, w)) < rng.random()
            np.testing.assert_array_equal(decode_rle(encode_rle(mask), h, w), mask)

    def test_starts_with_zeros(self):
        mask = np.array([[True, True, False]])
        assert encode_rle(mask) == "0 2 1"

    def test_total_mismatch(self):
        with pytest.raises(FormatError):
            decode_rle("1 1", 2, 2)

    def test_bad_token(self):
        with pytest.raises(FormatError):
            decode_rle("1 x 2", 2, 2)


class TestRegionFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        mask = rng.random((6, 8)) < 0.4
        mask[2, 3] = True
        entries = [(region([0.2, -0.3, 1.0], bbox=(1, 1, 5, 4)), mask)]
        path = tmp_path / "000000.json"
        write_region_file(path, 8, 6, entries)
        w, h, loaded = read_region_file(path)
        assert (w, h) == (8, 6)
        got_region, got_mask = loaded[0]
        assert got_region.bbox == (1, 1, 5, 4)
        np.testing.assert_array_equal(got_region.logits, [0.2, -0.3, 1.0])
        np.testing.assert_array_equal(got_mask, mask)

    def test_missing_mask_falls_back_to_bbox(self, tmp_path):
        path = tmp_path / "r.json"
        write_region_file(path, 4, 4, [(region([0.5], bbox=(1, 0, 3, 2)), None)])
        _, _, loaded = read_region_file(path)
        np.testing.assert_array_equal(loaded[0][1], bbox_mask((1, 0, 3, 2), 4, 4))

    def test_bbox_outside_image(self, tmp_path):
        path = tmp_path / "r.json"
        path.write_text('{"width": 4, "height": 4, "regions": '
                        '[{"bbox": [0, 0, 9, 2], "logits": [0.1]}]}')
        with pytest.raises(FormatError):
            read_region_file(path)


class TestAssemble:
    def test_filters_then_rasterizes(self):
        pm = PromptMap(prompts=(("a", 0), ("b", 1)), num_classes=2)
        strong = region([2.0, -1.0], bbox=(0, 0, 2, 2))
        weak = region([-8.0, -9.0], bbox=(0, 0, 2, 2))
        mask = np.ones((2, 2), dtype=bool)
        ppm, masked = assemble_pixel_probs(2, 2, [(strong, mask), (weak, mask)], pm, 0.25)
        assert len(masked) == 1
        assert ppm.coverage.all()
        expected, _ = region_class_probs(strong, pm)
        np.testing.assert_allclose(ppm.probs, np.tile(expected, (4, 1)), atol=1e-7)
