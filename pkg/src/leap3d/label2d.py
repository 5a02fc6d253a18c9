"""Per-pixel soft-label assembly from region proposals.

Regions arrive from an open-vocabulary detector as (bbox, prompt logits)
plus an optional binary mask per region. This module filters weak regions,
reduces prompt logits to a class distribution per region, and rasterizes
the masked regions into a per-pixel probability map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, softmax

from .errors import DimensionError, FormatError, ParameterError
from .taxonomy import PromptMap, normalize_rows


@dataclass(frozen=True)
class RegionProposal:
    """Box proposal with one raw logit per prompt."""

    bbox: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max (half-open)
    logits: np.ndarray  # (N,) float64, prompt order

    def __post_init__(self):
        object.__setattr__(self, "logits", np.asarray(self.logits, dtype=np.float64).reshape(-1))
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise ParameterError(f"degenerate bbox {self.bbox}")

    def max_similarity(self) -> float:
        return float(expit(self.logits).max())


@dataclass(frozen=True)
class MaskedRegion:
    """Binary mask with its class distribution and confidence weight."""

    mask: np.ndarray  # (H, W) bool
    dist: np.ndarray  # (c,) float64
    confidence: float  # max prompt similarity, in (0, 1]

    def __post_init__(self):
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        object.__setattr__(self, "dist", np.asarray(self.dist, dtype=np.float64))
        if not self.mask.any():
            raise ParameterError("mask must cover at least one pixel")
        if not (0.0 < self.confidence <= 1.0):
            raise ParameterError(f"confidence must be in (0, 1], got {self.confidence}")


@dataclass
class PixelProbMap:
    """Per-pixel class distributions over the covered part of an image.

    probs holds one row per covered pixel, in row-major pixel order,
    matching the on-disk layout. Uncovered pixels carry no distribution.
    """

    width: int
    height: int
    coverage: np.ndarray  # (H, W) bool
    probs: np.ndarray  # (n_covered, c) float32
    _flat_index: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.coverage = np.asarray(self.coverage, dtype=bool)
        if self.coverage.shape != (self.height, self.width):
            raise DimensionError(f"coverage shape {self.coverage.shape} != (H, W)")
        self.probs = np.ascontiguousarray(self.probs, dtype=np.float32)
        if self.probs.ndim != 2 or self.probs.shape[0] != int(self.coverage.sum()):
            raise DimensionError("probs row count must equal covered pixel count")

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    def pixel_rows(self) -> np.ndarray:
        """(H, W) int32 map from pixel to probs row, -1 where uncovered."""
        if self._flat_index is None:
            rows = np.full(self.height * self.width, -1, dtype=np.int32)
            cov = self.coverage.reshape(-1)
            rows[cov] = np.arange(int(cov.sum()), dtype=np.int32)
            self._flat_index = rows.reshape(self.height, self.width)
        return self._flat_index

    def prob_at(self, u: int, v: int) -> np.ndarray | None:
        row = self.pixel_rows()[v, u]
        return None if row < 0 else self.probs[row].astype(np.float64)

    def dense(self) -> np.ndarray:
        """(H, W, c) float64 array with zeros where uncovered (test helper)."""
        out = np.zeros((self.height, self.width, self.num_classes))
        out[self.coverage] = self.probs
        return out


def filter_regions(regions: list[RegionProposal], threshold: float) -> list[RegionProposal]:
    """Keep regions whose best prompt similarity reaches the threshold."""
    if not (0.0 < threshold < 1.0):
        raise ParameterError(f"threshold must be in (0, 1), got {threshold}")
    return [r for r in regions if r.max_similarity() >= threshold]


def region_class_probs(region: RegionProposal, pm: PromptMap) -> tuple[np.ndarray, float]:
    """Reduce a region's prompt logits to a class distribution.

    For each class, take the prompt with the highest similarity, then apply
    softmax to the selected raw logits. Confidence is the best similarity
    over all prompts.
    """
    logits = region.logits
    if logits.shape[0] != len(pm):
        raise DimensionError(f"expected {len(pm)} logits, got {logits.shape[0]}")
    cls = pm.class_indices
    selected = np.full(pm.num_classes, -np.inf)
    # sigmoid is monotone, so the per-class max-similarity prompt is the
    # per-class max-logit prompt
    np.maximum.at(selected, cls, logits)
    dist = softmax(selected)
    confidence = float(expit(logits).max())
    return dist, confidence


def rasterize(masked: list[MaskedRegion], width: int, height: int,
              num_classes: int | None = None) -> PixelProbMap:
    """Confidence-weighted average of overlapping masks, per pixel."""
    if not masked:
        return PixelProbMap(width, height, np.zeros((height, width), dtype=bool),
                            np.zeros((0, num_classes or 0), dtype=np.float32))
    c = masked[0].dist.shape[0]
    acc = np.zeros((height, width, c), dtype=np.float64)
    wsum = np.zeros((height, width), dtype=np.float64)
    for r in masked:
        if r.mask.shape != (height, width):
            raise DimensionError(f"mask shape {r.mask.shape} != ({height}, {width})")
        if r.dist.shape[0] != c:
            raise DimensionError("all regions must share one class count")
        acc[r.mask] += r.confidence * r.dist
        wsum[r.mask] += r.confidence
    coverage = wsum > 0.0
    probs = normalize_rows(acc[coverage] / wsum[coverage, None])
    return PixelProbMap(width, height, coverage, probs.astype(np.float32))


# --- run-length masks -------------------------------------------------------

def encode_rle(mask: np.ndarray) -> str:
    """Row-major run lengths, alternating zero/one runs, starting with zeros."""
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    if flat.size == 0:
        return ""
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return " ".join(str(r) for r in runs)


def decode_rle(rle: str, height: int, width: int) -> np.ndarray:
    try:
        runs = [int(tok) for tok in rle.split()]
    except ValueError as exc:
        raise FormatError(f"bad RLE token: {exc}") from exc
    if any(r < 0 for r in runs):
        raise FormatError("negative run length")
    total = sum(runs)
    if total != height * width:
        raise FormatError(f"RLE covers {total} pixels, image has {height * width}")
    values = np.arange(len(runs), dtype=np.int64) % 2
    flat = np.repeat(values.astype(bool), runs)
    return flat.reshape(height, width)


def bbox_mask(bbox: tuple[int, int, int, int], height: int, width: int) -> np.ndarray:
    """Fallback mask when the upstream data is box-only: fill the rectangle."""
    x0, y0, x1, y1 = bbox
    mask = np.zeros((height, width), dtype=bool)
    mask[y0:y1, x0:x1] = True
    return mask


# --- region files -----------------------------------------------------------

def read_region_file(path) -> tuple[int, int, list[tuple[RegionProposal, np.ndarray]]]:
    """Read one image's region file.

    JSON layout: {"width": W, "height": H, "regions": [{"bbox": [...],
    "logits": [...], "mask_rle": "..."}]}. A missing mask_rle falls back to
    filling the bbox rectangle.

    Returns (width, height, [(region, mask), ...]).
    """
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read region file {path}: {exc}") from exc
    try:
        width, height = int(data["width"]), int(data["height"])
        entries = data["regions"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"region file {path} missing field: {exc}") from exc
    out = []
    for e in entries:
        bbox = tuple(int(x) for x in e["bbox"])
        if not (0 <= bbox[0] < bbox[2] <= width and 0 <= bbox[1] < bbox[3] <= height):
            raise FormatError(f"bbox {bbox} outside {width}x{height} image in {path}")
        region = RegionProposal(bbox=bbox, logits=np.array(e["logits"], dtype=np.float64))
        if e.get("mask_rle") is not None:
            mask = decode_rle(e["mask_rle"], height, width)
        else:
            mask = bbox_mask(bbox, height, width)
        out.append((region, mask))
    return width, height, out


def write_region_file(path, width: int, height: int,
                      entries: list[tuple[RegionProposal, np.ndarray | None]]) -> None:
    regions = []
    for region, mask in entries:
        rec = {"bbox": list(region.bbox), "logits": region.logits.tolist()}
        if mask is not None:
            rec["mask_rle"] = encode_rle(mask)
        regions.append(rec)
    Path(path).write_text(json.dumps({"width": width, "height": height, "regions": regions}))


def assemble_pixel_probs(width: int, height: int,
                         entries: list[tuple[RegionProposal, np.ndarray]],
                         pm: PromptMap, threshold: float) -> tuple[PixelProbMap, list[MaskedRegion]]:
    """Full 2D label assembly: filter, per-region class probs, rasterize.

    Also returns the masked regions so the caller can run per-mask depth
    filtering during painting.
    """
    if not (0.0 < threshold < 1.0):
        raise ParameterError(f"threshold must be in (0, 1), got {threshold}")
    masked = []
    for region, mask in entries:
        if region.max_similarity() < threshold or not mask.any():
            continue
        dist, conf = region_class_probs(region, pm)
        masked.append(MaskedRegion(mask=mask, dist=dist, confidence=conf))
    return rasterize(masked, width, height, num_classes=pm.num_classes), masked
