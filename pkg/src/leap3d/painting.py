"""Attach pixel class distributions to projected points and scrub
occlusion bleed-through with per-mask depth clustering.

Labels of foreground objects otherwise leak onto points behind them:
a mask's pixels can collect points at very different camera depths.
Points within one mask should be close in 3D, so each mask keeps only
its largest depth cluster.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .geometry import PointCloud, Projection
from .label2d import MaskedRegion, PixelProbMap


@dataclass
class PaintedCloud:
    """Point cloud whose points optionally carry a class distribution."""

    points: np.ndarray  # (n, 3) float32
    probs: np.ndarray  # (n, c) float32; rows meaningful only where labeled
    labeled: np.ndarray  # (n,) bool

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float32).reshape(-1, 3)
        self.probs = np.ascontiguousarray(self.probs, dtype=np.float32)
        self.labeled = np.asarray(self.labeled, dtype=bool).reshape(-1)
        n = self.points.shape[0]
        if self.probs.shape[0] != n or self.labeled.shape[0] != n:
            raise DimensionError("points, probs, and labeled must share length")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    def label_count(self) -> int:
        return int(self.labeled.sum())


def paint(cloud: PointCloud, ppm: PixelProbMap, proj: Projection) -> PaintedCloud:
    """Give each projected point the distribution of its pixel.

    Points landing on uncovered pixels, and points that did not project,
    stay unlabeled.
    """
    if proj.width != ppm.width or proj.height != ppm.height:
        raise DimensionError(
            f"projection image {proj.width}x{proj.height} != map {ppm.width}x{ppm.height}")
    n = len(cloud)
    c = ppm.num_classes
    probs = np.zeros((n, c), dtype=np.float32)
    labeled = np.zeros(n, dtype=bool)
    if len(proj):
        rows = ppm.pixel_rows()[proj.v, proj.u]
        hit = rows >= 0
        pts = proj.point_index[hit]
        probs[pts] = ppm.probs[rows[hit]]
        labeled[pts] = True
    return PaintedCloud(points=cloud.points, probs=probs, labeled=labeled)


def depth_cluster_filter(masked: MaskedRegion, proj: Projection, gap: float) -> np.ndarray:
    """Indices of points this mask keeps after 1D depth-gap clustering.

    Projected points inside the mask are sorted by camera depth and split
    wherever consecutive depths differ by more than gap. The cluster with
    the most members survives; size ties go to the nearest cluster.
    Returns sorted unique cloud indices.
    """
    if not (gap > 0.0):
        raise ParameterError(f"gap must be positive, got {gap}")
    if masked.mask.shape != (proj.height, proj.width):
        raise DimensionError("mask and projection image sizes differ")
    inside = masked.mask[proj.v, proj.u]
    idx = proj.point_index[inside]
    if idx.size == 0:
        return idx.copy()
    depth = proj.depth[inside]
    order = np.argsort(depth, kind="stable")
    d_sorted = depth[order]
    # split points: first index of each new cluster
    breaks = np.flatnonzero(np.diff(d_sorted) > gap) + 1
    bounds = np.concatenate([[0], breaks, [d_sorted.size]])
    sizes = np.diff(bounds)
    # clusters are in ascending depth order, so the first maximal cluster
    # is also the nearest one; that is the documented tie-break
    best = int(np.argmax(sizes))
    keep = order[bounds[best]:bounds[best + 1]]
    return np.unique(idx[keep])


def apply_occlusion_filter(painted: PaintedCloud, ppm: PixelProbMap, proj: Projection,
                           masked: list[MaskedRegion], gap: float) -> PaintedCloud:
    """Unlabel points rejected by the depth filter of a dominating mask.

    A mask dominates a pixel when its own argmax class equals the fused
    pixel's argmax. A point dropped by any such covering mask loses its
    label: conservative, trading label count for precision.
    """
    if not masked:
        return painted
    labeled = painted.labeled.copy()
    pixel_rows = ppm.pixel_rows()
    pixel_argmax = ppm.probs.argmax(axis=1) if ppm.probs.size else np.zeros(0, dtype=np.int64)
    u_of = np.zeros(len(painted), dtype=np.int32)
    v_of = np.zeros(len(painted), dtype=np.int32)
    u_of[proj.point_index] = proj.u
    v_of[proj.point_index] = proj.v
    for region in masked:
        inside = region.mask[proj.v, proj.u]
        covered = proj.point_index[inside]
        if covered.size == 0:
            continue
        kept = depth_cluster_filter(region, proj, gap)
        dropped = np.setdiff1d(covered, kept, assume_unique=False)
        if dropped.size == 0:
            continue
        rows = pixel_rows[v_of[dropped], u_of[dropped]]
        has_dist = rows >= 0
        dominates = np.zeros(dropped.size, dtype=bool)
        dominates[has_dist] = pixel_argmax[rows[has_dist]] == int(np.argmax(region.dist))
        labeled[dropped[dominates]] = False
    return PaintedCloud(points=painted.points, probs=painted.probs, labeled=labeled)


def paint_cloud(cloud: PointCloud, ppm: PixelProbMap, proj: Projection,
                masked: list[MaskedRegion] | None = None,
                gap: float | None = 1.0) -> PaintedCloud:
    """Paint, then run the occlusion filter when masks and a finite gap
    are available."""
    painted = paint(cloud, ppm, proj)
    if masked and gap is not None and np.isfinite(gap):
        painted = apply_occlusion_filter(painted, ppm, proj, masked, gap)
    return painted
