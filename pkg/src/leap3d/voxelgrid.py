"""Sparse voxel hash map with Bayesian class fusion.

Each occupied voxel keeps a class distribution that is the normalized
product of all clamped observations that fell inside it, updated one
observation at a time:

    posterior_i = prior_i * obs_i / sum_j(prior_j * obs_j)

The first observation initializes the voxel, which is the same update
applied to a uniform prior. A temperature exponent applied to incoming
observations weighs how much each source is trusted, and a floor keeps a
single hard observation from zeroing a class forever.

Integer voxel keys are packed into one 64-bit word (21 bits per axis),
so indices must stay within +-2^20 voxels of the origin; at the default
0.2 m cell that is roughly +-200 km.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from ._fileutil import atomic_write_bytes
from ._kernels import VoxelStore
from .errors import DimensionError, FormatError, GeometryError, ParameterError, ZeroMassError
from .geometry import PointCloud, RigidTransform
from .painting import PaintedCloud
from .taxonomy import IGNORE_LABEL, clamp_floor, clamp_floor_rows, normalize

_INDEX_LIMIT = 1 << 20  # voxel indices live in [-2^20, 2^20)
_OFFSET = _INDEX_LIMIT
_GRID_MAGIC = b"LVOX"
_GRID_VERSION = 1
DEFAULT_EPS = 1e-6


def voxel_keys(points, voxel_size: float) -> np.ndarray:
    """Per-axis floor(coord / voxel_size) for (n, 3) points.

    A coordinate exactly on a cell boundary belongs to the upper voxel.
    """
    if voxel_size <= 0:
        raise ParameterError(f"voxel_size must be positive, got {voxel_size}")
    p = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise GeometryError("cannot voxelize non-finite coordinates")
    return np.floor(p / voxel_size).astype(np.int64)


def voxel_key(position, voxel_size: float) -> tuple[int, int, int]:
    """Single-point version of voxel_keys."""
    k = voxel_keys(np.asarray(position, dtype=np.float64).reshape(1, 3), voxel_size)[0]
    return int(k[0]), int(k[1]), int(k[2])


def pack_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    if keys.size and (keys.min() < -_INDEX_LIMIT or keys.max() >= _INDEX_LIMIT):
        raise GeometryError(f"voxel index outside packable range [-{_INDEX_LIMIT}, {_INDEX_LIMIT})")
    return ((keys[:, 0] + _OFFSET) << 42) | ((keys[:, 1] + _OFFSET) << 21) | (keys[:, 2] + _OFFSET)


def unpack_keys(packed: np.ndarray) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.int64)
    mask = (1 << 21) - 1
    out = np.empty((packed.shape[0], 3), dtype=np.int64)
    out[:, 0] = (packed >> 42) - _OFFSET
    out[:, 1] = ((packed >> 21) & mask) - _OFFSET
    out[:, 2] = (packed & mask) - _OFFSET
    return out


def bayes_update(prior, obs) -> np.ndarray:
    """One multiplicative update: posterior proportional to prior * obs."""
    prior = np.asarray(prior, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if prior.shape != obs.shape or prior.ndim != 1:
        raise DimensionError(f"prior {prior.shape} and obs {obs.shape} must be equal-length vectors")
    post = prior * obs
    total = post.sum()
    if total <= 0.0:
        raise ZeroMassError("update produced a zero-mass posterior; clamp observations first")
    return post / total


def apply_temperature(d, tau: float) -> np.ndarray:
    """Sharpen (tau < 1) or soften (tau > 1) a distribution: d**(1/tau), renormalized."""
    if tau <= 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    d = np.asarray(d, dtype=np.float64)
    if tau == 1.0:
        return d.copy()
    return normalize(np.power(d, 1.0 / tau))


def _temperature_rows(rows: np.ndarray, tau: float) -> np.ndarray:
    if tau <= 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    if tau == 1.0:
        return rows
    powed = np.power(rows, 1.0 / tau)
    return powed / powed.sum(axis=1, keepdims=True)


def prepare_observations(rows: np.ndarray, tau: float, eps: float) -> np.ndarray:
    """Temperature then floor-clamp, row-wise: what actually enters the grid."""
    rows = np.asarray(rows, dtype=np.float64)
    return clamp_floor_rows(_temperature_rows(rows, tau), eps)


@dataclass(frozen=True)
class VoxelRecord:
    dist: np.ndarray  # (c,) float64, normalized
    obs_count: int


@dataclass(frozen=True)
class NeighborSet:
    """k nearest occupied voxels of a query voxel, self included at distance 0.

    Sorted by (distance, key lexicographic); weights are softmax(-distance)
    with distances in meters.
    """

    keys: np.ndarray  # (k, 3) int64
    distances: np.ndarray  # (k,) float64 meters
    weights: np.ndarray  # (k,) float64, sums to 1


class SparseVoxelGrid:
    """Hash map from integer voxel key to a fused class distribution."""

    def __init__(self, voxel_size: float, num_classes: int, store_cls=None):
        if voxel_size <= 0:
            raise ParameterError(f"voxel_size must be positive, got {voxel_size}")
        if num_classes < 1:
            raise ParameterError("num_classes must be at least 1")
        self.voxel_size = float(voxel_size)
        self.num_classes = int(num_classes)
        self._store_cls = store_cls or VoxelStore
        self._store = self._store_cls(self.num_classes)

    def __len__(self) -> int:
        return self._store.size

    @property
    def backend(self) -> str:
        return self._store.backend

    # --- ingestion ----------------------------------------------------------

    def insert_observation(self, position, obs, tau: float = 1.0, eps: float = DEFAULT_EPS) -> None:
        """Fuse one observation at a world position.

        The observation is tempered and clamped, then multiplied into the
        voxel's distribution; a fresh voxel stores it directly, which equals
        the update against a uniform prior.
        """
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (self.num_classes,):
            raise DimensionError(f"expected ({self.num_classes},) observation, got {obs.shape}")
        prepared = clamp_floor(apply_temperature(obs, tau), eps)
        packed = pack_keys(voxel_keys(np.reshape(position, (1, 3)), self.voxel_size))
        self._store.fuse(packed, prepared.reshape(1, -1))

    def fuse_painted_cloud(self, pc: PaintedCloud, world_from_sensor: RigidTransform,
                           tau: float = 1.0, eps: float = DEFAULT_EPS) -> int:
        """Insert every labeled point of a painted cloud; returns how many."""
        if pc.num_classes != self.num_classes:
            raise DimensionError(f"cloud carries {pc.num_classes} classes, grid has {self.num_classes}")
        mask = pc.labeled
        n = int(mask.sum())
        if n == 0:
            return 0
        world = world_from_sensor.apply(pc.points[mask].astype(np.float64))
        obs = prepare_observations(pc.probs[mask], tau, eps)
        packed = pack_keys(voxel_keys(world, self.voxel_size))
        self._store.fuse(packed, obs)
        return n

    def fuse_scans(self, scans, tau: float = 1.0, eps: float = DEFAULT_EPS, jobs: int = 1) -> int:
        """Fuse (PaintedCloud, world_from_sensor) pairs.

        With jobs > 1 the scans are split into per-worker partial grids that
        are merged afterwards; the fusion rule is order-invariant, so the
        result matches serial ingestion within rounding.
        """
        scans = list(scans)
        if jobs <= 1 or len(scans) <= 1:
            return sum(self.fuse_painted_cloud(pc, pose, tau, eps) for pc, pose in scans)
        chunks = [scans[i::jobs] for i in range(jobs)]
        chunks = [c for c in chunks if c]

        def build(chunk):
            part = SparseVoxelGrid(self.voxel_size, self.num_classes, self._store_cls)
            fused = sum(part.fuse_painted_cloud(pc, pose, tau, eps) for pc, pose in chunk)
            return part, fused

        total = 0
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            for part, fused in pool.map(build, chunks):
                self.merge_from(part)
                total += fused
        return total

    def merge_from(self, other: "SparseVoxelGrid") -> None:
        """Fold another grid in: per-voxel product of posteriors, counts add."""
        if other.num_classes != self.num_classes:
            raise DimensionError("cannot merge grids with different class counts")
        if other.voxel_size != self.voxel_size:
            raise ParameterError("cannot merge grids with different voxel sizes")
        self._store.merge(other._store.packed_view(), other._store.probs_view(),
                          other._store.counts_view())

    # --- access -------------------------------------------------------------

    def keys(self) -> np.ndarray:
        """(m, 3) int64 voxel keys, insertion order."""
        return unpack_keys(self._store.packed_view())

    def probs(self) -> np.ndarray:
        return self._store.probs_view().copy()

    def counts(self) -> np.ndarray:
        return self._store.counts_view().astype(np.int64)

    def record(self, key) -> VoxelRecord | None:
        packed = pack_keys(np.asarray(key, dtype=np.int64).reshape(1, 3))
        row = int(self._store.rows(packed)[0])
        if row < 0:
            return None
        return VoxelRecord(dist=self._store.probs_view()[row].copy(),
                           obs_count=int(self._store.counts_view()[row]))

    def __contains__(self, key) -> bool:
        return self.record(key) is not None

    # --- queries ------------------------------------------------------------

    def query_points(self, points_world, ignore_label: int = IGNORE_LABEL) -> tuple[np.ndarray, np.ndarray]:
        """Label of the containing voxel per point: (argmax class, max prob).

        Points in unoccupied voxels get (ignore_label, 0). Argmax ties go to
        the smallest class index.
        """
        pts = np.asarray(points_world, dtype=np.float64).reshape(-1, 3)
        labels = np.full(pts.shape[0], ignore_label, dtype=np.int32)
        conf = np.zeros(pts.shape[0], dtype=np.float64)
        if pts.shape[0] == 0 or len(self) == 0:
            return labels, conf
        rows = self._store.rows(pack_keys(voxel_keys(pts, self.voxel_size)))
        hit = rows >= 0
        if np.any(hit):
            dists = self._store.probs_view()[rows[hit]]
            labels[hit] = dists.argmax(axis=1).astype(np.int32)
            conf[hit] = dists.max(axis=1)
        return labels, conf

    def query_labels(self, cloud: PointCloud, world_from_sensor: RigidTransform,
                     ignore_label: int = IGNORE_LABEL) -> tuple[np.ndarray, np.ndarray]:
        world = world_from_sensor.apply(cloud.points.astype(np.float64))
        return self.query_points(world, ignore_label)

    # --- smoothing ----------------------------------------------------------

    def smooth(self, k: int) -> "SparseVoxelGrid":
        """Distance-weighted k-nearest averaging over occupied voxels.

        Every voxel's new distribution is the softmax(-distance)-weighted
        average over its k nearest occupied voxels (itself included at
        distance 0, so its own evidence gets the largest weight). All reads
        come from the pre-smoothing grid; keys and counts are preserved.
        """
        if k < 1:
            raise ParameterError(f"k must be at least 1, got {k}")
        out = SparseVoxelGrid(self.voxel_size, self.num_classes, self._store_cls)
        m = len(self)
        if m == 0:
            return out
        keys = self.keys()
        sel, d2 = _knn_select(keys, k)
        d_m = self.voxel_size * np.sqrt(d2.astype(np.float64))
        w = np.exp(-d_m)  # softmax(-d); self at d=0 caps the exponent at 1
        w /= w.sum(axis=1, keepdims=True)
        probs = self._store.probs_view()
        new_probs = np.einsum("mk,mkc->mc", w, probs[sel])
        new_probs /= new_probs.sum(axis=1, keepdims=True)
        out._store.bulk_insert(self._store.packed_view().copy(), new_probs,
                               self._store.counts_view().copy())
        return out

    def neighbor_set(self, key, k: int) -> NeighborSet:
        """The smoothing neighborhood of one occupied voxel."""
        if k < 1:
            raise ParameterError(f"k must be at least 1, got {k}")
        keys = self.keys()
        packed = pack_keys(np.asarray(key, dtype=np.int64).reshape(1, 3))
        row = int(self._store.rows(packed)[0])
        if row < 0:
            raise ParameterError(f"voxel {tuple(key)} is not occupied")
        sel, d2 = _knn_select(keys, k)
        order = np.lexsort((keys[sel[row], 2], keys[sel[row], 1], keys[sel[row], 0], d2[row]))
        sel_sorted = sel[row][order]
        d_sorted = self.voxel_size * np.sqrt(d2[row][order].astype(np.float64))
        w = np.exp(-d_sorted)
        return NeighborSet(keys=keys[sel_sorted], distances=d_sorted, weights=w / w.sum())

    # --- persistence --------------------------------------------------------

    def save(self, path) -> None:
        """Write the grid file: magic, version, voxel size, then per-voxel
        (3 x i32 key, u32 count, c x f32 probs), little-endian throughout."""
        m = len(self)
        header = struct.pack("<4sIfIQ", _GRID_MAGIC, _GRID_VERSION,
                             np.float32(self.voxel_size), self.num_classes, m)
        rec = np.empty(m, dtype=_record_dtype(self.num_classes))
        rec["key"] = self.keys().astype(np.int32)
        rec["count"] = self._store.counts_view()
        rec["probs"] = self._store.probs_view().astype(np.float32)
        atomic_write_bytes(path, header + rec.tobytes())

    @classmethod
    def load(cls, path, store_cls=None) -> "SparseVoxelGrid":
        """Read a grid file. Distributions come back exactly as stored
        (float32 resolution); fusion and smoothing renormalize downstream."""
        data = Path(path).read_bytes()
        if len(data) < 24:
            raise FormatError(f"{path}: truncated header")
        magic, version, voxel_size, c, m = struct.unpack_from("<4sIfIQ", data, 0)
        if magic != _GRID_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != _GRID_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if c < 1 or voxel_size <= 0 or not np.isfinite(voxel_size):
            raise FormatError(f"{path}: invalid header fields")
        dtype = _record_dtype(c)
        if len(data) - 24 != m * dtype.itemsize:
            raise FormatError(f"{path}: payload length mismatch")
        rec = np.frombuffer(data, dtype=dtype, count=m, offset=24)
        grid = cls(float(voxel_size), int(c), store_cls)
        if m == 0:
            return grid
        probs = rec["probs"].astype(np.float64)
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise FormatError(f"{path}: invalid probabilities")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-3):
            raise FormatError(f"{path}: unnormalized voxel distribution")
        if np.any(rec["count"] == 0):
            raise FormatError(f"{path}: stored voxel with zero observations")
        keys = rec["key"].astype(np.int64)
        try:
            packed = pack_keys(keys)
        except GeometryError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        try:
            grid._store.bulk_insert(packed, np.ascontiguousarray(probs),
                                    rec["count"].astype(np.uint32))
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        return grid


def _record_dtype(c: int) -> np.dtype:
    return np.dtype([("key", "<i4", (3,)), ("count", "<u4"), ("probs", "<f4", (c,))])


def _knn_select(keys: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k-nearest occupied voxels per voxel, with deterministic ties.

    Works in integer key space: squared center distances are exact int64,
    so distance ties are detected reliably and broken by lexicographic key
    order. Returns (row indices (m, kq), squared key distances (m, kq)).
    """
    m = keys.shape[0]
    kq = min(k, m)
    kf = keys.astype(np.float64)
    if m == kq:
        sel = np.broadcast_to(np.arange(m, dtype=np.int64), (m, m)).copy()
    else:
        tree = cKDTree(kf)
        d, idx = tree.query(kf, k=kq + 1)
        sel = idx[:, :kq].astype(np.int64)
        # a tie straddling the cut makes the tree's choice arbitrary;
        # re-resolve those rows exactly
        tie_rows = np.flatnonzero(d[:, kq - 1] == d[:, kq])
        if tie_rows.size:
            radii = d[tie_rows, kq - 1] + 1e-8
            balls = tree.query_ball_point(kf[tie_rows], r=radii)
            for r, cand in zip(tie_rows, balls):
                cand = np.asarray(cand, dtype=np.int64)
                delta = keys[cand] - keys[r]
                cand_d2 = np.sum(delta * delta, axis=1)
                order = np.lexsort((keys[cand, 2], keys[cand, 1], keys[cand, 0], cand_d2))
                sel[r] = cand[order[:kq]]
    delta = keys[sel] - keys[:, None, :]
    d2 = np.sum(delta * delta, axis=2)
    return sel, d2
