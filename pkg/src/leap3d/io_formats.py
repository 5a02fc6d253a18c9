"""Readers and writers for every on-disk artifact.

Formats follow the KITTI odometry conventions where one exists (point
cloud .bin, pose .txt, label .label, calib .txt), so the engine runs on
real sequences unmodified. Novel binary formats carry a magic plus a
version and are rejected on mismatch:

  LPPM  per-pixel probability map: magic, u32 version, u32 H, u32 W,
        u32 c, H*W coverage bytes, then c x f32 per covered pixel in
        row-major order.
  LPPC  per-point soft labels for a paired cloud: magic, u32 version,
        u64 point count, u32 c, n labeled-flag bytes, then c x f32 per
        labeled point in point order.

Everything multi-byte is little-endian. All writes go through an atomic
replace, so a failed run never leaves a truncated file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._fileutil import atomic_write_bytes, atomic_write_text
from .errors import FormatError, GeometryError, ParameterError
from .geometry import PointCloud, RigidTransform
from .label2d import PixelProbMap
from .painting import PaintedCloud

_PPM_MAGIC = b"LPPM"
_PPM_VERSION = 1
_PPC_MAGIC = b"LPPC"
_PPC_VERSION = 1


# --- point clouds (.bin) ----------------------------------------------------

def write_point_cloud(path, cloud: PointCloud) -> None:
    """Consecutive little-endian f32 quadruples x, y, z, intensity."""
    n = len(cloud)
    data = np.empty((n, 4), dtype="<f4")
    data[:, :3] = cloud.points
    data[:, 3] = cloud.intensity if cloud.intensity is not None else 0.0
    atomic_write_bytes(path, data.tobytes())


def read_point_cloud(path) -> PointCloud:
    raw = Path(path).read_bytes()
    if len(raw) % 16 != 0:
        raise FormatError(f"{path}: length {len(raw)} is not a multiple of 16")
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return PointCloud(points=data[:, :3].copy(), intensity=data[:, 3].copy())


# --- poses (.txt) -----------------------------------------------------------

def write_poses(path, poses: list[RigidTransform]) -> None:
    """One 3x4 row-major transform per line, full float precision."""
    lines = [" ".join(f"{x:.17g}" for x in p.as_matrix34().reshape(-1)) for p in poses]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_poses(path) -> list[RigidTransform]:
    poses = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 12:
            raise FormatError(f"{path}:{ln}: expected 12 values, got {len(parts)}")
        try:
            vals = np.array([float(x) for x in parts], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path}:{ln}: {exc}") from exc
        if not np.all(np.isfinite(vals)):
            raise FormatError(f"{path}:{ln}: non-finite pose entry")
        m = vals.reshape(3, 4)
        poses.append(_rigid_from_matrix(m, f"{path}:{ln}"))
    return poses


def _rigid_from_matrix(m: np.ndarray, where: str) -> RigidTransform:
    """Accept slightly non-orthonormal rotations (file rounding), repair via
    SVD when off by up to 1e-3, reject anything worse."""
    r = m[:, :3]
    err = max(float(np.max(np.abs(r @ r.T - np.eye(3)))), abs(float(np.linalg.det(r)) - 1.0))
    if err <= 1e-9:
        return RigidTransform(r, m[:, 3])
    if err > 1e-3:
        raise GeometryError(f"{where}: rotation is not rigid (error {err:.2e})")
    u, _, vt = np.linalg.svd(r)
    fixed = u @ vt
    if np.linalg.det(fixed) < 0:
        fixed = u @ np.diag([1.0, 1.0, -1.0]) @ vt
    return RigidTransform(fixed, m[:, 3])


# --- calibration (.txt) -----------------------------------------------------

def write_calibration(path, p2: np.ndarray, cam_from_lidar: RigidTransform) -> None:
    p2 = np.asarray(p2, dtype=np.float64).reshape(3, 4)
    lines = [
        "P2: " + " ".join(f"{x:.17g}" for x in p2.reshape(-1)),
        "Tr: " + " ".join(f"{x:.17g}" for x in cam_from_lidar.as_matrix34().reshape(-1)),
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_calibration(path) -> tuple[np.ndarray, RigidTransform]:
    """Returns (3x4 projection matrix from the P2 line, cam-from-LiDAR
    transform from the Tr line)."""
    entries = {}
    for line in Path(path).read_text().splitlines():
        if ":" not in line:
            continue
        key, rest = line.split(":", 1)
        try:
            entries[key.strip()] = np.array([float(x) for x in rest.split()], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path}: bad {key.strip()} line: {exc}") from exc
    for key in ("P2", "Tr"):
        if key not in entries or entries[key].shape[0] != 12:
            raise FormatError(f"{path}: missing or malformed {key} line")
    tr = _rigid_from_matrix(entries["Tr"].reshape(3, 4), f"{path}: Tr")
    return entries["P2"].reshape(3, 4), tr


# --- pixel probability maps (.lppm) -----------------------------------------

def write_pixel_prob_map(path, ppm: PixelProbMap) -> None:
    header = struct.pack("<4sIIII", _PPM_MAGIC, _PPM_VERSION, ppm.height, ppm.width,
                         ppm.num_classes)
    cov = ppm.coverage.astype(np.uint8).tobytes()
    atomic_write_bytes(path, header + cov + ppm.probs.astype("<f4").tobytes())


def read_pixel_prob_map(path) -> PixelProbMap:
    data = Path(path).read_bytes()
    if len(data) < 20:
        raise FormatError(f"{path}: truncated header")
    magic, version, h, w, c = struct.unpack_from("<4sIIII", data, 0)
    if magic != _PPM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _PPM_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(data) < 20 + h * w:
        raise FormatError(f"{path}: truncated coverage")
    cov_bytes = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=20)
    if np.any(cov_bytes > 1):
        raise FormatError(f"{path}: coverage bytes must be 0 or 1")
    coverage = cov_bytes.astype(bool).reshape(h, w)
    n_cov = int(coverage.sum())
    expect = 20 + h * w + n_cov * c * 4
    if len(data) != expect:
        raise FormatError(f"{path}: length {len(data)} != expected {expect}")
    probs = np.frombuffer(data, dtype="<f4", count=n_cov * c, offset=20 + h * w)
    return PixelProbMap(width=w, height=h, coverage=coverage,
                        probs=probs.reshape(n_cov, c).copy())


# --- per-point labels (.label) ----------------------------------------------

def write_labels(path, labels: np.ndarray) -> None:
    """One u32 per point: class id in the low 16 bits, high bits zero."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise FormatError("class ids must fit in 16 bits")
    atomic_write_bytes(path, labels.astype("<u4").tobytes())


def read_labels(path, expected_count: int | None = None) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 4 != 0:
        raise FormatError(f"{path}: length {len(raw)} is not a multiple of 4")
    vals = np.frombuffer(raw, dtype="<u4")
    if np.any(vals > 0xFFFF):
        raise FormatError(f"{path}: upper 16 bits must be zero")
    if expected_count is not None and vals.shape[0] != expected_count:
        raise FormatError(f"{path}: {vals.shape[0]} labels for {expected_count} points")
    return vals.astype(np.int32)


def write_confidences(path, conf: np.ndarray) -> None:
    atomic_write_bytes(path, np.asarray(conf, dtype="<f4").tobytes())


def read_confidences(path, expected_count: int | None = None) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 4 != 0:
        raise FormatError(f"{path}: length {len(raw)} is not a multiple of 4")
    vals = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if expected_count is not None and vals.shape[0] != expected_count:
        raise FormatError(f"{path}: {vals.shape[0]} confidences for {expected_count} points")
    return vals


# --- painted clouds (.lppc) ---------------------------------------------------

def write_painted_cloud(path, pc: PaintedCloud) -> None:
    header = struct.pack("<4sIQI", _PPC_MAGIC, _PPC_VERSION, len(pc), pc.num_classes)
    flags = pc.labeled.astype(np.uint8).tobytes()
    probs = pc.probs[pc.labeled].astype("<f4").tobytes()
    atomic_write_bytes(path, header + flags + probs)


def read_painted_cloud(path, cloud: PointCloud) -> PaintedCloud:
    """Re-attach soft labels to their paired cloud."""
    data = Path(path).read_bytes()
    if len(data) < 20:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, c = struct.unpack_from("<4sIQI", data, 0)
    if magic != _PPC_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != _PPC_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n != len(cloud):
        raise FormatError(f"{path}: {n} points in file, {len(cloud)} in cloud")
    if len(data) < 20 + n:
        raise FormatError(f"{path}: truncated label flags")
    flag_bytes = np.frombuffer(data, dtype=np.uint8, count=n, offset=20)
    if np.any(flag_bytes > 1):
        raise FormatError(f"{path}: label flags must be 0 or 1")
    labeled = flag_bytes.astype(bool)
    n_lab = int(labeled.sum())
    expect = 20 + n + n_lab * c * 4
    if len(data) != expect:
        raise FormatError(f"{path}: length {len(data)} != expected {expect}")
    probs = np.zeros((n, c), dtype=np.float32)
    probs[labeled] = np.frombuffer(data, dtype="<f4", count=n_lab * c,
                                   offset=20 + n).reshape(n_lab, c)
    return PaintedCloud(points=cloud.points, probs=probs, labeled=labeled)


# --- colored PLY export -------------------------------------------------------

def export_ply(path, cloud: PointCloud, labels: np.ndarray, palette: dict[int, tuple]) -> None:
    """Binary little-endian PLY with per-vertex color from the class palette.

    The palette must cover every label value that occurs, including the
    ignore sentinel.
    """
    labels = np.asarray(labels).reshape(-1)
    if labels.shape[0] != len(cloud):
        raise FormatError(f"{labels.shape[0]} labels for {len(cloud)} points")
    present = np.unique(labels)
    missing = [int(v) for v in present if int(v) not in palette]
    if missing:
        raise ParameterError(f"palette missing entries for labels {missing}")
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {len(cloud)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        "end_header\n"
    )
    vert = np.empty(len(cloud), dtype=np.dtype(
        [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "u1"), ("g", "u1"), ("b", "u1")]))
    vert["x"], vert["y"], vert["z"] = cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]
    if len(cloud):
        lut_size = int(present.max()) + 1
        lut = np.zeros((lut_size, 3), dtype=np.uint8)
        for lab in present:
            lut[int(lab)] = palette[int(lab)]
        rgb = lut[labels]
        vert["r"], vert["g"], vert["b"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    atomic_write_bytes(path, header.encode("ascii") + vert.tobytes())


# --- dataset layout -----------------------------------------------------------

@dataclass
class DatasetLayout:
    """Directory conventions for one sequence.

    root/
      velodyne/NNNNNN.bin     point clouds
      regions/NNNNNN.json     region proposal files
      lppm/NNNNNN.lppm        pixel probability maps
      painted/NNNNNN.lppc     painted clouds
      labels/NNNNNN.label     predicted labels (+ .conf companions)
      labels_gt/NNNNNN.label  ground truth
      preds/NNNNNN.lppc       external model predictions
      poses.txt, calib.txt, taxonomy.json
    """

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    def frame_name(self, i: int) -> str:
        return f"{i:06d}"

    def cloud_path(self, i):
        return self.root / "velodyne" / f"{self.frame_name(i)}.bin"

    def region_path(self, i):
        return self.root / "regions" / f"{self.frame_name(i)}.json"

    def ppm_path(self, i):
        return self.root / "lppm" / f"{self.frame_name(i)}.lppm"

    def painted_path(self, i):
        return self.root / "painted" / f"{self.frame_name(i)}.lppc"

    def label_path(self, i):
        return self.root / "labels" / f"{self.frame_name(i)}.label"

    def confidence_path(self, i):
        return self.root / "labels" / f"{self.frame_name(i)}.conf"

    def gt_label_path(self, i):
        return self.root / "labels_gt" / f"{self.frame_name(i)}.label"

    def pred_path(self, i):
        return self.root / "preds" / f"{self.frame_name(i)}.lppc"

    @property
    def poses_file(self):
        return self.root / "poses.txt"

    @property
    def calib_file(self):
        return self.root / "calib.txt"

    @property
    def taxonomy_file(self):
        return self.root / "taxonomy.json"

    def frames(self) -> list[int]:
        """Frame indices from the cloud directory; must be contiguous from 0."""
        cloud_dir = self.root / "velodyne"
        if not cloud_dir.is_dir():
            raise FormatError(f"missing cloud directory {cloud_dir}")
        ids = sorted(int(p.stem) for p in cloud_dir.glob("*.bin"))
        if ids != list(range(len(ids))):
            raise FormatError(f"frame indices in {cloud_dir} are not contiguous from 0")
        return ids
