"""Pinhole camera model, rigid transforms, and LiDAR-to-image projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, GeometryError, ParameterError

_ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ParameterError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ParameterError("principal point must lie inside the image")
        if self.width < 1 or self.height < 1:
            raise ParameterError("image size must be at least 1x1")


class RigidTransform:
    """Rotation + translation; rotation must be orthonormal with det +1."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation):
        r = np.array(rotation, dtype=np.float64)
        t = np.array(translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise DimensionError(f"rotation must be 3x3, got {r.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise GeometryError("transform entries must be finite")
        if np.max(np.abs(r @ r.T - np.eye(3))) > _ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise GeometryError("rotation is not orthonormal with determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def __setattr__(self, name, value):
        raise AttributeError("RigidTransform is immutable")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix34(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64).reshape(3, 4)
        return cls(m[:, :3], m[:, 3])

    def as_matrix34(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])

    def apply(self, points) -> np.ndarray:
        """Transform (n, 3) or (3,) points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self.compose(other))(x) == self(other(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __repr__(self):
        return f"RigidTransform(t={self.translation.tolist()})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


@dataclass
class PointCloud:
    """Points in the sensor frame, float32 like the on-disk format."""

    points: np.ndarray  # (n, 3) float32
    intensity: np.ndarray | None = None  # (n,) float32

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float32).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise GeometryError("point coordinates must be finite")
        if self.intensity is not None:
            self.intensity = np.ascontiguousarray(self.intensity, dtype=np.float32).reshape(-1)
            if self.intensity.shape[0] != self.points.shape[0]:
                raise DimensionError("intensity length must match point count")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class Projection:
    """Projected points kept as parallel arrays for vectorized lookups.

    Each row i is one surviving point: cloud index point_index[i], pixel
    (u[i], v[i]) inside the image, camera-frame depth[i] > 0.
    """

    point_index: np.ndarray  # (m,) int64
    u: np.ndarray  # (m,) int32
    v: np.ndarray  # (m,) int32
    depth: np.ndarray  # (m,) float64
    width: int
    height: int

    def __len__(self) -> int:
        return self.point_index.shape[0]


def _round_half_away(x: np.ndarray) -> np.ndarray:
    # np.round would round half to even; pixel ties round half away from zero
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def project(cloud: PointCloud, cam_from_lidar: RigidTransform, k: CameraIntrinsics) -> Projection:
    """Project points onto the image plane, dropping points behind the
    camera or outside the image bounds."""
    pts = cam_from_lidar.apply(cloud.points.astype(np.float64))
    in_front = pts[:, 2] > 0.0
    idx = np.flatnonzero(in_front)
    cam = pts[idx]
    z = cam[:, 2]
    u = _round_half_away(k.fx * cam[:, 0] / z + k.cx)
    v = _round_half_away(k.fy * cam[:, 1] / z + k.cy)
    inside = (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)
    return Projection(
        point_index=idx[inside],
        u=u[inside].astype(np.int32),
        v=v[inside].astype(np.int32),
        depth=z[inside],
        width=k.width,
        height=k.height,
    )


def intrinsics_from_projection_matrix(p: np.ndarray, width: int, height: int) -> CameraIntrinsics:
    """Read fx, fy, cx, cy out of a KITTI-style 3x4 projection matrix."""
    p = np.asarray(p, dtype=np.float64).reshape(3, 4)
    return CameraIntrinsics(fx=float(p[0, 0]), fy=float(p[1, 1]), cx=float(p[0, 2]), cy=float(p[1, 2]),
                            width=width, height=height)
