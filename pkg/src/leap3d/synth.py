"""Seeded synthetic scenes: labeled primitive worlds with simulated LiDAR
and camera observations, used as ground truth by the test harness and the
`synth` command.

Primitives are limited to shapes with exactly verifiable ray
intersections (horizontal ground plane, axis-aligned box, vertical
cylinder). The camera noise model flips a pixel's class with probability
epsilon and emits a peaked distribution on the chosen class, so fusion
quality has one interpretable knob.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError
from .geometry import CameraIntrinsics, PointCloud, RigidTransform
from .label2d import PixelProbMap, RegionProposal
from .taxonomy import PromptMap

_T_MIN = 1e-6  # hits closer than this are the sensor itself


@dataclass(frozen=True)
class GroundPlane:
    z: float
    class_index: int


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    class_index: int


@dataclass(frozen=True)
class Cylinder:
    center: tuple[float, float]  # axis position in xy
    radius: float
    z_min: float
    z_max: float
    class_index: int


Primitive = GroundPlane | Box | Cylinder


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple[Primitive, ...]
    bounds: np.ndarray  # (2, 3): [min_corner, max_corner]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bounds", np.asarray(self.bounds, dtype=np.float64).reshape(2, 3))
        lo, hi = self.bounds
        if np.any(lo >= hi):
            raise ParameterError("scene bounds must have positive extent")
        for p in self.primitives:
            if p.class_index < 0:
                raise ParameterError("class index must be non-negative")
            if isinstance(p, GroundPlane):
                inside = lo[2] <= p.z <= hi[2]
            elif isinstance(p, Box):
                c, s = np.asarray(p.center), np.asarray(p.size)
                if np.any(s <= 0):
                    raise ParameterError("box size must be positive")
                inside = np.all(c - s / 2 >= lo) and np.all(c + s / 2 <= hi)
            else:
                if p.radius <= 0 or p.z_min >= p.z_max:
                    raise ParameterError("cylinder needs positive radius and z_min < z_max")
                cx, cy = p.center
                inside = (lo[0] <= cx - p.radius and cx + p.radius <= hi[0]
                          and lo[1] <= cy - p.radius and cy + p.radius <= hi[1]
                          and lo[2] <= p.z_min and p.z_max <= hi[2])
            if not inside:
                raise ParameterError(f"primitive {p} exceeds scene bounds")

    def num_classes_used(self) -> int:
        return max(p.class_index for p in self.primitives) + 1 if self.primitives else 0


@dataclass(frozen=True)
class LidarSpec:
    azimuth_count: int
    elevation_count: int
    azimuth_fov_deg: float
    elevation_min_deg: float
    elevation_max_deg: float
    max_range: float

    def __post_init__(self):
        if self.azimuth_count < 1 or self.elevation_count < 1:
            raise ParameterError("ray counts must be at least 1")
        if self.max_range <= 0:
            raise ParameterError("max_range must be positive")
        if self.elevation_min_deg > self.elevation_max_deg:
            raise ParameterError("elevation range is inverted")


@dataclass(frozen=True)
class SensorSpec:
    lidar: LidarSpec
    intrinsics: CameraIntrinsics
    cam_from_lidar: RigidTransform
    trajectory: tuple[RigidTransform, ...]  # world_from_sensor per frame


# --- ray casting --------------------------------------------------------------

def _intersect_plane(p: GroundPlane, origin, dirs, bounds):
    dz = dirs[:, 2]
    safe = np.where(dz != 0.0, dz, 1.0)
    t = np.where(dz != 0.0, (p.z - origin[2]) / safe, np.inf)
    with np.errstate(invalid="ignore"):  # inf * 0 on parallel rays
        x = origin[0] + t * dirs[:, 0]
        y = origin[1] + t * dirs[:, 1]
        ok = (t > _T_MIN) & (x >= bounds[0, 0]) & (x <= bounds[1, 0]) \
            & (y >= bounds[0, 1]) & (y <= bounds[1, 1])
    return np.where(ok, t, np.inf)


def _intersect_box(b: Box, origin, dirs, bounds):
    lo = np.asarray(b.center) - np.asarray(b.size) / 2.0
    hi = np.asarray(b.center) + np.asarray(b.size) / 2.0
    n = dirs.shape[0]
    t_enter = np.full(n, -np.inf)
    t_exit = np.full(n, np.inf)
    valid = np.ones(n, dtype=bool)
    for ax in range(3):
        d = dirs[:, ax]
        o = origin[ax]
        nz = d != 0.0
        safe = np.where(nz, d, 1.0)
        t1 = np.where(nz, (lo[ax] - o) / safe, -np.inf)
        t2 = np.where(nz, (hi[ax] - o) / safe, np.inf)
        valid &= nz | ((o >= lo[ax]) & (o <= hi[ax]))
        t_enter = np.maximum(t_enter, np.minimum(t1, t2))
        t_exit = np.minimum(t_exit, np.maximum(t1, t2))
    t = np.where(t_enter > _T_MIN, t_enter, t_exit)
    ok = valid & (t_exit >= t_enter) & (t > _T_MIN)
    return np.where(ok, t, np.inf)


def _intersect_cylinder(cy: Cylinder, origin, dirs, bounds):
    ox = origin[0] - cy.center[0]
    oy = origin[1] - cy.center[1]
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    best = np.full(dirs.shape[0], np.inf)
    # side surface
    a = dx * dx + dy * dy
    b = 2.0 * (ox * dx + oy * dy)
    c = ox * ox + oy * oy - cy.radius * cy.radius
    disc = b * b - 4.0 * a * c
    has = (a > 0.0) & (disc >= 0.0)
    sq = np.sqrt(np.where(has, disc, 0.0))
    safe_a = np.where(a > 0.0, a, 1.0)
    for sign in (-1.0, 1.0):
        t = (-b + sign * sq) / (2.0 * safe_a)
        z = origin[2] + t * dz
        ok = has & (t > _T_MIN) & (z >= cy.z_min) & (z <= cy.z_max) & (t < best)
        best = np.where(ok, t, best)
    # end caps
    nz = dz != 0.0
    safe_z = np.where(nz, dz, 1.0)
    for z_cap in (cy.z_min, cy.z_max):
        t = np.where(nz, (z_cap - origin[2]) / safe_z, np.inf)
        with np.errstate(invalid="ignore"):  # inf * 0 on horizontal rays
            px = ox + t * dx
            py = oy + t * dy
            ok = nz & (t > _T_MIN) & (px * px + py * py <= cy.radius * cy.radius) & (t < best)
        best = np.where(ok, t, best)
    return best


def cast_rays(scene: SceneSpec, origin, dirs) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit per ray: (distance, class index), inf/-1 on miss."""
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    best_t = np.full(dirs.shape[0], np.inf)
    best_cls = np.full(dirs.shape[0], -1, dtype=np.int32)
    for prim in scene.primitives:
        if isinstance(prim, GroundPlane):
            t = _intersect_plane(prim, origin, dirs, scene.bounds)
        elif isinstance(prim, Box):
            t = _intersect_box(prim, origin, dirs, scene.bounds)
        else:
            t = _intersect_cylinder(prim, origin, dirs, scene.bounds)
        closer = t < best_t
        best_t[closer] = t[closer]
        best_cls[closer] = prim.class_index
    return best_t, best_cls


def lidar_directions(spec: LidarSpec) -> np.ndarray:
    """Unit ray directions of the azimuth/elevation grid, sensor frame
    (x forward, y left, z up)."""
    full_circle = spec.azimuth_fov_deg >= 360.0
    az = np.radians(np.linspace(-spec.azimuth_fov_deg / 2.0, spec.azimuth_fov_deg / 2.0,
                                spec.azimuth_count, endpoint=not full_circle))
    el = np.radians(np.linspace(spec.elevation_min_deg, spec.elevation_max_deg,
                                spec.elevation_count))
    aa, ee = np.meshgrid(az, el, indexing="ij")
    aa, ee = aa.reshape(-1), ee.reshape(-1)
    return np.stack([np.cos(ee) * np.cos(aa), np.cos(ee) * np.sin(aa), np.sin(ee)], axis=1)


def simulate_scan(scene: SceneSpec, lidar: LidarSpec,
                  world_from_sensor: RigidTransform) -> tuple[PointCloud, np.ndarray]:
    """One LiDAR sweep: points in the sensor frame plus their true classes.

    Misses and hits beyond max range produce no point. Deterministic.
    """
    dirs = lidar_directions(lidar)
    dirs_world = dirs @ world_from_sensor.rotation.T
    t, cls = cast_rays(scene, world_from_sensor.translation, dirs_world)
    hit = np.isfinite(t) & (t <= lidar.max_range)
    points = dirs[hit] * t[hit, None]  # sensor frame directly
    return PointCloud(points=points.astype(np.float32)), cls[hit]


def pixel_classes(scene: SceneSpec, k: CameraIntrinsics, world_from_camera: RigidTransform,
                  noise: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel observed class after the flip noise: (coverage, chosen).

    chosen holds one class per covered pixel in row-major order. With
    probability noise a pixel's true class is replaced by a uniformly
    random wrong one. Deterministic per seed.
    """
    if not (0.0 <= noise <= 1.0):
        raise ParameterError(f"noise must be in [0, 1], got {noise}")
    uu, vv = np.meshgrid(np.arange(k.width), np.arange(k.height), indexing="xy")
    dirs_cam = np.stack([(uu.reshape(-1) - k.cx) / k.fx,
                         (vv.reshape(-1) - k.cy) / k.fy,
                         np.ones(k.width * k.height)], axis=1)
    dirs_cam /= np.linalg.norm(dirs_cam, axis=1, keepdims=True)
    dirs_world = dirs_cam @ world_from_camera.rotation.T
    t, cls = cast_rays(scene, world_from_camera.translation, dirs_world)
    covered = np.isfinite(t)
    chosen = cls[covered].astype(np.int64)
    c = scene.num_classes_used()
    if noise > 0.0 and c > 1:
        rng = np.random.default_rng(seed)
        flip = rng.random(chosen.shape[0]) < noise
        wrong = rng.integers(0, c - 1, size=chosen.shape[0])
        wrong = np.where(wrong >= chosen, wrong + 1, wrong)  # skip the true class
        chosen = np.where(flip, wrong, chosen)
    return covered.reshape(k.height, k.width), chosen.astype(np.int32)


def class_distribution_rows(chosen: np.ndarray, num_classes: int, peak: float) -> np.ndarray:
    """Peaked distribution per row: peak on the chosen class, rest uniform."""
    if not (1.0 / num_classes < peak <= 1.0):
        raise ParameterError(f"peak must be in (1/{num_classes}, 1], got {peak}")
    n = chosen.shape[0]
    if num_classes == 1:
        return np.ones((n, 1), dtype=np.float64)
    rows = np.full((n, num_classes), (1.0 - peak) / (num_classes - 1), dtype=np.float64)
    rows[np.arange(n), chosen] = peak
    return rows


def simulate_pixel_probs(scene: SceneSpec, k: CameraIntrinsics,
                         world_from_camera: RigidTransform, noise: float, peak: float,
                         seed, num_classes: int | None = None) -> PixelProbMap:
    """Camera soft-label map with flip noise; uncovered where rays miss."""
    c = num_classes if num_classes is not None else scene.num_classes_used()
    coverage, chosen = pixel_classes(scene, k, world_from_camera, noise, seed)
    rows = class_distribution_rows(chosen, c, peak)
    return PixelProbMap(width=k.width, height=k.height, coverage=coverage,
                        probs=rows.astype(np.float32))


# --- region-file emission ------------------------------------------------------

def regions_for_frame(coverage: np.ndarray, chosen: np.ndarray, num_classes: int,
                      pm: PromptMap, peak: float,
                      confidence: float = 0.9) -> list[tuple[RegionProposal, np.ndarray]]:
    """One masked region per observed class, with logits that reproduce the
    peaked distribution exactly under per-class max selection + softmax.

    Extra prompts of a class get a strictly lower logit, so prompt
    selection is exercised without changing the result.
    """
    if not (0.0 < confidence < 1.0):
        raise ParameterError(f"confidence must be in (0, 1), got {confidence}")
    h, w = coverage.shape
    flat_cls = np.full(h * w, -1, dtype=np.int64)
    flat_cls[coverage.reshape(-1)] = chosen
    grid_cls = flat_cls.reshape(h, w)
    entries = []
    # shift puts the best prompt's similarity exactly at `confidence`
    shift = math.log(confidence / (1.0 - confidence))
    for cls in np.unique(chosen):
        mask = grid_cls == cls
        dist = class_distribution_rows(np.array([cls]), num_classes, peak)[0]
        # floor keeps logits finite (JSON-safe) when peak is exactly 1;
        # softmax puts ~1e-12 mass on the floored classes, argmax unchanged
        dist = np.maximum(dist, 1e-12)
        class_logits = np.log(dist) - math.log(dist[cls]) + shift
        logits = np.empty(len(pm), dtype=np.float64)
        seen: set[int] = set()
        for j, (_text, ci) in enumerate(pm.prompts):
            logits[j] = class_logits[ci] if ci not in seen else class_logits[ci] - 1.0
            seen.add(ci)
        ys, xs = np.nonzero(mask)
        bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
        entries.append((RegionProposal(bbox=bbox, logits=logits), mask))
    return entries


# --- JSON round trip -----------------------------------------------------------

def _prim_to_json(p: Primitive) -> dict:
    if isinstance(p, GroundPlane):
        return {"shape": "ground", "class": p.class_index, "z": p.z}
    if isinstance(p, Box):
        return {"shape": "box", "class": p.class_index, "center": list(p.center),
                "size": list(p.size)}
    return {"shape": "cylinder", "class": p.class_index, "center": list(p.center),
            "radius": p.radius, "zmin": p.z_min, "zmax": p.z_max}


def _prim_from_json(d: dict) -> Primitive:
    shape = d.get("shape")
    if shape == "ground":
        return GroundPlane(z=float(d["z"]), class_index=int(d["class"]))
    if shape == "box":
        return Box(center=tuple(float(x) for x in d["center"]),
                   size=tuple(float(x) for x in d["size"]), class_index=int(d["class"]))
    if shape == "cylinder":
        return Cylinder(center=tuple(float(x) for x in d["center"]), radius=float(d["radius"]),
                        z_min=float(d["zmin"]), z_max=float(d["zmax"]),
                        class_index=int(d["class"]))
    raise FormatError(f"unknown primitive shape {shape!r}")


def save_scene(path, scene: SceneSpec) -> None:
    data = {"seed": scene.seed, "bounds": scene.bounds.tolist(),
            "primitives": [_prim_to_json(p) for p in scene.primitives]}
    Path(path).write_text(json.dumps(data, indent=2))


def load_scene(path) -> SceneSpec:
    try:
        data = json.loads(Path(path).read_text())
        return SceneSpec(primitives=tuple(_prim_from_json(p) for p in data["primitives"]),
                         bounds=np.array(data["bounds"], dtype=np.float64),
                         seed=int(data.get("seed", 0)))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"cannot read scene file {path}: {exc}") from exc


def save_sensor(path, sensor: SensorSpec) -> None:
    k = sensor.intrinsics
    data = {
        "lidar": {
            "azimuth_count": sensor.lidar.azimuth_count,
            "elevation_count": sensor.lidar.elevation_count,
            "azimuth_fov_deg": sensor.lidar.azimuth_fov_deg,
            "elevation_min_deg": sensor.lidar.elevation_min_deg,
            "elevation_max_deg": sensor.lidar.elevation_max_deg,
            "max_range": sensor.lidar.max_range,
        },
        "camera": {
            "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
            "width": k.width, "height": k.height,
            "cam_from_lidar": sensor.cam_from_lidar.as_matrix34().reshape(-1).tolist(),
        },
        "trajectory": [p.as_matrix34().reshape(-1).tolist() for p in sensor.trajectory],
    }
    Path(path).write_text(json.dumps(data, indent=2))


def load_sensor(path) -> SensorSpec:
    try:
        data = json.loads(Path(path).read_text())
        ld = data["lidar"]
        cam = data["camera"]
        lidar = LidarSpec(
            azimuth_count=int(ld["azimuth_count"]),
            elevation_count=int(ld["elevation_count"]),
            azimuth_fov_deg=float(ld["azimuth_fov_deg"]),
            elevation_min_deg=float(ld["elevation_min_deg"]),
            elevation_max_deg=float(ld["elevation_max_deg"]),
            max_range=float(ld["max_range"]),
        )
        intrinsics = CameraIntrinsics(fx=float(cam["fx"]), fy=float(cam["fy"]),
                                      cx=float(cam["cx"]), cy=float(cam["cy"]),
                                      width=int(cam["width"]), height=int(cam["height"]))
        cam_from_lidar = RigidTransform.from_matrix34(np.array(cam["cam_from_lidar"]))
        trajectory = tuple(RigidTransform.from_matrix34(np.array(row))
                           for row in data.get("trajectory", []))
        return SensorSpec(lidar=lidar, intrinsics=intrinsics, cam_from_lidar=cam_from_lidar,
                          trajectory=trajectory)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"cannot read sensor file {path}: {exc}") from exc


def kitti_camera_mount() -> RigidTransform:
    """cam-from-LiDAR with the usual axis swap: LiDAR x forward, y left,
    z up; camera z forward, x right, y down."""
    return RigidTransform(np.array([[0.0, -1.0, 0.0],
                                    [0.0, 0.0, -1.0],
                                    [1.0, 0.0, 0.0]]), np.zeros(3))


def circle_trajectory(radius: float, height: float, count: int,
                      start_angle: float = 0.0, sweep: float = 2.0 * math.pi) -> tuple[RigidTransform, ...]:
    """Poses on a horizontal circle, x axis tangent (facing travel direction)."""
    poses = []
    for i in range(count):
        ang = start_angle + sweep * i / max(count, 1)
        heading = ang + math.pi / 2.0
        ch, sh = math.cos(heading), math.sin(heading)
        rot = np.array([[ch, -sh, 0.0], [sh, ch, 0.0], [0.0, 0.0, 1.0]])
        t = np.array([radius * math.cos(ang), radius * math.sin(ang), height])
        poses.append(RigidTransform(rot, t))
    return tuple(poses)
