"""Stage functions behind the CLI commands.

Each stage reads and writes the dataset-layout formats, so chaining the
individual commands is byte-identical to the end-to-end `run` command,
which calls these same functions.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import io_formats as iof
from ._fileutil import atomic_write_text
from .errors import FormatError, ParameterError
from .geometry import intrinsics_from_projection_matrix, project
from .label2d import (MaskedRegion, assemble_pixel_probs, read_region_file, region_class_probs,
                      write_region_file)
from .metrics import (MODE_COUNT_AS_WRONG, MODE_IGNORE_UNLABELED, ConfusionMatrix,
                      apply_merge_map, report)
from .painting import paint_cloud
from .reliable import export_reliable, fuse_predictions, select_reliable
from .synth import SceneSpec, SensorSpec, pixel_classes, regions_for_frame, simulate_scan
from .taxonomy import ClassTaxonomy, PromptMap, load_taxonomy, save_taxonomy
from .voxelgrid import SparseVoxelGrid


@dataclass
class PipelineConfig:
    taxonomy: str
    dataset: str
    out: str
    voxel_size: float = 0.2
    threshold: float = 0.25
    k: int = 9
    gap: float = 1.0
    eps: float = 1e-6
    tau: float = 1.0
    tau_pred: float = 1.0
    percent: float = 20.0
    eval_mode: str = MODE_IGNORE_UNLABELED
    seed: int = 0
    jobs: int = 1

    def validate(self) -> None:
        checks = [
            ("voxel_size", self.voxel_size > 0),
            ("threshold", 0.0 < self.threshold < 1.0),
            ("k", self.k >= 1),
            ("gap", self.gap > 0),
            ("eps", 0.0 < self.eps < 1.0),
            ("tau", self.tau > 0),
            ("tau_pred", self.tau_pred > 0),
            ("percent", 0.0 < self.percent <= 100.0),
            ("eval_mode", self.eval_mode in (MODE_IGNORE_UNLABELED, MODE_COUNT_AS_WRONG)),
            ("jobs", self.jobs >= 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ParameterError(f"config field {name} is out of range: {getattr(self, name)!r}")

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read config {path}: {exc}") from exc
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown config fields: {sorted(unknown)}")
        missing = {"taxonomy", "dataset", "out"} - set(data)
        if missing:
            raise ParameterError(f"config missing required fields: {sorted(missing)}")
        return cls(**data)

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        """Apply CLI flag overrides; None means not given."""
        updates = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **updates)


def write_manifest(out_dir, command: str, params: dict) -> None:
    """Echo every parameter next to the outputs so a run can be replayed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    body = {"command": command, "parameters": {k: _jsonable(v) for k, v in params.items()}}
    atomic_write_text(out_dir / f"{command}.manifest.json", json.dumps(body, indent=2))


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _frame_ids(directory, suffix: str) -> list[int]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"missing input directory {directory}")
    ids = sorted(int(p.stem) for p in directory.glob(f"*{suffix}"))
    if ids != list(range(len(ids))):
        raise FormatError(f"frame indices in {directory} are not contiguous from 0")
    return ids


def _for_frames(ids, fn, jobs: int):
    if jobs <= 1:
        for i in ids:
            fn(i)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(fn, ids))


# --- stages -------------------------------------------------------------------

def stage_label2d(regions_dir, out_dir, pm: PromptMap, threshold: float, jobs: int = 1) -> int:
    """Region files to pixel probability maps."""
    ids = _frame_ids(regions_dir, ".json")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(i: int) -> None:
        width, height, entries = read_region_file(Path(regions_dir) / f"{i:06d}.json")
        ppm, _ = assemble_pixel_probs(width, height, entries, pm, threshold)
        iof.write_pixel_prob_map(out_dir / f"{i:06d}.lppm", ppm)

    _for_frames(ids, one, jobs)
    write_manifest(out_dir, "label2d",
                   {"regions": regions_dir, "out": out_dir, "threshold": threshold, "jobs": jobs})
    return len(ids)


def stage_paint(clouds_dir, lppm_dir, calib_path, out_dir, pm: PromptMap | None = None,
                regions_dir=None, threshold: float = 0.25, gap: float = 1.0,
                jobs: int = 1) -> int:
    """Clouds + pixel maps to painted clouds.

    When a regions directory is given, each mask runs the depth-cluster
    occlusion filter (the same threshold as label2d decides which regions
    exist). Without regions, points keep whatever their pixel says.
    """
    ids = _frame_ids(clouds_dir, ".bin")
    p2, cam_from_lidar = iof.read_calibration(calib_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(i: int) -> None:
        cloud = iof.read_point_cloud(Path(clouds_dir) / f"{i:06d}.bin")
        ppm = iof.read_pixel_prob_map(Path(lppm_dir) / f"{i:06d}.lppm")
        k = intrinsics_from_projection_matrix(p2, ppm.width, ppm.height)
        proj = project(cloud, cam_from_lidar, k)
        masked = None
        if regions_dir is not None:
            if pm is None:
                raise ParameterError("regions filtering needs the prompt map")
            width, height, entries = read_region_file(Path(regions_dir) / f"{i:06d}.json")
            masked = []
            for region, mask in entries:
                if region.max_similarity() < threshold or not mask.any():
                    continue
                dist, conf = region_class_probs(region, pm)
                masked.append(MaskedRegion(mask=mask, dist=dist, confidence=conf))
        painted = paint_cloud(cloud, ppm, proj, masked, gap)
        iof.write_painted_cloud(out_dir / f"{i:06d}.lppc", painted)

    _for_frames(ids, one, jobs)
    write_manifest(out_dir, "paint",
                   {"clouds": clouds_dir, "lppm": lppm_dir, "calib": calib_path, "out": out_dir,
                    "regions": regions_dir, "threshold": threshold, "gap": gap, "jobs": jobs})
    return len(ids)


def _load_scans(clouds_dir, painted_dir, poses_path):
    ids = _frame_ids(clouds_dir, ".bin")
    poses = iof.read_poses(poses_path)
    if len(poses) < len(ids):
        raise FormatError(f"{poses_path} has {len(poses)} poses for {len(ids)} frames")
    scans = []
    for i in ids:
        cloud = iof.read_point_cloud(Path(clouds_dir) / f"{i:06d}.bin")
        painted = iof.read_painted_cloud(Path(painted_dir) / f"{i:06d}.lppc", cloud)
        scans.append((painted, poses[i]))
    return scans


def stage_fuse(clouds_dir, painted_dir, poses_path, grid_out, voxel_size: float,
               num_classes: int, tau: float = 1.0, eps: float = 1e-6,
               jobs: int = 1) -> tuple[int, int]:
    """Painted clouds + poses to a fused voxel grid; returns (frames, points)."""
    scans = _load_scans(clouds_dir, painted_dir, poses_path)
    grid = SparseVoxelGrid(voxel_size, num_classes)
    fused = grid.fuse_scans(scans, tau=tau, eps=eps, jobs=jobs)
    grid.save(grid_out)
    write_manifest(Path(grid_out).parent, "fuse",
                   {"clouds": clouds_dir, "painted": painted_dir, "poses": poses_path,
                    "grid": grid_out, "voxel_size": voxel_size, "num_classes": num_classes,
                    "tau": tau, "eps": eps, "jobs": jobs})
    return len(scans), fused


def stage_smooth(grid_in, grid_out, k: int) -> int:
    grid = SparseVoxelGrid.load(grid_in)
    smoothed = grid.smooth(k)
    smoothed.save(grid_out)
    write_manifest(Path(grid_out).parent, "smooth", {"grid_in": grid_in, "grid_out": grid_out, "k": k})
    return len(smoothed)


def stage_export_labels(grid_path, clouds_dir, poses_path, out_dir, ignore_label: int,
                        jobs: int = 1) -> int:
    """Per-scan voxel lookups to label files plus confidence companions."""
    grid = SparseVoxelGrid.load(grid_path)
    ids = _frame_ids(clouds_dir, ".bin")
    poses = iof.read_poses(poses_path)
    if len(poses) < len(ids):
        raise FormatError(f"{poses_path} has {len(poses)} poses for {len(ids)} frames")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(i: int) -> None:
        cloud = iof.read_point_cloud(Path(clouds_dir) / f"{i:06d}.bin")
        labels, conf = grid.query_labels(cloud, poses[i], ignore_label)
        iof.write_labels(out_dir / f"{i:06d}.label", labels)
        iof.write_confidences(out_dir / f"{i:06d}.conf", conf)

    _for_frames(ids, one, jobs)
    write_manifest(out_dir, "export-labels",
                   {"grid": grid_path, "clouds": clouds_dir, "poses": poses_path,
                    "out": out_dir, "ignore_label": ignore_label, "jobs": jobs})
    return len(ids)


def stage_select_reliable(grid_path, clouds_dir, poses_path, percent: float, out_dir,
                          ignore_label: int) -> int:
    grid = SparseVoxelGrid.load(grid_path)
    ids = _frame_ids(clouds_dir, ".bin")
    poses = iof.read_poses(poses_path)
    scans = [(iof.read_point_cloud(Path(clouds_dir) / f"{i:06d}.bin"), poses[i]) for i in ids]
    selection = select_reliable(grid, scans, percent, ignore_label)
    export_reliable(selection, scans, Path(out_dir), ignore_label)
    write_manifest(out_dir, "select-reliable",
                   {"grid": grid_path, "clouds": clouds_dir, "poses": poses_path,
                    "percent": percent, "out": out_dir})
    return selection.total()


def stage_fuse_preds(grid_in, preds_dir, clouds_dir, poses_path, grid_out, tau: float,
                     eps: float = 1e-6) -> int:
    """Fold externally predicted painted clouds into an existing grid."""
    grid = SparseVoxelGrid.load(grid_in)
    scans = _load_scans(clouds_dir, preds_dir, poses_path)
    fused = fuse_predictions(grid, scans, tau=tau, eps=eps)
    grid.save(grid_out)
    write_manifest(Path(grid_out).parent, "fuse-preds",
                   {"grid_in": grid_in, "preds": preds_dir, "poses": poses_path,
                    "grid_out": grid_out, "tau": tau, "eps": eps})
    return fused


def stage_eval(pred_dir, gt_dir, taxonomy: ClassTaxonomy, mode: str, out_json,
               use_merge: bool = False) -> dict:
    """Compare predicted labels with ground truth and write the report."""
    ids = _frame_ids(gt_dir, ".label")
    cm = ConfusionMatrix(taxonomy.num_classes)
    total_points = 0
    labeled_points = 0
    for i in ids:
        gt = iof.read_labels(Path(gt_dir) / f"{i:06d}.label")
        pred = iof.read_labels(Path(pred_dir) / f"{i:06d}.label", expected_count=gt.shape[0])
        if use_merge:
            gt = apply_merge_map(gt, taxonomy)
            pred = apply_merge_map(pred, taxonomy)
        total_points += pred.shape[0]
        labeled_points += int((pred != taxonomy.ignore_label).sum())
        cm.accumulate(gt, pred, taxonomy.ignore_label, mode)
    rep = report(cm, taxonomy,
                 labeled_fraction=(labeled_points / total_points) if total_points else None)
    atomic_write_text(out_json, json.dumps(rep, indent=2))
    write_manifest(Path(out_json).parent, "eval",
                   {"pred": pred_dir, "gt": gt_dir, "mode": mode, "merge": use_merge,
                    "out": out_json})
    return rep


def stage_synth(scene: SceneSpec, sensor: SensorSpec, taxonomy: ClassTaxonomy, pm: PromptMap,
                out_root, noise: float, peak: float, seed: int,
                region_confidence: float = 0.9) -> int:
    """Write a full synthetic dataset: clouds, ground truth, region files,
    poses, calibration, and the taxonomy."""
    if not sensor.trajectory:
        raise ParameterError("sensor trajectory is empty")
    used = scene.num_classes_used()
    if used > taxonomy.num_classes:
        raise ParameterError(f"scene uses {used} classes, taxonomy has {taxonomy.num_classes}")
    layout = iof.DatasetLayout(Path(out_root))
    for sub in ("velodyne", "labels_gt", "regions"):
        (layout.root / sub).mkdir(parents=True, exist_ok=True)
    k = sensor.intrinsics
    lidar_from_cam = sensor.cam_from_lidar.inverse()
    for i, pose in enumerate(sensor.trajectory):
        cloud, gt = simulate_scan(scene, sensor.lidar, pose)
        iof.write_point_cloud(layout.cloud_path(i), cloud)
        iof.write_labels(layout.gt_label_path(i), gt)
        world_from_camera = pose.compose(lidar_from_cam)
        coverage, chosen = pixel_classes(scene, k, world_from_camera, noise, [seed, i])
        entries = regions_for_frame(coverage, chosen, taxonomy.num_classes, pm, peak,
                                    region_confidence)
        write_region_file(layout.region_path(i), k.width, k.height, entries)
    iof.write_poses(layout.poses_file, list(sensor.trajectory))
    p2 = np.array([[k.fx, 0.0, k.cx, 0.0], [0.0, k.fy, k.cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
    iof.write_calibration(layout.calib_file, p2, sensor.cam_from_lidar)
    save_taxonomy(layout.taxonomy_file, taxonomy, pm)
    write_manifest(layout.root, "synth",
                   {"out": out_root, "noise": noise, "peak": peak, "seed": seed,
                    "frames": len(sensor.trajectory), "region_confidence": region_confidence})
    return len(sensor.trajectory)


def run_pipeline(cfg: PipelineConfig) -> dict:
    """label2d, paint, fuse, smooth, export-labels, end to end."""
    cfg.validate()
    taxonomy, pm = load_taxonomy(cfg.taxonomy)
    data = iof.DatasetLayout(Path(cfg.dataset))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    lppm_dir = out / "lppm"
    painted_dir = out / "painted"
    labels_dir = out / "labels"
    grid_path = out / "grid.lvox"
    smoothed_path = out / "grid_smooth.lvox"

    stage_label2d(data.root / "regions", lppm_dir, pm, cfg.threshold, cfg.jobs)
    stage_paint(data.root / "velodyne", lppm_dir, data.calib_file, painted_dir,
                pm=pm, regions_dir=data.root / "regions", threshold=cfg.threshold,
                gap=cfg.gap, jobs=cfg.jobs)
    stage_fuse(data.root / "velodyne", painted_dir, data.poses_file, grid_path,
               cfg.voxel_size, taxonomy.num_classes, tau=cfg.tau, eps=cfg.eps, jobs=cfg.jobs)
    stage_smooth(grid_path, smoothed_path, cfg.k)
    stage_export_labels(smoothed_path, data.root / "velodyne", data.poses_file, labels_dir,
                        taxonomy.ignore_label, cfg.jobs)
    write_manifest(out, "run", asdict(cfg))
    return {
        "lppm": lppm_dir,
        "painted": painted_dir,
        "grid": grid_path,
        "grid_smooth": smoothed_path,
        "labels": labels_dir,
    }
