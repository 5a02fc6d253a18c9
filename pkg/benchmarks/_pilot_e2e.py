"""Scratch pilot for the end-to-end trends; not part of the deliverable tests.

Prints the numbers the acceptance suite pins (accuracy, mIoU margins,
coverage ratio) for the fixed seeds.
"""

import time

import numpy as np

from leap3d.geometry import CameraIntrinsics, PointCloud
from leap3d.label2d import assemble_pixel_probs
from leap3d.metrics import ConfusionMatrix, miou
from leap3d.painting import paint_cloud
from leap3d.synth import (Box, Cylinder, GroundPlane, LidarSpec, SceneSpec, SensorSpec,
                          circle_trajectory, kitti_camera_mount, pixel_classes,
                          regions_for_frame, simulate_scan)
from leap3d.taxonomy import ClassTaxonomy, PromptMap
from leap3d.geometry import project
from leap3d.voxelgrid import SparseVoxelGrid

IGNORE = 0xFFFF


def build_scene():
    return SceneSpec(
        primitives=(
            GroundPlane(z=0.0, class_index=0),
            Box(center=(6.0, 2.0, 1.25), size=(5.0, 4.0, 2.5), class_index=1),
            Box(center=(-6.0, 3.0, 1.0), size=(3.0, 3.0, 2.0), class_index=1),
            Cylinder(center=(-4.0, -5.0), radius=0.3, z_min=0.0, z_max=4.0, class_index=2),
            Cylinder(center=(0.5, 6.5), radius=0.35, z_min=0.0, z_max=4.5, class_index=2),
            Cylinder(center=(3.0, -6.0), radius=1.2, z_min=0.0, z_max=5.0, class_index=3),
            Cylinder(center=(-1.0, -8.0), radius=1.0, z_min=0.0, z_max=4.0, class_index=3),
            Box(center=(-5.0, -1.5, 0.9), size=(0.6, 0.6, 1.8), class_index=4),
            Box(center=(2.0, 4.5, 0.9), size=(0.6, 0.6, 1.8), class_index=4),
        ),
        bounds=np.array([[-25.0, -25.0, -1.0], [25.0, 25.0, 12.0]]),
        seed=7,
    )


def make_sensor(n):
    lidar = LidarSpec(azimuth_count=180, elevation_count=24, azimuth_fov_deg=360.0,
                      elevation_min_deg=-30.0, elevation_max_deg=4.0, max_range=45.0)
    intr = CameraIntrinsics(fx=80.0, fy=80.0, cx=64.0, cy=48.0, width=128, height=96)
    return SensorSpec(lidar=lidar, intrinsics=intr, cam_from_lidar=kitti_camera_mount(),
                      trajectory=circle_trajectory(radius=8.0, height=1.7, count=n))


def prompt_map():
    prompts = (("ground", 0), ("road surface", 0), ("building", 1), ("house", 1), ("pole", 2),
               ("tree", 3), ("bush", 3), ("person", 4), ("pedestrian", 4))
    return PromptMap(prompts=prompts, num_classes=5)


def run(noise, peak, n_poses, seed, k=9, gap=1.0, threshold=0.25, voxel=0.2):
    scene = build_scene()
    sensor = make_sensor(n_poses)
    pm = prompt_map()
    kintr = sensor.intrinsics
    lidar_from_cam = sensor.cam_from_lidar.inverse()
    grid = SparseVoxelGrid(voxel, 5)
    frames = []
    for i, pose in enumerate(sensor.trajectory):
        cloud, gt = simulate_scan(scene, sensor.lidar, pose)
        cam_pose = pose.compose(lidar_from_cam)
        coverage, chosen = pixel_classes(scene, kintr, cam_pose, noise, [seed, i])
        entries = regions_for_frame(coverage, chosen, 5, pm, peak if peak < 1 else 1.0)
        ppm, masked = assemble_pixel_probs(kintr.width, kintr.height, entries, pm, threshold)
        proj = project(cloud, sensor.cam_from_lidar, kintr)
        painted = paint_cloud(cloud, ppm, proj, masked, gap)
        grid.fuse_painted_cloud(painted, pose)
        frames.append((cloud, gt, painted, pose))
    sm = grid.smooth(k)
    return scene, sm, grid, frames


def evaluate(sm, frames):
    cm_vox = ConfusionMatrix(5)
    cm_point = ConfusionMatrix(5)
    n_vox_labeled = n_point_labeled = n_total = 0
    n_correct = n_labeled = 0
    for cloud, gt, painted, pose in frames:
        labels, conf = sm.query_labels(cloud, pose, IGNORE)
        cm_vox.accumulate(gt, labels, IGNORE)
        point_labels = np.full(len(cloud), IGNORE, dtype=np.int64)
        point_labels[painted.labeled] = painted.probs[painted.labeled].argmax(axis=1)
        cm_point.accumulate(gt, point_labels, IGNORE)
        n_vox_labeled += int((labels != IGNORE).sum())
        n_point_labeled += int((point_labels != IGNORE).sum())
        n_total += len(cloud)
        lab = labels != IGNORE
        n_correct += int((labels[lab] == gt[lab]).sum())
        n_labeled += int(lab.sum())
    return {
        "miou_vox": miou(cm_vox), "miou_point": miou(cm_point),
        "acc_vox": n_correct / max(n_labeled, 1),
        "coverage_ratio": n_vox_labeled / max(n_point_labeled, 1),
        "vox_labeled": n_vox_labeled, "point_labeled": n_point_labeled, "total": n_total,
    }


if __name__ == "__main__":
    t0 = time.perf_counter()
    scene, sm, grid, frames = run(noise=0.0, peak=1.0, n_poses=20, seed=0)
    r = evaluate(sm, frames)
    print(f"criterion3 (noiseless, 20 poses): acc={r['acc_vox']:.4f} "
          f"coverage={r['coverage_ratio']:.2f} t={time.perf_counter()-t0:.1f}s "
          f"voxels={len(sm)}")

    t0 = time.perf_counter()
    scene, sm, grid, frames = run(noise=0.3, peak=0.7, n_poses=30, seed=1)
    r = evaluate(sm, frames)
    print(f"criterion4 (noisy, 30 poses): miou_vox={r['miou_vox']:.3f} "
          f"miou_point={r['miou_point']:.3f} margin={r['miou_vox']-r['miou_point']:.3f} "
          f"coverage={r['coverage_ratio']:.2f} t={time.perf_counter()-t0:.1f}s")
EOF