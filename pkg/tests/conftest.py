"""Shared fixtures: a small primitive world with LiDAR + camera rigs."""

from __future__ import annotations

import numpy as np
import pytest

from leap3d.geometry import CameraIntrinsics
from leap3d.synth import (Box, Cylinder, GroundPlane, LidarSpec, SceneSpec, SensorSpec,
                          circle_trajectory, kitti_camera_mount)
from leap3d.taxonomy import ClassTaxonomy, PromptMap

CLASS_NAMES = ("ground", "building", "pole", "tree", "person")


@pytest.fixture(scope="session")
def taxonomy() -> ClassTaxonomy:
    return ClassTaxonomy(
        classes=CLASS_NAMES,
        categories={0: 0, 1: 1, 2: 1, 3: 2, 4: 3},
    )


@pytest.fixture(scope="session")
def prompt_map(taxonomy) -> PromptMap:
    prompts = (
        ("ground", 0), ("road surface", 0),
        ("building", 1), ("house", 1),
        ("pole", 2),
        ("tree", 3), ("bush", 3),
        ("person", 4), ("pedestrian", 4),
    )
    return PromptMap(prompts=prompts, num_classes=taxonomy.num_classes)


@pytest.fixture(scope="session")
def scene() -> SceneSpec:
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


def make_sensor(n_poses: int, radius: float = 8.0) -> SensorSpec:
    lidar = LidarSpec(azimuth_count=180, elevation_count=24, azimuth_fov_deg=360.0,
                      elevation_min_deg=-30.0, elevation_max_deg=4.0, max_range=45.0)
    intrinsics = CameraIntrinsics(fx=80.0, fy=80.0, cx=64.0, cy=48.0, width=128, height=96)
    return SensorSpec(lidar=lidar, intrinsics=intrinsics, cam_from_lidar=kitti_camera_mount(),
                      trajectory=circle_trajectory(radius=radius, height=1.7, count=n_poses))


@pytest.fixture(scope="session")
def sensor_20() -> SensorSpec:
    return make_sensor(20)
