"""
Synthetic Data Module
=====================

Seeded generators for the property suite, the tests and the benchmark
when no dataset is at hand.

Features:
    - Random clouds inside the sensor's range and vertical FOV
    - Bin-centre azimuth rings for exact circular-shift checks
    - Random descriptors and random poses
    - A small world of box-shaped structures scanned along a trajectory
      that revisits itself (figure-eight), written in KITTI layout

Every generator takes a numpy Generator; nothing reads global random state.
"""

import logging
import math
from pathlib import Path
from typing import List, Tuple

import numpy as np

from constants.solid_constants import FULL_CIRCLE_DEG
from solid.descriptor import BinningConfig, SolidDescriptor
from solid.ingest import PointCloud, Pose, write_kitti_scan

_logger = logging.getLogger(__name__)


def yaw_matrix(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_cloud_yaw(cloud: PointCloud, deg: float) -> PointCloud:
    """Rotate every point by deg about +z; each azimuth grows by deg."""
    return cloud.with_points(cloud.points @ yaw_matrix(deg).T)


def random_cloud(rng: np.random.Generator, n_points: int, cfg: BinningConfig,
                 frame_id: int = 0) -> PointCloud:
    """Points with uniform range below l_max, azimuth and elevation inside the FOV."""
    r = rng.uniform(0.5, cfg.l_max * 0.99, n_points)
    theta = np.radians(rng.uniform(0.0, FULL_CIRCLE_DEG, n_points))
    phi = np.radians(rng.uniform(cfg.f_down, cfg.f_up, n_points))
    pts = np.column_stack((r * np.cos(theta), r * np.sin(theta), r * np.tan(phi)))
    return PointCloud(pts, frame_id)


def bin_centre_ring(counts: np.ndarray, cfg: BinningConfig, elevation_deg: float = -10.0,
                    first_range: float = 10.0, range_step: float = 1.0) -> PointCloud:
    """
    counts[j] points on the centre azimuth j * 360 / n_a of each azimuth bin.

    Points of one bin sit at ranges first_range, first_range + range_step, ...
    and all share one elevation, so no two points fall into the same voxel
    and none lies near a bin boundary.
    """
    step = FULL_CIRCLE_DEG / cfg.n_a
    rows = []
    for j, count in enumerate(np.asarray(counts, dtype=np.int64)):
        theta = math.radians(j * step)
        for t in range(int(count)):
            r = first_range + t * range_step
            rows.append((r * math.cos(theta), r * math.sin(theta), r * math.tan(math.radians(elevation_deg))))
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3))


def random_descriptors(rng: np.random.Generator, count: int, cfg: BinningConfig,
                       first_id: int = 0) -> List[SolidDescriptor]:
    """Nonnegative random descriptor pairs with consecutive frame ids."""
    r = rng.random((count, cfg.n_r)) * 100.0
    a = rng.random((count, cfg.n_a)) * 100.0
    return [SolidDescriptor(r[i], a[i], first_id + i) for i in range(count)]


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation from a normalized quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_positions(rng: np.random.Generator, count: int, extent: float = 100.0) -> np.ndarray:
    """(count, 3) positions uniform in a square, z = 0."""
    xy = rng.uniform(0.0, extent, (count, 2))
    return np.column_stack((xy, np.zeros(count)))


def line_trajectory(count: int, spacing: float = 1.0) -> List[Pose]:
    """Straight drive along +x: never revisits."""
    return [Pose(np.eye(3), (i * spacing, 0.0, 0.0), i) for i in range(count)]


def figure_eight_trajectory(frames_per_lap: int, laps: int = 2, radius: float = 30.0) -> List[Pose]:
    """
    Lemniscate drive repeated `laps` times; frame i and i + frames_per_lap share
    the same pose, which plants exact revisits.
    """
    poses = []
    for i in range(frames_per_lap * laps):
        t = 2.0 * math.pi * (i % frames_per_lap) / frames_per_lap
        x = radius * math.sin(t)
        y = radius * math.sin(t) * math.cos(t)
        dx = radius * math.cos(t)
        dy = radius * math.cos(2.0 * t)
        heading = math.degrees(math.atan2(dy, dx))
        poses.append(Pose(yaw_matrix(heading), (x, y, 0.0), i))
    return poses


def box_world(rng: np.random.Generator, n_boxes: int = 60, extent: float = 120.0,
              points_per_box: int = 400) -> np.ndarray:
    """Surface points of random upright boxes plus a ground plane."""
    chunks = []
    for _ in range(n_boxes):
        centre = rng.uniform(-extent / 2.0, extent / 2.0, 2)
        size = rng.uniform(1.0, 6.0, 2)
        height = rng.uniform(1.0, 8.0)
        u = rng.uniform(-0.5, 0.5, (points_per_box, 2)) * size
        side = rng.integers(0, 4, points_per_box)
        u[side == 0, 0] = -size[0] / 2.0
        u[side == 1, 0] = size[0] / 2.0
        u[side == 2, 1] = -size[1] / 2.0
        u[side == 3, 1] = size[1] / 2.0
        z = rng.uniform(-1.7, height - 1.7, points_per_box)
        chunks.append(np.column_stack((u + centre, z)))
    ground = rng.uniform(-extent / 2.0, extent / 2.0, (n_boxes * points_per_box // 2, 2))
    chunks.append(np.column_stack((ground, np.full(ground.shape[0], -1.7))))
    return np.vstack(chunks)


def scan_world(world: np.ndarray, pose: Pose, cfg: BinningConfig) -> PointCloud:
    """World points seen from a pose: sensor frame, inside l_max."""
    local = (world - pose.translation) @ pose.rotation
    keep = np.hypot(local[:, 0], local[:, 1]) < cfg.l_max
    return PointCloud(local[keep], pose.frame_id)


def synthetic_scans(rng: np.random.Generator, count: int, cfg: BinningConfig,
                    n_points: int = 20000) -> List[PointCloud]:
    """Independent random clouds with frame ids 0..count-1 (benchmark input)."""
    return [random_cloud(rng, n_points, cfg, i) for i in range(count)]


def write_sequence(root, poses: List[Pose], world: np.ndarray, cfg: BinningConfig) -> Tuple[Path, Path]:
    """
    Write scans of `world` along `poses` in KITTI layout.

    Returns:
        (velodyne_dir, poses_file)
    """
    root = Path(root)
    velodyne = root / "velodyne"
    velodyne.mkdir(parents=True, exist_ok=True)
    lines = []
    for pose in poses:
        cloud = scan_world(world, pose, cfg)
        quads = np.column_stack((cloud.points, np.zeros(len(cloud))))
        write_kitti_scan(velodyne / f"{pose.frame_id:06d}.bin", quads)
        mat = pose.as_matrix()[:3, :]
        lines.append(" ".join(f"{v:.9e}" for v in mat.reshape(-1)))
    poses_file = root / "poses.txt"
    poses_file.write_text("\n".join(lines) + "\n")
    _logger.info(f"Synthetic sequence written | Root: {root} | Frames: {len(poses)}")
    return velodyne, poses_file
