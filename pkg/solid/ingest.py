"""
Ingest Module
=============

Point cloud and pose loading, restricted-FOV simulation, voxel
downsampling and distance sampling of trajectories.

Features:
    - KITTI velodyne .bin reader/writer (little-endian float32 x, y, z, intensity)
    - KITTI pose files (12 numbers per line, row-major 3x4 [R|t])
    - Azimuth masks for FOV clipping and occlusion ("300-360,0-60")
    - Voxel-grid centroid downsampling anchored at the origin
    - Greedy pose sampling at a fixed travelled distance

All functions are pure; clouds are never modified in place.

Example:
    >>> cloud = load_kitti_scan("00/velodyne/000000.bin")
    >>> front = clip_fov(cloud, FovMask.forward(60.0))
    >>> sparse = voxel_downsample(front, 0.5)
"""

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from constants.solid_constants import (
    FULL_CIRCLE_DEG,
    ROTATION_EXACT_TOL,
    ROTATION_FAIL_TOL,
    ROTATION_WARN_TOL,
)
from utils.framework_exception import (
    FovMaskError,
    FrameworkException,
    PoseFormatError,
    RotationMatrixError,
    ScanFormatError,
)

_logger = logging.getLogger(__name__)

_KITTI_RECORD = np.dtype("<f4")
_KITTI_RECORD_BYTES = 16


# ================== Domain Types ==================

@dataclass(frozen=True, eq=False)
class PointCloud:
    """
    3-D points in the sensor frame.

    Attributes:
        points: (N, 3) float64 array in meters.
        frame_id: Sequence index, >= 0.
    """

    points: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise FrameworkException(f"PointCloud {self.frame_id} holds non-finite coordinates")
        if self.frame_id < 0:
            raise FrameworkException(f"PointCloud frame_id must be >= 0, got {self.frame_id}")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.frame_id)


def _rotation_deviation(rotation: np.ndarray) -> float:
    gram = rotation.T @ rotation - np.eye(3)
    return max(float(np.max(np.abs(gram))), abs(float(np.linalg.det(rotation)) - 1.0))


def project_to_so3(rotation: np.ndarray) -> np.ndarray:
    """Nearest proper rotation in the Frobenius sense (SVD)."""
    u, _, vt = np.linalg.svd(rotation)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True, eq=False)
class Pose:
    """
    Rigid pose of a frame.

    Attributes:
        rotation: 3x3 orthonormal matrix with determinant +1 (within 1e-6).
        translation: 3-vector in meters.
        frame_id: Sequence index.
    """

    rotation: np.ndarray
    translation: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        deviation = _rotation_deviation(rot)
        if deviation > ROTATION_EXACT_TOL:
            raise RotationMatrixError(
                f"Pose {self.frame_id} rotation is not orthonormal | Deviation: {deviation:.3e}"
            )
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def position(self) -> np.ndarray:
        return self.translation

    def as_matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat


@dataclass(frozen=True)
class FovMask:
    """
    Azimuth intervals to keep, in degrees.

    Intervals are half-open [start, end), sorted, disjoint and inside
    [0, 360]. A point exactly on an end boundary is dropped.

    Example:
        >>> FovMask.parse("300-360,0-60").total_angle
        120.0
    """

    keep_intervals: Tuple[Tuple[float, float], ...] = field(default=((0.0, FULL_CIRCLE_DEG),))

    def __post_init__(self):
        intervals = tuple(sorted((float(a), float(b)) for a, b in self.keep_intervals))
        if not intervals:
            raise FovMaskError("FOV mask keeps nothing")
        previous_end = 0.0
        for start, end in intervals:
            if not (0.0 <= start < end <= FULL_CIRCLE_DEG):
                raise FovMaskError(f"FOV interval [{start}, {end}) is not inside [0, 360)")
            if start < previous_end:
                raise FovMaskError(f"FOV interval [{start}, {end}) overlaps its predecessor")
            previous_end = end
        object.__setattr__(self, "keep_intervals", intervals)

    @classmethod
    def full(cls) -> "FovMask":
        return cls(((0.0, FULL_CIRCLE_DEG),))

    @classmethod
    def _from_wrapping(cls, pieces: Sequence[Tuple[float, float]]) -> "FovMask":
        """Build from intervals that may run across 0 deg (start > end)."""
        split: List[Tuple[float, float]] = []
        for start, end in pieces:
            start = start % FULL_CIRCLE_DEG
            end = end if end == FULL_CIRCLE_DEG else end % FULL_CIRCLE_DEG
            if start < end:
                split.append((start, end))
            elif start > end:
                split.append((start, FULL_CIRCLE_DEG))
                if end > 0.0:
                    split.append((0.0, end))
            else:
                raise FovMaskError(f"FOV interval starting and ending at {start} deg is ambiguous")
        return cls(_merge_touching(split))

    @classmethod
    def parse(cls, text: str) -> "FovMask":
        """
        Parse "A-B[,C-D...]" in degrees. A wedge with A > B wraps through 0,
        so "330-30" equals "330-360,0-30".

        Raises:
            FovMaskError: On syntax errors or invalid intervals.
        """
        pieces = []
        for token in text.split(","):
            token = token.strip()
            match = re.fullmatch(r"(\d+(?:\.\d*)?)\s*-\s*(\d+(?:\.\d*)?)", token)
            if not match:
                raise FovMaskError(f"Cannot parse FOV interval '{token}' in '{text}'")
            start, end = float(match.group(1)), float(match.group(2))
            if max(start, end) > FULL_CIRCLE_DEG:
                raise FovMaskError(f"FOV interval '{token}' exceeds 360 deg")
            pieces.append((start, end))
        if len(pieces) == 1 and pieces[0] == (0.0, FULL_CIRCLE_DEG):
            return cls.full()
        return cls._from_wrapping(pieces)

    @classmethod
    def forward(cls, fov_deg: float, center_deg: float = 0.0) -> "FovMask":
        """Single wedge of width fov_deg centred on center_deg (0 = +x, forward)."""
        if not 0.0 < fov_deg <= FULL_CIRCLE_DEG:
            raise FovMaskError(f"FOV width must be in (0, 360], got {fov_deg}")
        if fov_deg == FULL_CIRCLE_DEG:
            return cls.full()
        half = fov_deg / 2.0
        return cls._from_wrapping([(center_deg - half, center_deg + half)])

    def rotated(self, offset_deg: float) -> "FovMask":
        """Every interval moved by offset_deg around the circle."""
        if self.total_angle == FULL_CIRCLE_DEG:
            return self
        return FovMask._from_wrapping([(s + offset_deg, e + offset_deg) for s, e in self.keep_intervals])

    def complement(self) -> "FovMask":
        """Mask keeping exactly the azimuths this one drops."""
        gaps = []
        cursor = 0.0
        for start, end in self.keep_intervals:
            if start > cursor:
                gaps.append((cursor, start))
            cursor = end
        if cursor < FULL_CIRCLE_DEG:
            gaps.append((cursor, FULL_CIRCLE_DEG))
        if not gaps:
            raise FovMaskError("Complement of a full mask is empty")
        return FovMask(tuple(gaps))

    @property
    def total_angle(self) -> float:
        return float(sum(end - start for start, end in self.keep_intervals))

    def contains(self, azimuth_deg: np.ndarray) -> np.ndarray:
        """Boolean mask of azimuths falling in a keep interval."""
        azimuth_deg = np.asarray(azimuth_deg, dtype=np.float64)
        keep = np.zeros(azimuth_deg.shape, dtype=bool)
        for start, end in self.keep_intervals:
            keep |= (azimuth_deg >= start) & (azimuth_deg < end)
        return keep

    def to_text(self) -> str:
        return ",".join(f"{_fmt(s)}-{_fmt(e)}" for s, e in self.keep_intervals)


def _fmt(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(value)


def _merge_touching(intervals: List[Tuple[float, float]]) -> Tuple[Tuple[float, float], ...]:
    merged: List[Tuple[float, float]] = []
    for start, end in sorted(intervals):
        if merged and start <= merged[-1][1]:
            if start < merged[-1][1]:
                raise FovMaskError(f"FOV interval [{start}, {end}) overlaps [{merged[-1][0]}, {merged[-1][1]})")
            merged[-1] = (merged[-1][0], end)
        else:
            merged.append((start, end))
    return tuple(merged)


# ================== Angles ==================

def azimuth_deg(x, y) -> np.ndarray:
    """
    atan2(y, x) in degrees mapped into [0, 360).

    Shared by clipping and descriptor binning so a clipped wedge maps to
    contiguous azimuth bins. The origin maps to 0.
    """
    theta = np.degrees(np.arctan2(y, x))
    theta = np.where(theta < 0.0, theta + FULL_CIRCLE_DEG, theta)
    # -tiny + 360 rounds to 360.0
    theta = np.where(theta >= FULL_CIRCLE_DEG, theta - FULL_CIRCLE_DEG, theta)
    return theta + 0.0


# ================== KITTI I/O ==================

def read_kitti_quadruples(path) -> np.ndarray:
    """
    Raw (N, 4) float32 records of a KITTI velodyne file.

    Raises:
        ScanFormatError: If the byte length is not a multiple of 16.
        OSError: If the file cannot be read.
    """
    file_path = Path(path)
    byte_count = os.path.getsize(file_path)
    if byte_count % _KITTI_RECORD_BYTES:
        _logger.error(f"Malformed scan | File: {file_path} | Bytes: {byte_count}")
        raise ScanFormatError(file_path, byte_count)
    data = np.fromfile(file_path, dtype=_KITTI_RECORD)
    return data.reshape(-1, 4)


def write_kitti_scan(path, quadruples: np.ndarray) -> None:
    """Write (N, 4) values as little-endian float32 records."""
    records = np.ascontiguousarray(np.asarray(quadruples).reshape(-1, 4), dtype=_KITTI_RECORD)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    records.tofile(path)


def load_kitti_scan(path, frame_id: int = 0) -> PointCloud:
    """
    Load a KITTI .bin scan, dropping intensity.

    Points with NaN/Inf coordinates are rejected (removed) with a warning.

    Args:
        path: .bin file of float32 (x, y, z, intensity) records.
        frame_id: Sequence index assigned to the cloud.

    Returns:
        PointCloud: Points in file order.

    Raises:
        ScanFormatError: Byte count not divisible by 16.
    """
    quadruples = read_kitti_quadruples(path)
    xyz = quadruples[:, :3].astype(np.float64)
    finite = np.all(np.isfinite(xyz), axis=1)
    if not np.all(finite):
        _logger.warning(f"Dropping non-finite points | File: {path} | Count: {int((~finite).sum())}")
        xyz = xyz[finite]
    _logger.debug(f"Scan loaded | File: {Path(path).name} | Frame: {frame_id} | Points: {xyz.shape[0]}")
    return PointCloud(xyz, frame_id)


def list_scan_files(directory) -> List[Tuple[int, Path]]:
    """
    Ordered (frame_id, path) pairs of the .bin files in a directory.

    Numeric stems (000123.bin) give the frame id directly; otherwise the
    sorted position is used.
    """
    scan_dir = Path(directory)
    if not scan_dir.is_dir():
        raise FrameworkException(f"Scan directory not found: {scan_dir}")
    files = sorted(p for p in scan_dir.iterdir() if p.suffix == ".bin")
    if files and all(p.stem.isdigit() for p in files):
        pairs = sorted((int(p.stem), p) for p in files)
    else:
        pairs = list(enumerate(files))
    _logger.info(f"Scans listed | Directory: {scan_dir} | Files: {len(pairs)}")
    return pairs


def _checked_rotation(rotation: np.ndarray, path, line_number: int) -> np.ndarray:
    deviation = _rotation_deviation(rotation)
    if deviation <= ROTATION_EXACT_TOL:
        return rotation
    if deviation > ROTATION_FAIL_TOL:
        _logger.error(f"Rotation far from orthonormal | {path}:{line_number} | Deviation: {deviation:.3e}")
        raise RotationMatrixError(
            f"Pose at {path}:{line_number} is not a rotation | Deviation: {deviation:.3e}"
        )
    if deviation > ROTATION_WARN_TOL:
        _logger.warning(f"Re-orthonormalizing pose | {path}:{line_number} | Deviation: {deviation:.3e}")
    return project_to_so3(rotation)


def load_kitti_poses(path) -> List[Pose]:
    """
    Load a KITTI pose file: one row-major 3x4 [R|t] per non-empty line.

    frame_id is the line index among non-empty lines.

    Raises:
        PoseFormatError: A line without exactly 12 numbers.
        RotationMatrixError: A rotation deviating from SO(3) by more than 1e-1.
    """
    poses: List[Pose] = []
    with open(path, "r") as f:
        for line_number, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 12:
                raise PoseFormatError(path, line_number, f"expected 12 numbers, got {len(tokens)}")
            try:
                values = np.array([float(t) for t in tokens]).reshape(3, 4)
            except ValueError as e:
                raise PoseFormatError(path, line_number, str(e)) from e
            rotation = _checked_rotation(values[:, :3], path, line_number)
            poses.append(Pose(rotation, values[:, 3], len(poses)))
    _logger.info(f"Poses loaded | File: {path} | Count: {len(poses)}")
    return poses


def load_kitti_calib(path) -> np.ndarray:
    """
    4x4 velodyne-to-camera transform from the `Tr:` line of a KITTI calib.txt.
    """
    with open(path, "r") as f:
        for line in f:
            if line.startswith("Tr:"):
                values = [float(t) for t in line.split()[1:]]
                if len(values) != 12:
                    raise FrameworkException(f"Calibration 'Tr' in {path} has {len(values)} values, expected 12")
                tr = np.eye(4)
                tr[:3, :] = np.array(values).reshape(3, 4)
                return tr
    raise FrameworkException(f"No 'Tr:' entry in calibration file {path}")


def poses_to_lidar_frame(poses: Sequence[Pose], tr: np.ndarray) -> List[Pose]:
    """Express camera-frame ground truth in the LiDAR frame: Tr^-1 * T_cam * Tr."""
    tr_inv = np.linalg.inv(tr)
    converted = []
    for pose in poses:
        mat = tr_inv @ pose.as_matrix() @ tr
        converted.append(Pose(project_to_so3(mat[:3, :3]), mat[:3, 3], pose.frame_id))
    return converted


# ================== Cloud Operations ==================

def clip_fov(cloud: PointCloud, mask: FovMask) -> PointCloud:
    """
    Keep exactly the points whose azimuth lies in a keep interval.

    Order is preserved; an empty result is allowed.
    """
    if mask.total_angle == FULL_CIRCLE_DEG:
        return cloud
    pts = cloud.points
    keep = mask.contains(azimuth_deg(pts[:, 0], pts[:, 1]))
    return cloud.with_points(pts[keep])


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """
    One centroid per occupied cell of an origin-anchored cubic grid.

    Cell index = floor(coord / voxel). Output is in ascending (ix, iy, iz)
    order and the centroid is summed in a canonical point order, so the
    result does not depend on the input order.

    Raises:
        FrameworkException: If voxel <= 0.
    """
    if not voxel > 0.0:
        raise FrameworkException(f"Voxel size must be positive, got {voxel}")
    pts = cloud.points
    if pts.shape[0] == 0:
        return cloud
    cells = np.floor(pts / voxel).astype(np.int64)
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], cells[:, 2], cells[:, 1], cells[:, 0]))
    cells = cells[order]
    pts = pts[order]
    boundary = np.ones(cells.shape[0], dtype=bool)
    boundary[1:] = np.any(cells[1:] != cells[:-1], axis=1)
    starts = np.flatnonzero(boundary)
    counts = np.diff(np.append(starts, cells.shape[0]))
    centroids = np.add.reduceat(pts, starts, axis=0) / counts[:, None]
    return cloud.with_points(centroids)


def sample_by_distance(poses: Sequence[Pose], spacing: float) -> List[int]:
    """
    Greedy distance sampling: keep the first pose, then every pose at least
    `spacing` meters from the last kept one.

    Returns:
        List[int]: frame ids of kept poses, in order.
    """
    if not spacing > 0.0:
        raise FrameworkException(f"Sampling spacing must be positive, got {spacing}")
    if not poses:
        raise FrameworkException("Cannot sample an empty trajectory")
    kept = [poses[0].frame_id]
    last = poses[0].translation
    for pose in poses[1:]:
        if np.linalg.norm(pose.translation - last) >= spacing:
            kept.append(pose.frame_id)
            last = pose.translation
    _logger.info(f"Trajectory sampled | Spacing: {spacing} m | Kept: {len(kept)}/{len(poses)}")
    return kept
