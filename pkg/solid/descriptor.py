"""
Descriptor Module
=================

Builds the SOLiD descriptor pair from a point cloud.

Pipeline:
    voxel_downsample -> spherical conversion -> 3-D binning
    -> REC (range x elevation) and AEC (azimuth x elevation) counters
    -> EC (radial sum of REC) -> IEV (min-max normalized EC)
    -> R-SOLiD = REC . IEV, A-SOLiD = AEC . IEV

R-SOLiD drives retrieval; A-SOLiD drives heading estimation.

Conventions:
    - r is the horizontal range sqrt(x^2 + y^2); phi = atan2(z, r) so the
      zenith is defined; theta in [0, 360) with the origin at 0.
    - Indices use round-half-away-from-zero. Range and elevation indices past
      the last bin clamp; the azimuth index n_a + 1 wraps to 1.
    - Points with r >= l_max or phi outside [f_down, f_up) are discarded.
    - Constant EC (empty cloud included) gives an all-ones IEV.

Example:
    >>> cfg = BinningConfig.from_profile()
    >>> desc = describe(cloud, cfg)
    >>> desc.r_solid.shape
    (40,)
"""

import enum
import logging
import math
from dataclasses import dataclass, replace
from functools import partial
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm
from tqdm.contrib.concurrent import process_map

from constants.solid_constants import (
    BYTES_PER_VALUE,
    DEFAULT_L_MAX,
    DEFAULT_N_A,
    DEFAULT_N_R,
    DEFAULT_VOXEL,
    FULL_CIRCLE_DEG,
)
from solid.ingest import PointCloud, azimuth_deg, voxel_downsample
from utils.config_reader import ConfigReader
from utils.framework_exception import ConfigurationError, DescriptorMismatchError

_logger = logging.getLogger(__name__)


class Variant(enum.Enum):
    """Descriptor variants: the full reweighting, or IEV fixed to ones."""

    STANDARD = "standard"
    CONSTANT_IEV = "constant-iev"

    @classmethod
    def parse(cls, text: str) -> "Variant":
        normalized = text.strip().lower().replace("_", "-")
        for member in cls:
            if member.value == normalized:
                return member
        raise ConfigurationError(f"Unknown descriptor variant '{text}' | Expected: standard, constant-iev")


@dataclass(frozen=True)
class BinningConfig:
    """
    Binning parameters.

    Attributes:
        n_r: Radial bins.
        n_a: Azimuthal bins.
        n_e: Elevational bins (set per sensor, usually its channel count).
        l_max: Maximum horizontal range in meters.
        f_up: Upper vertical FOV in degrees.
        f_down: Lower vertical FOV in degrees.
        voxel: Downsampling voxel edge in meters.
        variant: Standard or ConstantIEV.
    """

    n_r: int = DEFAULT_N_R
    n_a: int = DEFAULT_N_A
    n_e: int = 64
    l_max: float = DEFAULT_L_MAX
    f_up: float = 2.0
    f_down: float = -24.8
    voxel: float = DEFAULT_VOXEL
    variant: Variant = Variant.STANDARD

    def __post_init__(self):
        if min(self.n_r, self.n_a, self.n_e) < 1:
            raise ConfigurationError(f"Bin counts must be >= 1 | n_r: {self.n_r} | n_a: {self.n_a} | n_e: {self.n_e}")
        if not self.l_max > 0:
            raise ConfigurationError(f"l_max must be positive, got {self.l_max}")
        if not self.f_up > self.f_down:
            raise ConfigurationError(f"f_up ({self.f_up}) must exceed f_down ({self.f_down})")
        if not self.voxel > 0:
            raise ConfigurationError(f"voxel must be positive, got {self.voxel}")
        if isinstance(self.variant, str):
            object.__setattr__(self, "variant", Variant.parse(self.variant))

    @classmethod
    def from_profile(cls, **overrides) -> "BinningConfig":
        """Defaults from the active sensor profile in configs/config.yaml."""
        values = {
            key: ConfigReader.get_config(key)
            for key in ("n_r", "n_a", "n_e", "l_max", "f_up", "f_down", "voxel", "variant")
        }
        values = {k: v for k, v in values.items() if v is not None}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def with_variant(self, variant: Variant) -> "BinningConfig":
        return replace(self, variant=variant)

    def same_layout(self, other: "BinningConfig") -> bool:
        """True if descriptors built with `other` are comparable with ours."""
        return (self.n_r, self.n_a, self.n_e, self.l_max, self.f_up, self.f_down) == (
            other.n_r, other.n_a, other.n_e, other.l_max, other.f_up, other.f_down
        )


@dataclass(frozen=True)
class SphericalPoint:
    """r in meters (>= 0), theta in [0, 360) and phi in degrees."""

    r: float
    theta: float
    phi: float


@dataclass(frozen=True, eq=False)
class CounterSet:
    """
    Bin counters of one cloud.

    Attributes:
        rec: (n_r, n_e) Range-Elevation Counter.
        aec: (n_a, n_e) Azimuth-Elevation Counter.
        ec: (n_e,) Elevation Counter, radial sum of rec.
        iev: (n_e,) Implicit Elevation Vector in [0, 1].
        discarded: Points outside range or vertical FOV.
    """

    rec: np.ndarray
    aec: np.ndarray
    ec: np.ndarray
    iev: np.ndarray
    discarded: int = 0

    @property
    def binned(self) -> int:
        return int(self.rec.sum())


@dataclass(frozen=True, eq=False)
class SolidDescriptor:
    """
    The descriptor pair of one frame.

    Attributes:
        r_solid: (n_r,) range-wise descriptor.
        a_solid: (n_a,) azimuth-wise descriptor.
        frame_id: Frame the descriptor was built from.
    """

    r_solid: np.ndarray
    a_solid: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        r = np.asarray(self.r_solid, dtype=np.float64).reshape(-1)
        a = np.asarray(self.a_solid, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(a))):
            raise DescriptorMismatchError(f"Descriptor {self.frame_id} has non-finite entries")
        if np.any(r < 0) or np.any(a < 0):
            raise DescriptorMismatchError(f"Descriptor {self.frame_id} has negative entries")
        object.__setattr__(self, "r_solid", r)
        object.__setattr__(self, "a_solid", a)

    def matches(self, cfg: BinningConfig) -> bool:
        return self.r_solid.shape[0] == cfg.n_r and self.a_solid.shape[0] == cfg.n_a

    def with_frame_id(self, frame_id: int) -> "SolidDescriptor":
        return SolidDescriptor(self.r_solid, self.a_solid, frame_id)


# ================== Spherical Conversion & Binning ==================

def round_half_away(values):
    """Round half away from zero (numpy's round is half-to-even)."""
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def to_spherical(point) -> SphericalPoint:
    """
    (x, y, z) -> (r, theta, phi).

    Example:
        >>> to_spherical((0.0, 1.0, 1.0))
        SphericalPoint(r=1.0, theta=90.0, phi=45.0)
    """
    x, y, z = (float(c) for c in point)
    r = math.hypot(x, y)
    theta = float(azimuth_deg(x, y))
    phi = math.degrees(math.atan2(z, r))
    return SphericalPoint(r, theta, phi)


def to_spherical_array(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized to_spherical over an (N, 3) array."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    r = np.hypot(pts[:, 0], pts[:, 1])
    theta = azimuth_deg(pts[:, 0], pts[:, 1])
    phi = np.degrees(np.arctan2(pts[:, 2], r))
    return r, theta, phi


def bin_indices_array(r: np.ndarray, theta: np.ndarray, phi: np.ndarray,
                      cfg: BinningConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    One-based (i, j, k) for the kept points plus the keep mask.

    Returns:
        (i, j, k, keep): index arrays for points where keep is True.
    """
    keep = (r < cfg.l_max) & (phi >= cfg.f_down) & (phi < cfg.f_up)
    r, theta, phi = r[keep], theta[keep], phi[keep]
    i = round_half_away(cfg.n_r * r / cfg.l_max + 1.0)
    j = round_half_away(cfg.n_a * theta / FULL_CIRCLE_DEG + 1.0)
    k = round_half_away(cfg.n_e * (phi - cfg.f_down) / (cfg.f_up - cfg.f_down) + 1.0)
    i = np.clip(i, 1, cfg.n_r).astype(np.int64)
    j = np.where(j > cfg.n_a, j - cfg.n_a, j).astype(np.int64)
    k = np.clip(k, 1, cfg.n_e).astype(np.int64)
    return i, j, k, keep


def bin_indices(sp: SphericalPoint, cfg: BinningConfig) -> Optional[Tuple[int, int, int]]:
    """
    One-based bin indices of a spherical point, or None for a discarded point.

    Example:
        >>> bin_indices(SphericalPoint(40.0, 0.0, cfg.f_down), cfg)  # n_r=40, l_max=80
        (21, 1, 1)
    """
    i, j, k, keep = bin_indices_array(
        np.array([sp.r]), np.array([sp.theta]), np.array([sp.phi]), cfg
    )
    if not keep[0]:
        return None
    return int(i[0]), int(j[0]), int(k[0])


# ================== Counters & Descriptor ==================

def iev_from_ec(ec: np.ndarray, variant: Variant = Variant.STANDARD) -> np.ndarray:
    """Min-max normalized EC; all ones when EC is constant or the variant says so."""
    ec = np.asarray(ec, dtype=np.float64)
    if variant is Variant.CONSTANT_IEV:
        return np.ones_like(ec)
    lo, hi = ec.min(), ec.max()
    if hi == lo:
        return np.ones_like(ec)
    return (ec - lo) / (hi - lo)


def counters_from_matrices(rec: np.ndarray, aec: np.ndarray,
                           variant: Variant = Variant.STANDARD, discarded: int = 0) -> CounterSet:
    """CounterSet with EC and IEV derived from given REC/AEC."""
    rec = np.asarray(rec, dtype=np.int64)
    aec = np.asarray(aec, dtype=np.int64)
    ec = rec.sum(axis=0)
    return CounterSet(rec, aec, ec, iev_from_ec(ec, variant), discarded)


def build_counters(cloud: PointCloud, cfg: BinningConfig) -> CounterSet:
    """
    Count the (already downsampled) points per bin.

    Returns:
        CounterSet: REC, AEC, EC, IEV and the discard count.
    """
    r, theta, phi = to_spherical_array(cloud.points)
    i, j, k, keep = bin_indices_array(r, theta, phi, cfg)
    rec = np.zeros((cfg.n_r, cfg.n_e), dtype=np.int64)
    aec = np.zeros((cfg.n_a, cfg.n_e), dtype=np.int64)
    np.add.at(rec, (i - 1, k - 1), 1)
    np.add.at(aec, (j - 1, k - 1), 1)
    discarded = int(keep.size - keep.sum())
    counters = counters_from_matrices(rec, aec, cfg.variant, discarded)
    _logger.debug(f"Counters built | Frame: {cloud.frame_id} | Binned: {counters.binned} | Discarded: {discarded}")
    return counters


def build_solid(counters: CounterSet, cfg: BinningConfig, frame_id: int = 0) -> SolidDescriptor:
    """R-SOLiD = REC . IEV and A-SOLiD = AEC . IEV."""
    if counters.rec.shape != (cfg.n_r, cfg.n_e) or counters.aec.shape != (cfg.n_a, cfg.n_e):
        raise DescriptorMismatchError(
            f"Counters {counters.rec.shape}/{counters.aec.shape} do not fit config "
            f"({cfg.n_r}, {cfg.n_e})/({cfg.n_a}, {cfg.n_e})"
        )
    r_solid = counters.rec.astype(np.float64) @ counters.iev
    a_solid = counters.aec.astype(np.float64) @ counters.iev
    return SolidDescriptor(r_solid, a_solid, frame_id)


def describe(cloud: PointCloud, cfg: BinningConfig) -> SolidDescriptor:
    """Raw cloud -> voxel_downsample -> build_counters -> build_solid."""
    sparse = voxel_downsample(cloud, cfg.voxel)
    counters = build_counters(sparse, cfg)
    return build_solid(counters, cfg, cloud.frame_id)


def describe_with_stats(cloud: PointCloud, cfg: BinningConfig) -> Tuple[SolidDescriptor, CounterSet]:
    """describe() that also hands back the counters (discard statistics)."""
    sparse = voxel_downsample(cloud, cfg.voxel)
    counters = build_counters(sparse, cfg)
    return build_solid(counters, cfg, cloud.frame_id), counters


def describe_many(clouds: Sequence[PointCloud], cfg: BinningConfig, jobs: int = 1,
                  progress: bool = False) -> List[SolidDescriptor]:
    """
    describe() over many clouds, in input order.

    Args:
        clouds: Point clouds.
        cfg: Binning configuration.
        jobs: Worker processes; 1 runs in-process.
        progress: Show a tqdm progress bar.
    """
    worker = partial(describe, cfg=cfg)
    if jobs > 1 and len(clouds) > 1:
        chunksize = max(1, len(clouds) // (jobs * 4))
        return process_map(worker, clouds, max_workers=jobs, chunksize=chunksize,
                           desc="describe", disable=not progress)
    return [worker(c) for c in tqdm(clouds, desc="describe", disable=not progress)]


def payload_bytes(cfg: BinningConfig) -> int:
    """Stored R-SOLiD size in bytes."""
    return cfg.n_r * BYTES_PER_VALUE


def pair_bytes(cfg: BinningConfig) -> int:
    """R-SOLiD plus A-SOLiD size in bytes."""
    return (cfg.n_r + cfg.n_a) * BYTES_PER_VALUE
