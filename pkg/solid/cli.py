"""
Command-Line Front-End
======================

`python -m solid <describe|eval|bench|selftest> [flags]`

    describe   scans (+ poses) -> <out>/solid.db and <out>/run.cfg
    eval       database(s) -> report.json, pr_curve.csv, roc_curve.csv, matches.csv
               (--target-db for multi-session, --fov-sweep for rotated-FOV queries)
    bench      describe/search throughput for bf and kd -> bench.json
    selftest   seeded property suite

Configuration precedence: sensor profile (configs/config.yaml, --profile or
SOLID_PROFILE) < key=value file (--config) < command-line flags. The merged
RunConfig is echoed to <out>/run.cfg and embedded in report.json.

Exit codes: 0 ok, 1 usage, 2 data error, 3 property failure.
"""

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm
from tqdm.contrib.concurrent import process_map

import solid
from constants.solid_constants import (
    BENCH_FILE_NAME,
    CONFIG_ECHO_FILE_NAME,
    DB_FILE_NAME,
    DEFAULT_EXCLUDE_RECENT,
    DEFAULT_GT_DIST_SINGLE,
    EXIT_DATA_ERROR,
    EXIT_OK,
    EXIT_PROPERTY_FAILURE,
    EXIT_USAGE,
    FOV_SWEEP_FILE_NAME,
)
from solid.descriptor import BinningConfig, SolidDescriptor, describe_with_stats, payload_bytes
from solid.evaluation import (
    MULTI,
    SINGLE,
    bench_parallel_describe,
    bench_pipeline,
    build_gt,
    relative_rotation,
    score_queries,
)
from solid.ingest import (
    FovMask,
    PointCloud,
    Pose,
    clip_fov,
    list_scan_files,
    load_kitti_calib,
    load_kitti_poses,
    load_kitti_scan,
    poses_to_lidar_frame,
    sample_by_distance,
)
from solid.report import provenance, write_json, write_report
from solid.retrieval import DescriptorDatabase, search_all
from solid.selftest import format_summary, run_selftest
from solid.storage import load_db, save_db
from solid.synthetic import synthetic_scans
from utils.config_reader import ConfigReader
from utils.csv_util import csv_writer
from utils.framework_exception import (
    ConfigurationError,
    FrameworkException,
    MissingPositionsError,
    PropertyFailure,
)
from utils.log_config import configure_logging, timestamped_log_name

_logger = logging.getLogger(__name__)


# ================== RunConfig ==================

@dataclass(frozen=True)
class RunConfig:
    """
    Everything a command needs besides the database paths.

    Serialized as flat `key=value` lines in field order; floats use repr so
    the text round-trips exactly.
    """

    scans: str = ""
    poses: str = ""
    calib: str = ""
    n_r: int = 40
    n_a: int = 60
    n_e: int = 64
    l_max: float = 80.0
    f_up: float = 2.0
    f_down: float = -24.8
    voxel: float = 0.5
    variant: str = "standard"
    fov: str = "0-360"
    exclude_recent: int = DEFAULT_EXCLUDE_RECENT
    gt_dist: float = DEFAULT_GT_DIST_SINGLE
    backend: str = "bf"
    sample_spacing: float = 0.0
    out: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.backend not in ("bf", "kd"):
            raise ConfigurationError(f"Unknown backend '{self.backend}' | Expected: bf, kd")
        if self.exclude_recent < 0:
            raise ConfigurationError(f"exclude_recent must be >= 0, got {self.exclude_recent}")
        if self.sample_spacing < 0:
            raise ConfigurationError(f"sample_spacing must be >= 0, got {self.sample_spacing}")
        if not self.gt_dist > 0:
            raise ConfigurationError(f"gt_dist must be positive, got {self.gt_dist}")

    @classmethod
    def from_profile(cls) -> "RunConfig":
        """Defaults of the active sensor profile."""
        profile = ConfigReader.as_dict()
        names = {f.name for f in fields(cls)}
        return cls(**{k: _coerce(cls, k, v) for k, v in profile.items() if k in names})

    def with_overrides(self, overrides: Dict[str, object]) -> "RunConfig":
        return replace(self, **{k: _coerce(RunConfig, k, v) for k, v in overrides.items() if v is not None})

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name}={repr(value) if isinstance(value, float) else value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse_text(cls, text: str) -> Dict[str, object]:
        """key=value lines -> typed overrides; blank lines and # comments skipped."""
        names = {f.name for f in fields(cls)}
        values: Dict[str, object] = {}
        for line_number, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in names:
                raise ConfigurationError(f"Bad config line {line_number}: '{line}'")
            values[key] = _coerce(cls, key, value.strip())
        return values

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls().with_overrides(cls.parse_text(text))

    def binning(self) -> BinningConfig:
        return BinningConfig(n_r=self.n_r, n_a=self.n_a, n_e=self.n_e, l_max=self.l_max,
                             f_up=self.f_up, f_down=self.f_down, voxel=self.voxel, variant=self.variant)

    def fov_mask(self) -> FovMask:
        return FovMask.parse(self.fov)


def _coerce(cls, key: str, value):
    kind = {f.name: f.type for f in fields(cls)}[key]
    try:
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return str(value)
    except ValueError as e:
        raise ConfigurationError(f"Config key '{key}' expects {kind.__name__}, got '{value}'") from e


# ================== Helpers ==================

def _load_poses(cfg: RunConfig) -> Optional[List[Pose]]:
    if not cfg.poses:
        return None
    poses = load_kitti_poses(cfg.poses)
    if cfg.calib:
        poses = poses_to_lidar_frame(poses, load_kitti_calib(cfg.calib))
    return poses


def _pose_of(poses: Sequence[Pose], frame_id: int) -> Pose:
    if frame_id >= len(poses):
        raise FrameworkException(f"No pose for frame {frame_id} | Poses: {len(poses)}")
    return poses[frame_id]


def _select_frames(cfg: RunConfig, poses: Optional[List[Pose]]) -> List[Tuple[int, Path]]:
    frames = list_scan_files(cfg.scans)
    if cfg.sample_spacing > 0:
        if poses is None:
            raise ConfigurationError("--sample-spacing needs --poses")
        kept = set(sample_by_distance([_pose_of(poses, fid) for fid, _ in frames], cfg.sample_spacing))
        frames = [(fid, path) for fid, path in frames if fid in kept]
    return frames


def _describe_frame(job: Tuple[int, str, BinningConfig, FovMask]) -> Tuple[SolidDescriptor, int]:
    frame_id, path, binning, mask = job
    try:
        cloud = load_kitti_scan(path, frame_id)
    except OSError as e:
        raise FrameworkException(f"Cannot read scan of frame {frame_id} | File: {path} | {e}") from e
    desc, counters = describe_with_stats(clip_fov(cloud, mask), binning)
    return desc, counters.discarded


def _describe_frames(frames: Sequence[Tuple[int, Path]], binning: BinningConfig, mask: FovMask,
                     jobs: int) -> List[Tuple[SolidDescriptor, int]]:
    work = [(fid, str(path), binning, mask) for fid, path in frames]
    if jobs > 1 and len(work) > 1:
        return process_map(_describe_frame, work, max_workers=jobs,
                           chunksize=max(1, len(work) // (jobs * 4)), desc="describe")
    return [_describe_frame(job) for job in tqdm(work, desc="describe")]


def _write_echo(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = out / CONFIG_ECHO_FILE_NAME
    echo.write_text(cfg.to_text())
    return echo


# ================== Commands ==================

def cmd_describe(cfg: RunConfig, jobs: int = 1) -> Path:
    """
    Describe every (sampled) scan and write the database.

    Returns:
        Path: The written database file.
    """
    if not cfg.scans:
        raise ConfigurationError("describe needs --scans")
    binning = cfg.binning()
    mask = cfg.fov_mask()
    poses = _load_poses(cfg)
    frames = _select_frames(cfg, poses)
    if not frames:
        raise FrameworkException(f"No .bin scans in {cfg.scans}")

    db = DescriptorDatabase(binning)
    discarded = 0
    for (frame_id, _), (desc, dropped) in zip(frames, _describe_frames(frames, binning, mask, jobs)):
        position = _pose_of(poses, frame_id).position if poses is not None else None
        db.add(desc, position)
        discarded += dropped
        _logger.debug(f"Frame described | Frame: {frame_id} | Discarded: {dropped}")

    db_path = save_db(db, Path(cfg.out) / DB_FILE_NAME)
    _write_echo(cfg)
    _logger.info(f"Describe finished | Frames: {len(db)} | Discarded points: {discarded} | FOV: {mask.to_text()}")
    print(f"described {len(db)} frames, {discarded} points outside range/FOV -> {db_path}")
    return db_path


def _gt_rotation_lookup(poses: Optional[List[Pose]]):
    if poses is None:
        return None

    def lookup(match):
        if match.query_id >= len(poses) or match.candidate_id >= len(poses):
            return None
        return relative_rotation(poses[match.query_id].rotation, poses[match.candidate_id].rotation)
    return lookup


def _queries_and_gt(cfg: RunConfig, db: DescriptorDatabase, target: Optional[DescriptorDatabase]):
    for name, base in (("query", db), ("target", target)):
        if base is not None and not base.has_positions:
            raise MissingPositionsError(f"The {name} database has no positions; describe it with --poses")
    queries = [record.descriptor for record in db]
    if target is None:
        gt = build_gt(db.positions(), cfg.gt_dist, cfg.exclude_recent, SINGLE, frame_ids=db.frame_ids)
        return queries, db, cfg.exclude_recent, gt
    gt = build_gt(db.positions(), cfg.gt_dist, 0, MULTI, frame_ids=db.frame_ids,
                  target_positions=target.positions(), target_ids=target.frame_ids)
    return queries, target, None, gt


def cmd_eval(cfg: RunConfig, db_path, target_db_path=None,
             fov_sweep: Optional[Sequence[float]] = None, jobs: int = 1) -> Path:
    """
    Score a database against ground truth.

    Single session self-queries db with the exclusion window; with a target
    database every db record queries the whole target.

    search_hz times the query loop; desc_hz is only measured when the sweep
    re-describes scans and is null otherwise.

    Returns:
        Path: report.json
    """
    db = load_db(db_path)
    target = load_db(target_db_path) if target_db_path else None
    if target is not None and not db.config.same_layout(target.config):
        raise ConfigurationError("Query and target databases were built with different binning")
    queries, search_db, exclude, gt = _queries_and_gt(cfg, db, target)

    t0 = time.perf_counter()
    results = search_all(search_db, queries, exclude, cfg.backend)
    search_s = time.perf_counter() - t0
    rotations = _gt_rotation_lookup(_load_poses(cfg)) if target is None else None
    report = score_queries(results, gt, rotations)
    report.payload_bytes = payload_bytes(db.config)
    report.search_hz = _rate(len(queries), search_s)

    if fov_sweep:
        report.desc_hz = _fov_sweep(cfg, db, search_db, exclude, gt, fov_sweep, jobs)

    echo = cfg.to_text()
    _write_echo(cfg)
    report_path = write_report(report, cfg.out, echo, results, gt)
    print(f"Recall@1 {report.recall_at_1:.3f} | AUC {report.auc:.3f} | F1 max {report.f1_max:.3f} -> {report_path}")
    return report_path


def _rate(count: int, seconds: float) -> float:
    return count / seconds if seconds > 0 else math.inf


def _fov_sweep(cfg: RunConfig, db: DescriptorDatabase, search_db: DescriptorDatabase,
               exclude: Optional[int], gt, offsets: Sequence[float], jobs: int) -> float:
    """
    Recall@1 of queries re-described with the FOV mask rotated by each offset.

    Writes fov_sweep.csv and returns the describe rate in frames per second.
    """
    if not cfg.scans:
        raise ConfigurationError("--fov-sweep needs --scans to re-describe the queries")
    by_id = dict(list_scan_files(cfg.scans))
    missing = [fid for fid in db.frame_ids if fid not in by_id]
    if missing:
        raise FrameworkException(f"Scans missing for {len(missing)} database frames, first: {missing[0]}")
    frames = [(int(fid), by_id[int(fid)]) for fid in db.frame_ids]
    # the database does not store the voxel size
    binning = replace(db.config, voxel=cfg.voxel)
    rows = []
    desc_s = 0.0
    for offset in offsets:
        mask = cfg.fov_mask().rotated(offset)
        t0 = time.perf_counter()
        described = _describe_frames(frames, binning, mask, jobs)
        desc_s += time.perf_counter() - t0
        results = search_all(search_db, [desc for desc, _ in described], exclude, cfg.backend)
        report = score_queries(results, gt)
        rows.append((float(offset), mask.to_text(), report.recall_at_1, report.auc))
        _logger.info(f"FOV sweep | Offset: {offset} deg | Recall@1: {report.recall_at_1:.3f}")
    csv_writer(Path(cfg.out) / FOV_SWEEP_FILE_NAME, ("offset_deg", "fov", "recall_at_1", "auc"), rows)
    return _rate(len(frames) * len(offsets), desc_s)


def _bench_scans(cfg: RunConfig, count: int) -> List[PointCloud]:
    binning = cfg.binning()
    if not cfg.scans:
        return synthetic_scans(np.random.default_rng(cfg.seed), count, binning)
    mask = cfg.fov_mask()
    frames = list_scan_files(cfg.scans)[:count]
    return [clip_fov(load_kitti_scan(path, fid), mask) for fid, path in frames]


def cmd_bench(cfg: RunConfig, db_path=None, bench_frames: int = 100, jobs: int = 1) -> Dict[str, object]:
    """
    Throughput of describe and search, both backends.

    Without --db the database is built from the benchmark scans themselves.
    """
    scans = _bench_scans(cfg, bench_frames)
    binning = cfg.binning()
    if db_path:
        db = load_db(db_path)
        binning = replace(db.config, voxel=cfg.voxel)
    else:
        db = DescriptorDatabase(binning)
        for desc, _ in (describe_with_stats(cloud, binning) for cloud in scans):
            db.add(desc)

    results: Dict[str, object] = {"records": len(db), "scans": len(scans)}
    for backend in ("bf", "kd"):
        timing = bench_pipeline(scans, binning, db, backend=backend)
        results[backend] = timing._asdict()
        print(f"{backend}: describe {timing.desc_hz:.2f} Hz | search {timing.search_hz:.2f} Hz "
              f"| combined {timing.combined_hz:.2f} Hz")
    results["desc_hz_parallel"] = bench_parallel_describe(scans, binning, jobs) if jobs > 1 else math.nan

    echo = cfg.to_text()
    _write_echo(cfg)
    results["config"] = echo
    results["provenance"] = provenance(echo)
    write_json(Path(cfg.out) / BENCH_FILE_NAME, results)
    return results


def cmd_selftest(seed: int = 0) -> int:
    """Run the property suite; EXIT_OK iff every property holds."""
    results = run_selftest(seed)
    print(format_summary(results, seed))
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise PropertyFailure(", ".join(failed), f"{len(failed)} of {len(results)} properties failed")
    return EXIT_OK


# ================== Argument Parsing ==================

class _ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _offsets(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated degrees, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value run configuration file")
    common.add_argument("--profile", help="sensor profile in configs/config.yaml")
    common.add_argument("--scans", help="directory of KITTI .bin scans")
    common.add_argument("--poses", help="KITTI pose file")
    common.add_argument("--calib", help="KITTI calib.txt; converts poses to the LiDAR frame")
    common.add_argument("--fov", help='azimuth keep intervals, e.g. "330-30" or "300-360,0-60"')
    common.add_argument("--voxel", type=float)
    common.add_argument("--nr", dest="n_r", type=int)
    common.add_argument("--na", dest="n_a", type=int)
    common.add_argument("--ne", dest="n_e", type=int)
    common.add_argument("--lmax", dest="l_max", type=float)
    common.add_argument("--fup", dest="f_up", type=float)
    common.add_argument("--fdown", dest="f_down", type=float)
    common.add_argument("--exclude-recent", dest="exclude_recent", type=int)
    common.add_argument("--gt-dist", dest="gt_dist", type=float)
    common.add_argument("--sample-spacing", dest="sample_spacing", type=float)
    common.add_argument("--backend", choices=("bf", "kd"))
    common.add_argument("--variant", choices=("standard", "constant-iev"))
    common.add_argument("--out")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--log-level", dest="log_level", default=None, help="console log level")

    parser = _ArgumentParser(prog="solid", description="SOLiD LiDAR place recognition toolkit")
    parser.add_argument("--version", action="version", version=f"solid {solid.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("describe", parents=[common], help="build a descriptor database from scans")
    p_eval = sub.add_parser("eval", parents=[common], help="score retrieval against ground truth")
    p_eval.add_argument("--db", required=True)
    p_eval.add_argument("--target-db", dest="target_db")
    p_eval.add_argument("--fov-sweep", dest="fov_sweep", type=_offsets)
    p_bench = sub.add_parser("bench", parents=[common], help="measure describe/search throughput")
    p_bench.add_argument("--db")
    p_bench.add_argument("--bench-frames", dest="bench_frames", type=int, default=100)
    sub.add_parser("selftest", parents=[common], help="run the property suite")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Profile defaults, then --config file, then flags."""
    if args.profile:
        ConfigReader.use_profile(args.profile)
    cfg = RunConfig.from_profile()
    if args.config:
        cfg = cfg.with_overrides(RunConfig.parse_text(Path(args.config).read_text()))
    names = {f.name for f in fields(RunConfig)}
    return cfg.with_overrides({k: v for k, v in vars(args).items() if k in names})


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out or "out")
    configure_logging(out_dir / "logs", timestamped_log_name("solid"), args.log_level)
    _logger.info(f"Command: {args.command} | Args: {vars(args)}")
    try:
        if args.command == "selftest":
            return cmd_selftest(args.seed or 0)
        cfg = resolve_config(args)
        if args.command == "describe":
            cmd_describe(cfg, args.jobs)
        elif args.command == "eval":
            cmd_eval(cfg, args.db, args.target_db, args.fov_sweep, args.jobs)
        elif args.command == "bench":
            cmd_bench(cfg, args.db, args.bench_frames, args.jobs)
        return EXIT_OK
    except PropertyFailure as e:
        _logger.error(e.message)
        print(f"error: {e.message}", file=sys.stderr)
        return EXIT_PROPERTY_FAILURE
    except (FrameworkException, OSError) as e:
        message = e.message if isinstance(e, FrameworkException) else str(e)
        _logger.error(f"Command failed | {args.command} | {type(e).__name__}: {message}")
        print(f"error: {message}", file=sys.stderr)
        return EXIT_DATA_ERROR
