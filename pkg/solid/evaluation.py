"""
Evaluation Module
=================

Ground-truth loops, retrieval scoring, rotation error, communication
time and throughput measurement.

Scoring conventions:
    - Threshold sweep over observed distances: tau = 0, every midpoint between
      consecutive distinct distances, and +inf. A query is predicted positive
      iff it has a candidate with distance < tau.
    - Each query falls in exactly one cell: TP (positive, candidate in GT),
      FP (positive, candidate not in GT, whether or not a loop exists),
      FN (negative, loop exists), TN (negative, no loop).
    - Precision with no positives is 1; 0/0 rates are 0.
    - AUC is the trapezoidal area of (FPR, TPR) in threshold order; when one
      class never occurs the ROC is degenerate and AUC is NaN.
    - Recall@1 ignores thresholds: top-1 correct / queries with a loop.

Example:
    >>> gt = build_gt(positions, d_gt=10.0, exclude_recent=100)
    >>> report = score_queries(results, gt)
    >>> report.recall_at_1, report.auc
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from constants.solid_constants import MIN_BENCH_SCANS, ROTATION_WARN_TOL
from solid.descriptor import BinningConfig, describe, describe_many, payload_bytes
from solid.ingest import PointCloud
from solid.retrieval import DescriptorDatabase, Match, NoCandidate, SearchResult, search
from utils.framework_exception import FrameworkException, RotationMatrixError, UndefinedMetricError

_logger = logging.getLogger(__name__)

SINGLE = "single"
MULTI = "multi"


# ================== Ground Truth ==================

@dataclass(frozen=True)
class GtLoopTable:
    """
    Admissible true loops per query frame.

    Attributes:
        loop_ids: query frame_id -> frame_ids within d_gt that respect the
            exclusion window (single session) or lie in the target (multi).
    """

    loop_ids: Dict[int, FrozenSet[int]]

    def has_loop(self, query_id: int) -> bool:
        return bool(self.loop_ids.get(query_id))

    def is_correct(self, query_id: int, candidate_id: int) -> bool:
        return candidate_id in self.loop_ids.get(query_id, frozenset())

    @property
    def num_loops(self) -> int:
        return sum(1 for ids in self.loop_ids.values() if ids)


def build_gt(positions, d_gt: float, exclude_recent: int = 0, mode: str = SINGLE,
             frame_ids: Optional[Sequence[int]] = None,
             target_positions=None, target_ids: Optional[Sequence[int]] = None) -> GtLoopTable:
    """
    Ground-truth loop table from positions.

    Args:
        positions: (N, 3) query positions in meters.
        d_gt: Loop radius in meters (inclusive).
        exclude_recent: Single session only; candidates need c <= q - exclude_recent.
        mode: "single" (self-query) or "multi" (query vs target session).
        frame_ids: Frame ids of the positions (default 0..N-1).
        target_positions / target_ids: The target session for mode "multi".

    Returns:
        GtLoopTable
    """
    if not d_gt > 0:
        raise FrameworkException(f"d_gt must be positive, got {d_gt}")
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    ids = np.arange(pts.shape[0]) if frame_ids is None else np.asarray(frame_ids, dtype=np.int64)

    if mode == SINGLE:
        tgt_pts, tgt_ids = pts, ids
    elif mode == MULTI:
        if target_positions is None:
            raise FrameworkException("Multi-session ground truth needs target positions")
        tgt_pts = np.asarray(target_positions, dtype=np.float64).reshape(-1, 3)
        tgt_ids = np.arange(tgt_pts.shape[0]) if target_ids is None else np.asarray(target_ids, dtype=np.int64)
    else:
        raise FrameworkException(f"Unknown ground-truth mode '{mode}' | Expected: single, multi")

    loop_ids: Dict[int, FrozenSet[int]] = {}
    if tgt_pts.shape[0] == 0:
        return GtLoopTable({int(q): frozenset() for q in ids})
    tree = cKDTree(tgt_pts)
    neighbours = tree.query_ball_point(pts, r=d_gt)
    for q, near in zip(ids, neighbours):
        cands = tgt_ids[np.asarray(near, dtype=np.int64)]
        if mode == SINGLE:
            cands = cands[cands <= q - exclude_recent]
        loop_ids[int(q)] = frozenset(int(c) for c in cands)
    table = GtLoopTable(loop_ids)
    _logger.info(f"Ground truth built | Mode: {mode} | Queries: {len(ids)} | With loops: {table.num_loops} | d_gt: {d_gt} m")
    return table


# ================== Scoring ==================

@dataclass
class EvalReport:
    """Aggregate retrieval scores plus the curves they came from."""

    recall_at_1: float
    auc: float
    f1_max: float
    f1_threshold: float
    pr_curve: List[Tuple[float, float, float]]
    roc_curve: List[Tuple[float, float, float]]
    tp: int
    fp: int
    tn: int
    fn: int
    num_queries: int
    num_gt_loops: int
    max_precision_tp: int = 0
    max_precision_fp: int = 0
    mean_re_deg: float = math.nan
    desc_hz: float = math.nan
    search_hz: float = math.nan
    payload_bytes: int = 0
    diagnostics: List[str] = field(default_factory=list)

    def scalars(self) -> Dict[str, object]:
        """Every scalar field, curves excluded."""
        return {
            "recall_at_1": self.recall_at_1,
            "auc": self.auc,
            "f1_max": self.f1_max,
            "f1_threshold": self.f1_threshold,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "num_queries": self.num_queries,
            "num_gt_loops": self.num_gt_loops,
            "max_precision_tp": self.max_precision_tp,
            "max_precision_fp": self.max_precision_fp,
            "mean_re_deg": self.mean_re_deg,
            "desc_hz": self.desc_hz,
            "search_hz": self.search_hz,
            "payload_bytes": self.payload_bytes,
        }


class _Sweep(NamedTuple):
    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray


def thresholds_for(distances: np.ndarray) -> np.ndarray:
    """0, midpoints between consecutive distinct distances, +inf."""
    finite = np.unique(distances[np.isfinite(distances)])
    mids = (finite[1:] + finite[:-1]) / 2.0 if finite.size > 1 else np.zeros(0)
    return np.concatenate(([0.0], mids, [np.inf]))


def _sweep(results: Sequence[SearchResult], gt: GtLoopTable) -> Tuple[_Sweep, int]:
    correct, wrong_loop, wrong_noloop = [], [], []
    loop_nocand = noloop_nocand = 0
    top1_hits = 0
    for result in results:
        has_loop = gt.has_loop(result.query_id)
        if isinstance(result, NoCandidate):
            if has_loop:
                loop_nocand += 1
            else:
                noloop_nocand += 1
            continue
        if gt.is_correct(result.query_id, result.candidate_id):
            correct.append(result.distance)
            top1_hits += 1
        elif has_loop:
            wrong_loop.append(result.distance)
        else:
            wrong_noloop.append(result.distance)

    d_c, d_wl, d_wn = (np.sort(np.asarray(d, dtype=np.float64)) for d in (correct, wrong_loop, wrong_noloop))
    taus = thresholds_for(np.concatenate((d_c, d_wl, d_wn)))
    pos_c = np.searchsorted(d_c, taus, side="left")
    pos_wl = np.searchsorted(d_wl, taus, side="left")
    pos_wn = np.searchsorted(d_wn, taus, side="left")
    tp = pos_c
    fp = pos_wl + pos_wn
    fn = (d_c.size - pos_c) + (d_wl.size - pos_wl) + loop_nocand
    tn = (d_wn.size - pos_wn) + noloop_nocand
    return _Sweep(taus, tp, fp, tn, fn), top1_hits


def _ratio(num: np.ndarray, den: np.ndarray, empty: float) -> np.ndarray:
    num = num.astype(np.float64)
    den = den.astype(np.float64)
    out = np.full(num.shape, empty)
    np.divide(num, den, out=out, where=den > 0)
    return out


def trapezoid_auc(fpr: np.ndarray, tpr: np.ndarray) -> float:
    """Area under the piecewise-linear (fpr, tpr) curve in the given order."""
    fpr = np.asarray(fpr, dtype=np.float64)
    tpr = np.asarray(tpr, dtype=np.float64)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def matching_counts(results: Sequence[SearchResult], gt: GtLoopTable) -> Tuple[float, int, int]:
    """
    (threshold, tp, fp) at the threshold of highest precision among those with
    at least one TP; more TPs win a precision tie. (inf, 0, 0) if no TP exists.
    """
    sw, _ = _sweep(results, gt)
    best = (-1.0, -1, math.inf, 0, 0)
    for tau, tp, fp in zip(sw.thresholds, sw.tp, sw.fp):
        if tp == 0:
            continue
        precision = tp / (tp + fp)
        if (precision, tp) > best[:2]:
            best = (precision, int(tp), float(tau), int(tp), int(fp))
    return best[2], best[3], best[4]


def score_queries(results: Sequence[SearchResult], gt: GtLoopTable,
                  gt_rotation: Optional[Callable[[Match], Optional[np.ndarray]]] = None) -> EvalReport:
    """
    Score top-1 retrieval results against ground truth.

    Args:
        results: One Match or NoCandidate per query.
        gt: Ground-truth loop table.
        gt_rotation: Optional callback giving the true relative rotation
            (candidate frame -> query frame) of a match; enables mean RE over
            top-1 correct matches.

    Returns:
        EvalReport

    Raises:
        UndefinedMetricError: If no query has a ground-truth loop.
    """
    num_loops = sum(1 for r in results if gt.has_loop(r.query_id))
    if num_loops == 0:
        _logger.error(f"Recall@1 undefined | Queries: {len(results)} | No GT loops")
        raise UndefinedMetricError("Recall@1 is undefined: no GT loops among the queries")

    sw, top1_hits = _sweep(results, gt)
    diagnostics: List[str] = []
    precision = _ratio(sw.tp, sw.tp + sw.fp, 1.0)
    recall = _ratio(sw.tp, sw.tp + sw.fn, 0.0)
    fpr = _ratio(sw.fp, sw.fp + sw.tn, 0.0)
    f1 = _ratio(2 * sw.tp, 2 * sw.tp + sw.fp + sw.fn, 0.0)

    if np.all(sw.fp + sw.tn == 0) or np.all(sw.tp + sw.fn == 0):
        auc = math.nan
        diagnostics.append("degenerate ROC: only one class present, AUC undefined")
        _logger.warning("Degenerate ROC | Only one class present | AUC reported as NaN")
    else:
        auc = trapezoid_auc(fpr, recall)
    diagnostics.append("precision with zero predicted positives is defined as 1")

    best = int(np.argmax(f1))
    _, mp_tp, mp_fp = matching_counts(results, gt)

    mean_re = math.nan
    if gt_rotation is not None:
        errors = []
        for result in results:
            if isinstance(result, Match) and gt.is_correct(result.query_id, result.candidate_id):
                r_gt = gt_rotation(result)
                if r_gt is not None:
                    errors.append(rotation_error(yaw_rotation(result.heading_deg), r_gt))
        if errors:
            mean_re = float(np.mean(errors))

    degenerate = sum(1 for r in results if isinstance(r, Match) and r.degenerate)
    if degenerate:
        diagnostics.append(f"{degenerate} matches involved zero-norm descriptors")

    report = EvalReport(
        recall_at_1=top1_hits / num_loops,
        auc=auc,
        f1_max=float(f1[best]),
        f1_threshold=float(sw.thresholds[best]),
        pr_curve=[(float(t), float(p), float(r)) for t, p, r in zip(sw.thresholds, precision, recall)],
        roc_curve=[(float(t), float(f), float(r)) for t, f, r in zip(sw.thresholds, fpr, recall)],
        tp=int(sw.tp[best]), fp=int(sw.fp[best]), tn=int(sw.tn[best]), fn=int(sw.fn[best]),
        num_queries=len(results),
        num_gt_loops=num_loops,
        max_precision_tp=mp_tp,
        max_precision_fp=mp_fp,
        mean_re_deg=mean_re,
        diagnostics=diagnostics,
    )
    _logger.info(
        f"Scored | Queries: {len(results)} | GT loops: {num_loops} | Recall@1: {report.recall_at_1:.3f} "
        f"| AUC: {report.auc:.3f} | F1 max: {report.f1_max:.3f}"
    )
    return report


# ================== Rotation ==================

def yaw_rotation(deg: float) -> np.ndarray:
    """Rotation about +z by deg degrees."""
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def relative_rotation(r_query: np.ndarray, r_candidate: np.ndarray) -> np.ndarray:
    """Rotation of the query frame expressed in the candidate frame: R_c^T R_q."""
    return np.asarray(r_candidate).T @ np.asarray(r_query)


def _check_rotation(name: str, rotation: np.ndarray) -> np.ndarray:
    rot = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
    deviation = max(float(np.max(np.abs(rot.T @ rot - np.eye(3)))), abs(float(np.linalg.det(rot)) - 1.0))
    if deviation > ROTATION_WARN_TOL:
        raise RotationMatrixError(f"{name} is not orthonormal | Deviation: {deviation:.3e}")
    return rot


def rotation_error(r_est, r_gt) -> float:
    """
    Geodesic angle between two rotations in degrees.

    Equals arccos(clamp((trace(r_est^T r_gt) - 1) / 2, -1, 1)); evaluated as
    atan2(|axis part|, cos part) of the relative rotation, which keeps full
    precision near 0 and 180 degrees.

    Raises:
        RotationMatrixError: If either input deviates from SO(3) by more than 1e-3.
    """
    rel = _check_rotation("r_est", r_est).T @ _check_rotation("r_gt", r_gt)
    cos_part = (np.trace(rel) - 1.0) / 2.0
    axis = np.array([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]])
    sin_part = np.linalg.norm(axis) / 2.0
    return math.degrees(math.atan2(sin_part, min(max(cos_part, -1.0), 1.0)))


# ================== Communication & Timing ==================

def communication_time(payload_bytes_: int, bandwidth_bytes_per_s: float) -> float:
    """Seconds to move payload_bytes_ over a link of the given bandwidth."""
    if not bandwidth_bytes_per_s > 0:
        raise FrameworkException(f"Bandwidth must be positive, got {bandwidth_bytes_per_s}")
    return payload_bytes_ / bandwidth_bytes_per_s


def database_exchange_time(db: DescriptorDatabase, bandwidth_bytes_per_s: float) -> float:
    """Time to send every stored R-SOLiD of a database to another robot."""
    return communication_time(len(db) * payload_bytes(db.config), bandwidth_bytes_per_s)


class BenchResult(NamedTuple):
    desc_hz: float
    search_hz: float
    combined_hz: float


def bench_pipeline(scans: Sequence[PointCloud], cfg: BinningConfig, db: DescriptorDatabase,
                   backend: str = "bf", exclude_recent: Optional[int] = None) -> BenchResult:
    """
    Average describe and search rates over the scans, single-threaded.

    combined_hz = 1 / (mean describe seconds + mean search seconds).

    Raises:
        FrameworkException: Fewer than MIN_BENCH_SCANS scans.
    """
    if len(scans) < MIN_BENCH_SCANS:
        raise FrameworkException(f"bench_pipeline needs at least {MIN_BENCH_SCANS} scans, got {len(scans)}")
    if backend == "kd" and not db.frozen:
        db.build_index()
    desc_s, search_s = [], []
    for cloud in scans:
        t0 = time.perf_counter()
        desc = describe(cloud, cfg)
        t1 = time.perf_counter()
        search(db, desc, exclude_recent, backend)
        t2 = time.perf_counter()
        desc_s.append(t1 - t0)
        search_s.append(t2 - t1)
    mean_desc = float(np.mean(desc_s))
    mean_search = float(np.mean(search_s))
    result = BenchResult(
        desc_hz=_hz(mean_desc),
        search_hz=_hz(mean_search),
        combined_hz=_hz(mean_desc + mean_search),
    )
    _logger.info(
        f"Bench | Backend: {backend} | Records: {len(db)} | Describe: {result.desc_hz:.2f} Hz "
        f"| Search: {result.search_hz:.2f} Hz | Combined: {result.combined_hz:.2f} Hz"
    )
    return result


def bench_parallel_describe(scans: Sequence[PointCloud], cfg: BinningConfig, jobs: int) -> float:
    """Descriptor throughput (frames per second) with `jobs` worker processes."""
    t0 = time.perf_counter()
    describe_many(scans, cfg, jobs=jobs)
    elapsed = time.perf_counter() - t0
    hz = len(scans) / elapsed if elapsed > 0 else math.inf
    _logger.info(f"Bench | Parallel describe | Jobs: {jobs} | {hz:.2f} Hz")
    return hz


def _hz(seconds: float) -> float:
    return 1.0 / seconds if seconds > 0 else math.inf
