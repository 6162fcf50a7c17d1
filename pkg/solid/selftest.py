"""
Self-Test Module
================

Seeded property suite runnable without any dataset (`python -m solid selftest`).

Each property draws from its own generator, derived from (seed, position),
so one property's draws never shift another's and the summary text is
identical across runs with the same seed.

Example:
    >>> results = run_selftest(seed=0)
    >>> print(format_summary(results, seed=0))
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
from scipy.stats import rankdata

from constants.solid_constants import DB_MAGIC
from solid.descriptor import (
    BinningConfig,
    Variant,
    build_counters,
    build_solid,
    counters_from_matrices,
)
from solid.evaluation import GtLoopTable, build_gt, rotation_error, score_queries, yaw_rotation
from solid.ingest import FovMask, PointCloud, clip_fov, voxel_downsample
from solid.retrieval import DescriptorDatabase, Match, NoCandidate, estimate_heading, search_bruteforce, search_kdtree, shift
from solid.storage import decode_db, encode_db
from solid.synthetic import (
    bin_centre_ring,
    random_cloud,
    random_descriptors,
    random_positions,
    random_rotation,
    rotate_cloud_yaw,
)
from utils.framework_exception import (
    BadMagicError,
    FrameworkException,
    PropertyFailure,
    TruncatedDatabaseError,
    VersionMismatchError,
)

_logger = logging.getLogger(__name__)

PropertyCheck = Callable[[np.random.Generator], str]
_PROPERTIES: List[Tuple[str, PropertyCheck]] = []


def _property(name: str):
    def register(check: PropertyCheck) -> PropertyCheck:
        _PROPERTIES.append((name, check))
        return check
    return register


def _require(name: str, condition: bool, detail: str) -> None:
    if not condition:
        raise PropertyFailure(name, detail)


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str


def property_names() -> List[str]:
    return [name for name, _ in _PROPERTIES]


# ================== Descriptor ==================

@_property("yaw-invariance")
def check_yaw_invariance(rng: np.random.Generator) -> str:
    cfg = BinningConfig()
    worst = 0.0
    for _ in range(100):
        sparse = voxel_downsample(random_cloud(rng, 10_000, cfg), cfg.voxel)
        rotated = rotate_cloud_yaw(sparse, float(rng.uniform(0.0, 360.0)))
        base, turned = build_counters(sparse, cfg), build_counters(rotated, cfg)
        _require("yaw-invariance", np.array_equal(base.rec, turned.rec), "REC changed under a z-rotation")
        r0 = build_solid(base, cfg).r_solid
        r1 = build_solid(turned, cfg).r_solid
        worst = max(worst, float(np.max(np.abs(r0 - r1)) / max(np.max(np.abs(r0)), 1e-300)))
    _require("yaw-invariance", worst < 1e-9, f"max relative deviation {worst:.3e}")
    return "100 clouds x 10000 points, R-SOLiD unchanged"


@_property("circular-shift-law")
def check_shift_law(rng: np.random.Generator) -> str:
    cfg = BinningConfig()
    counts = rng.permutation(cfg.n_a) + 1
    base = bin_centre_ring(counts, cfg)
    cand = build_solid(build_counters(base, cfg), cfg)
    step = 360.0 / cfg.n_a
    for m in range(1, cfg.n_a):
        query = build_solid(build_counters(rotate_cloud_yaw(base, -m * step), cfg), cfg)
        _require("circular-shift-law", np.array_equal(query.a_solid, shift(cand.a_solid, m)),
                 f"A-SOLiD is not the shift by {m}")
        n_star, _ = estimate_heading(query.a_solid, cand.a_solid)
        _require("circular-shift-law", n_star == m, f"heading {n_star} recovered for shift {m}")
    return f"shifts 1..{cfg.n_a - 1} exact, heading recovered for all"


@_property("heading-42deg")
def check_heading_42(rng: np.random.Generator) -> str:
    cfg = BinningConfig()
    counts = rng.integers(1, 30, cfg.n_a)
    cand_cloud = bin_centre_ring(counts, cfg)
    query_cloud = rotate_cloud_yaw(cand_cloud, -42.0)
    cand = build_solid(build_counters(cand_cloud, cfg), cfg)
    query = build_solid(build_counters(query_cloud, cfg), cfg)
    _, heading = estimate_heading(query.a_solid, cand.a_solid)
    _require("heading-42deg", math.isclose(heading, 42.0), f"heading {heading} deg")
    return "42 deg yaw recovered"


@_property("mass-conservation")
def check_mass_conservation(rng: np.random.Generator) -> str:
    cfg = BinningConfig(n_r=20, n_a=30, n_e=16)
    for _ in range(1000):
        n = int(rng.integers(0, 500))
        i, j, k = rng.integers(0, cfg.n_r, n), rng.integers(0, cfg.n_a, n), rng.integers(0, cfg.n_e, n)
        rec = np.zeros((cfg.n_r, cfg.n_e), dtype=np.int64)
        aec = np.zeros((cfg.n_a, cfg.n_e), dtype=np.int64)
        np.add.at(rec, (i, k), 1)
        np.add.at(aec, (j, k), 1)

        counters = counters_from_matrices(rec, aec)
        desc = build_solid(counters, cfg)
        total = float(counters.ec @ counters.iev)
        for name, value in (("R-SOLiD", desc.r_solid.sum()), ("A-SOLiD", desc.a_solid.sum())):
            _require("mass-conservation", math.isclose(value, total, rel_tol=1e-12, abs_tol=1e-9),
                     f"{name} sum {value} != EC.IEV {total}")

        flat_cfg = cfg.with_variant(Variant.CONSTANT_IEV)
        flat = build_solid(counters_from_matrices(rec, aec, Variant.CONSTANT_IEV), flat_cfg)
        _require("mass-conservation", np.array_equal(flat.r_solid, rec.sum(axis=1).astype(np.float64)),
                 "constant-IEV R-SOLiD differs from REC row sums")
        _require("mass-conservation", np.array_equal(flat.a_solid, aec.sum(axis=1).astype(np.float64)),
                 "constant-IEV A-SOLiD differs from AEC row sums")
    return "1000 counter sets"


# ================== Ingest ==================

@_property("clip-partition")
def check_clip_partition(rng: np.random.Generator) -> str:
    cfg = BinningConfig()
    for _ in range(50):
        cloud = random_cloud(rng, 2000, cfg)
        a, b = sorted(rng.uniform(0.0, 360.0, 2))
        mask = FovMask(((float(a), float(b)),))
        kept = clip_fov(cloud, mask)
        dropped = clip_fov(cloud, mask.complement())
        _require("clip-partition", len(kept) + len(dropped) == len(cloud),
                 f"{len(kept)} + {len(dropped)} != {len(cloud)}")
        _require("clip-partition", len(clip_fov(kept, mask)) == len(kept), "clip is not idempotent")
    return "50 masks, kept + dropped = input"


@_property("voxel-oracle")
def check_voxel_oracle(rng: np.random.Generator) -> str:
    voxel = 0.5
    pts = rng.uniform(-3.0, 3.0, (3000, 3))
    cloud = PointCloud(pts)
    out = voxel_downsample(cloud, voxel).points

    cells = {}
    for p in pts:
        cells.setdefault(tuple(np.floor(p / voxel).astype(int)), []).append(p)
    expected = np.array([np.mean(cells[key], axis=0) for key in sorted(cells)])
    _require("voxel-oracle", out.shape == expected.shape, f"{out.shape[0]} cells vs {expected.shape[0]}")
    _require("voxel-oracle", np.allclose(out, expected, rtol=0.0, atol=1e-12), "centroids differ from oracle")

    shuffled = voxel_downsample(PointCloud(pts[rng.permutation(len(pts))]), voxel).points
    _require("voxel-oracle", np.array_equal(out, shuffled), "result depends on input order")
    return f"{out.shape[0]} cells match, order independent"


# ================== Retrieval ==================

@_property("kd-equals-bf")
def check_kd_equals_bf(rng: np.random.Generator) -> str:
    cfg = BinningConfig()
    db = DescriptorDatabase(cfg)
    for desc in random_descriptors(rng, 1000, cfg):
        db.add(desc)
    db.build_index()
    queries = random_descriptors(rng, 200, cfg)
    exclude = 300
    agree = 0
    for i, q in enumerate(queries):
        q = q.with_frame_id(int(rng.integers(0, 1300)))
        window = None if i % 2 else exclude
        bf, kd = search_bruteforce(db, q, window), search_kdtree(db, q, window)
        if isinstance(bf, NoCandidate):
            _require("kd-equals-bf", isinstance(kd, NoCandidate), f"query {i}: kd found a candidate in an empty pool")
        else:
            _require("kd-equals-bf", isinstance(kd, Match) and kd.candidate_id == bf.candidate_id,
                     f"query {i}: bf {bf.candidate_id} vs kd {getattr(kd, 'candidate_id', None)}")
        agree += 1
    return f"{agree}/200 queries agree over 1000 records"


@_property("database-round-trip")
def check_database_round_trip(rng: np.random.Generator) -> str:
    cfg = BinningConfig(n_e=32, variant=Variant.CONSTANT_IEV)
    db = DescriptorDatabase(cfg)
    for desc, pos in zip(random_descriptors(rng, 25, cfg), random_positions(rng, 25)):
        db.add(desc, pos)
    data = encode_db(db)
    again = decode_db(data)
    _require("database-round-trip", again == db, "decoded database differs")
    _require("database-round-trip", encode_db(again) == data, "re-encoding is not byte-identical")

    cases = (
        (b"NOTSOLID" + data[8:], BadMagicError),
        (data[:8] + (2).to_bytes(2, "little") + data[10:], VersionMismatchError),
        (data[:20], TruncatedDatabaseError),
        (data[:-5], TruncatedDatabaseError),
    )
    for corrupt, expected in cases:
        try:
            decode_db(corrupt)
        except expected:
            continue
        except FrameworkException as e:
            raise PropertyFailure("database-round-trip", f"expected {expected.__name__}, got {type(e).__name__}")
        raise PropertyFailure("database-round-trip", f"corruption not detected, expected {expected.__name__}")
    _require("database-round-trip", data[:8] == DB_MAGIC, "magic missing")
    return "byte-exact, 4 corruptions classified"


# ================== Evaluation ==================

def _labelled_matches(rng: np.random.Generator, count: int, with_wrong_loops: bool):
    matches, loops = [], {}
    for q in range(count):
        distance = round(float(rng.random()), 2)
        kind = int(rng.integers(0, 3 if with_wrong_loops else 2))
        if kind == 0:
            loops[q] = frozenset({q + 10_000})
            cand = q + 10_000
        elif kind == 1:
            loops[q] = frozenset()
            cand = q + 20_000
        else:
            loops[q] = frozenset({q + 10_000})
            cand = q + 20_000
        matches.append(Match(q, cand, distance, 0, 0.0))
    return matches, GtLoopTable(loops)


@_property("auc-rank-oracle")
def check_auc_oracle(rng: np.random.Generator) -> str:
    matches, gt = _labelled_matches(rng, 200, with_wrong_loops=False)
    report = score_queries(matches, gt)
    positive = np.array([gt.has_loop(m.query_id) for m in matches])
    ranks = rankdata([-m.distance for m in matches])
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    oracle = (ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    _require("auc-rank-oracle", abs(report.auc - oracle) <= 1e-9, f"AUC {report.auc} vs oracle {oracle}")
    return "200 queries, trapezoid AUC equals rank statistic"


@_property("f1-exhaustive-oracle")
def check_f1_oracle(rng: np.random.Generator) -> str:
    matches, gt = _labelled_matches(rng, 200, with_wrong_loops=True)
    report = score_queries(matches, gt)
    best = 0.0
    for tau in sorted({m.distance for m in matches}) + [math.inf]:
        tp = fp = fn = 0
        for m in matches:
            positive = m.distance < tau
            correct = gt.is_correct(m.query_id, m.candidate_id)
            if positive and correct:
                tp += 1
            elif positive:
                fp += 1
            elif gt.has_loop(m.query_id):
                fn += 1
        if 2 * tp + fp + fn:
            best = max(best, 2 * tp / (2 * tp + fp + fn))
    _require("f1-exhaustive-oracle", report.f1_max == best, f"F1 max {report.f1_max} vs oracle {best}")
    return "200 queries, F1 max equals enumeration"


@_property("gt-pairwise-oracle")
def check_gt_oracle(rng: np.random.Generator) -> str:
    positions = random_positions(rng, 500)
    d_gt, exclude = 10.0, 50
    table = build_gt(positions, d_gt, exclude)
    for q in range(len(positions)):
        expected = frozenset(
            c for c in range(len(positions))
            if c <= q - exclude and np.linalg.norm(positions[q] - positions[c]) <= d_gt
        )
        _require("gt-pairwise-oracle", table.loop_ids[q] == expected, f"frame {q} loop set differs")
    return f"500 poses, {table.num_loops} with loops"


@_property("rotation-error")
def check_rotation_error(rng: np.random.Generator) -> str:
    for delta in (0.0, 1.0, 90.0, 180.0):
        base = float(rng.uniform(0.0, 360.0))
        re = rotation_error(yaw_rotation(base), yaw_rotation(base + delta))
        _require("rotation-error", abs(re - delta) <= 1e-9, f"RE {re} for delta {delta}")
        frame = random_rotation(rng)
        re = rotation_error(frame, frame @ yaw_rotation(delta))
        _require("rotation-error", abs(re - delta) <= 1e-9, f"RE {re} for delta {delta} in a random frame")
    return "delta 0, 1, 90, 180 deg, yaw and random frames"


# ================== Runner ==================

def run_selftest(seed: int = 0) -> List[PropertyResult]:
    """Run every property; failures are collected, not raised."""
    results = []
    for position, (name, check) in enumerate(_PROPERTIES):
        rng = np.random.default_rng([seed, position])
        try:
            detail = check(rng)
            results.append(PropertyResult(name, True, detail))
            _logger.info(f"Property passed | {name} | {detail}")
        except FrameworkException as e:
            results.append(PropertyResult(name, False, e.message))
            _logger.error(f"Property failed | {name} | {e.message}")
    return results


def format_summary(results: List[PropertyResult], seed: int) -> str:
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}" for r in results]
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} properties passed (seed {seed})")
    return "\n".join(lines)
