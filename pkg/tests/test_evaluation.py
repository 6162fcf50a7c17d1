"""
Evaluation Tests
================

Ground-truth tables, threshold sweep, Recall@1 / AUC / F1, rotation error,
communication time, throughput and the written report files.

Fixtures Used:
    - setup_binning: default BinningConfig and a seeded generator
    - setup_database: 300 random records with positions

Markers:
    - @pytest.mark.evaluation
"""

import json
import logging
import math

import numpy as np
import pytest
from assertpy import assert_that
from scipy.stats import rankdata

from constants.solid_constants import MIN_BENCH_SCANS
from constants.test_data import MULTI_ROBOT_REFERENCE, YAW_DELTAS_DEG
from solid.descriptor import BinningConfig, SolidDescriptor, payload_bytes
from solid.evaluation import (
    MULTI,
    GtLoopTable,
    bench_pipeline,
    build_gt,
    communication_time,
    database_exchange_time,
    matching_counts,
    relative_rotation,
    rotation_error,
    score_queries,
    thresholds_for,
    yaw_rotation,
)
from solid.report import provenance, write_report
from solid.retrieval import DescriptorDatabase, Match, NoCandidate, search_all
from solid.synthetic import (
    figure_eight_trajectory,
    line_trajectory,
    random_descriptors,
    random_rotation,
    synthetic_scans,
)
from utils.csv_util import csv_reader
from utils.framework_exception import FrameworkException, RotationMatrixError, UndefinedMetricError


def _match(q, c, d):
    return Match(q, c, d, 0, 0.0)


@pytest.mark.evaluation
@pytest.mark.usefixtures('setup_binning')
class TestGroundTruth:

    def test_single_session_exclusion(self):
        positions = np.zeros((5, 3))
        table = build_gt(positions, 1.0, exclude_recent=2)
        assert_that(table.loop_ids[4]).is_equal_to(frozenset({0, 1, 2}))
        assert_that(table.loop_ids[1]).is_empty()
        assert_that(table.has_loop(2)).is_true()

    def test_radius_is_inclusive(self):
        positions = np.array([[0.0, 0, 0], [3.0, 4.0, 0.0]])
        assert_that(build_gt(positions, 5.0, 0).loop_ids[1]).contains(0)
        assert_that(build_gt(positions, 4.999, 0).loop_ids[1]).does_not_contain(0)

    def test_straight_line_has_no_loops(self):
        positions = np.array([p.translation for p in line_trajectory(200, 2.0)])
        assert_that(build_gt(positions, 10.0, 100).num_loops).is_zero()

    def test_matches_pairwise_oracle(self):
        positions = self.rng.uniform(0, 60, (120, 3))
        table = build_gt(positions, 8.0, 20)
        for q in range(120):
            expected = {c for c in range(120)
                        if c <= q - 20 and np.linalg.norm(positions[q] - positions[c]) <= 8.0}
            assert_that(set(table.loop_ids[q])).is_equal_to(expected)

    def test_multi_session_uses_target_ids(self):
        table = build_gt([[0, 0, 0], [50, 0, 0]], 5.0, mode=MULTI, frame_ids=[7, 8],
                         target_positions=[[1, 0, 0], [100, 0, 0]], target_ids=[30, 31])
        assert_that(table.loop_ids).is_equal_to({7: frozenset({30}), 8: frozenset()})

    def test_bad_arguments(self):
        with pytest.raises(FrameworkException):
            build_gt(np.zeros((2, 3)), 0.0)
        with pytest.raises(FrameworkException):
            build_gt(np.zeros((2, 3)), 1.0, mode=MULTI)


@pytest.mark.evaluation
@pytest.mark.usefixtures('setup_binning')
class TestScoring:

    def test_thresholds(self):
        t = thresholds_for(np.array([0.3, 0.1, 0.3, np.nan]))
        assert_that(t.tolist()).is_equal_to([0.0, 0.2, math.inf])

    def test_perfect_separation(self):
        gt = GtLoopTable({0: frozenset({10}), 1: frozenset({11}), 2: frozenset(), 3: frozenset()})
        results = [_match(0, 10, 0.1), _match(1, 11, 0.2), _match(2, 5, 0.8), _match(3, 6, 0.9)]
        report = score_queries(results, gt)
        assert_that(report.recall_at_1).is_equal_to(1.0)
        assert_that(report.auc).is_equal_to(1.0)
        assert_that(report.f1_max).is_equal_to(1.0)
        assert_that((report.tp, report.fp, report.tn, report.fn)).is_equal_to((2, 0, 2, 0))

    def test_curve_endpoints_and_cell_totals(self):
        gt = GtLoopTable({0: frozenset({10}), 1: frozenset({11}), 2: frozenset()})
        results = [_match(0, 10, 0.4), _match(1, 99, 0.1), NoCandidate(2)]
        report = score_queries(results, gt)
        first, last = report.pr_curve[0], report.pr_curve[-1]
        assert_that(first).is_equal_to((0.0, 1.0, 0.0))
        assert_that(last[0]).is_equal_to(math.inf)
        assert_that(report.tp + report.fp + report.tn + report.fn).is_equal_to(3)
        assert_that(report.recall_at_1).is_equal_to(0.5)

    def test_wrong_candidate_counts_as_false_positive_only(self):
        gt = GtLoopTable({0: frozenset({10})})
        report = score_queries([_match(0, 99, 0.1)], gt)
        assert_that(report.roc_curve[-1]).is_equal_to((math.inf, 1.0, 0.0))
        assert_that(report.f1_max).is_equal_to(0.0)

    def test_no_loops_raises(self):
        gt = GtLoopTable({0: frozenset(), 1: frozenset()})
        with pytest.raises(UndefinedMetricError):
            score_queries([_match(0, 5, 0.1), NoCandidate(1)], gt)

    def test_single_class_roc_is_nan(self, caplog):
        gt = GtLoopTable({0: frozenset({10}), 1: frozenset({11})})
        with caplog.at_level(logging.WARNING):
            report = score_queries([_match(0, 10, 0.1), _match(1, 11, 0.3)], gt)
        assert_that(math.isnan(report.auc)).is_true()
        assert_that(caplog.text).contains("Degenerate ROC")

    def test_auc_equals_rank_statistic(self):
        results, loops = [], {}
        for q in range(200):
            positive = bool(self.rng.random() < 0.4)
            loops[q] = frozenset({1000 + q}) if positive else frozenset()
            results.append(_match(q, 1000 + q if positive else 5000 + q, round(float(self.rng.random()), 2)))
        report = score_queries(results, GtLoopTable(loops))
        labels = np.array([bool(loops[r.query_id]) for r in results])
        ranks = rankdata([-r.distance for r in results])
        n_pos, n_neg = labels.sum(), (~labels).sum()
        oracle = (ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
        assert_that(report.auc).is_close_to(oracle, 1e-9)

    def test_recall_invariant_under_monotone_transform(self):
        gt = GtLoopTable({q: frozenset({100 + q}) if q % 2 else frozenset() for q in range(20)})
        results = [_match(q, 100 + q if q % 3 else 7, float(self.rng.random())) for q in range(20)]
        squashed = [_match(r.query_id, r.candidate_id, math.sqrt(r.distance)) for r in results]
        a, b = score_queries(results, gt), score_queries(squashed, gt)
        assert_that(a.recall_at_1).is_equal_to(b.recall_at_1)
        assert_that(a.f1_max).is_equal_to(b.f1_max)

    def test_matching_counts(self):
        gt = GtLoopTable({0: frozenset({10}), 1: frozenset({11}), 2: frozenset(), 3: frozenset({13})})
        results = [_match(0, 10, 0.1), _match(1, 11, 0.2), _match(2, 5, 0.3), _match(3, 13, 0.4)]
        threshold, tp, fp = matching_counts(results, gt)
        assert_that((tp, fp)).is_equal_to((2, 0))
        assert_that(threshold).is_close_to(0.25, 1e-12)

    def test_planted_revisits_give_perfect_recall(self):
        cfg = self.cfg
        lap = 15
        poses = figure_eight_trajectory(lap, laps=2)
        places = random_descriptors(self.rng, lap, cfg)
        db = DescriptorDatabase(cfg)
        for pose in poses:
            place = places[pose.frame_id % lap]
            db.add(SolidDescriptor(place.r_solid, place.a_solid, pose.frame_id), pose.translation)
        gt = build_gt(db.positions(), 1.0, lap // 2)
        results = search_all(db, [r.descriptor for r in db], lap // 2)
        assert_that(score_queries(results, gt).recall_at_1).is_equal_to(1.0)


@pytest.mark.evaluation
@pytest.mark.usefixtures('setup_binning')
class TestRotationAndTiming:

    @pytest.mark.parametrize('delta', YAW_DELTAS_DEG)
    def test_rotation_error_of_yaw_pairs(self, delta):
        base = float(self.rng.uniform(0, 360))
        assert_that(rotation_error(yaw_rotation(base), yaw_rotation(base + delta))).is_close_to(delta, 1e-9)

    @pytest.mark.parametrize('delta', [0.0, 30.0, 135.0, 180.0])
    def test_rotation_error_in_random_frame(self, delta):
        frame = random_rotation(self.rng)
        assert_that(rotation_error(frame, frame @ yaw_rotation(delta))).is_close_to(delta, 1e-9)

    def test_rotation_error_is_symmetric(self):
        a, b = yaw_rotation(10.0), yaw_rotation(-35.0)
        assert_that(rotation_error(a, b)).is_close_to(rotation_error(b, a), 1e-12)

    def test_rotation_error_rejects_non_rotation(self):
        with pytest.raises(RotationMatrixError):
            rotation_error(np.eye(3) * 1.1, np.eye(3))

    def test_relative_rotation_matches_heading_convention(self):
        r_c, r_q = yaw_rotation(20.0), yaw_rotation(62.0)
        assert_that(rotation_error(relative_rotation(r_q, r_c), yaw_rotation(42.0))).is_less_than(1e-9)

    def test_communication_time(self):
        assert_that(communication_time(448, 1000.0)).is_close_to(0.448, 1e-12)
        with pytest.raises(FrameworkException):
            communication_time(448, 0.0)

    def test_database_exchange_time(self):
        cfg = BinningConfig(n_r=56)
        db = DescriptorDatabase(cfg)
        for d in random_descriptors(self.rng, 10, cfg):
            db.add(d)
        assert_that(payload_bytes(cfg)).is_equal_to(MULTI_ROBOT_REFERENCE["payload_bytes_published"])
        assert_that(database_exchange_time(db, 4480.0)).is_close_to(1.0, 1e-12)

    def test_bench_pipeline(self):
        cfg = BinningConfig()
        scans = synthetic_scans(self.rng, MIN_BENCH_SCANS, cfg, n_points=3000)
        db = DescriptorDatabase(cfg)
        for d in random_descriptors(self.rng, 50, cfg):
            db.add(d)
        bench = bench_pipeline(scans, cfg, db)
        assert_that(bench.desc_hz).is_positive()
        assert_that(bench.search_hz).is_positive()
        assert_that(bench.combined_hz).is_less_than_or_equal_to(min(bench.desc_hz, bench.search_hz))

    @pytest.mark.slow
    def test_bruteforce_search_scales_linearly(self):
        cfg = BinningConfig()
        scans = synthetic_scans(self.rng, MIN_BENCH_SCANS, cfg, n_points=500)
        search_s = []
        for size in (5000, 10000):
            db = DescriptorDatabase(cfg)
            for d in random_descriptors(self.rng, size, cfg):
                db.add(d)
            # first run also stacks the search matrix
            best_hz = max(bench_pipeline(scans, cfg, db, backend="bf").search_hz for _ in range(3))
            search_s.append(1.0 / best_hz)
        assert_that(search_s[1] / search_s[0]).is_less_than_or_equal_to(2.5)

    def test_bench_needs_enough_scans(self):
        cfg = BinningConfig()
        with pytest.raises(FrameworkException):
            bench_pipeline(synthetic_scans(self.rng, 3, cfg, n_points=10), cfg, DescriptorDatabase(cfg))


@pytest.mark.evaluation
class TestReportFiles:

    def test_write_report(self, tmp_path):
        gt = GtLoopTable({0: frozenset({10}), 1: frozenset(), 2: frozenset({12})})
        results = [_match(0, 10, 0.1), _match(1, 4, 0.5), NoCandidate(2)]
        report = score_queries(results, gt)
        report_path = write_report(report, tmp_path, "n_r=40\n", results, gt)

        payload = json.loads(report_path.read_text())
        assert_that(payload).contains_key("recall_at_1", "auc", "f1_max", "provenance", "config")
        assert_that(payload["provenance"]).is_equal_to(provenance("n_r=40\n")).starts_with("solid-")
        assert_that(payload["mean_re_deg"]).is_none()

        header, rows = csv_reader(tmp_path / "matches.csv")
        assert_that(header).is_equal_to(("query_id", "candidate_id", "distance", "heading_deg", "is_tp"))
        assert_that(rows[0][4]).is_equal_to("1")
        assert_that(rows[2][1]).is_equal_to("-1")

        header, rows = csv_reader(tmp_path / "pr_curve.csv")
        assert_that(header).is_equal_to(("threshold", "precision", "recall"))
        assert_that(rows).is_length(len(report.pr_curve))
