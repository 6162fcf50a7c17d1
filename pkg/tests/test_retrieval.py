"""
Retrieval Tests
===============

Cosine distance, circular shift, heading estimation, the descriptor
database and both search backends.

Fixtures Used:
    - setup_binning: default BinningConfig and a seeded generator
    - setup_database: 300 random records with positions

Markers:
    - @pytest.mark.retrieval
"""

import numpy as np
import pytest
from assertpy import assert_that

from solid.descriptor import BinningConfig, SolidDescriptor
from solid.retrieval import (
    DescriptorDatabase,
    Match,
    NoCandidate,
    cosine_distance,
    cosine_distance_checked,
    estimate_heading,
    search,
    search_all,
    search_bruteforce,
    search_kdtree,
    shift,
)
from solid.synthetic import random_descriptors
from utils.framework_exception import DescriptorMismatchError, FrameworkException


def _desc(r, a=None, frame_id=0):
    r = np.asarray(r, dtype=float)
    a = np.ones(3) if a is None else np.asarray(a, dtype=float)
    return SolidDescriptor(r, a, frame_id)


@pytest.mark.retrieval
@pytest.mark.usefixtures('setup_binning')
class TestDistanceAndHeading:

    def test_cosine_distance_examples(self):
        assert_that(cosine_distance([1, 0], [1, 0])).is_equal_to(0.0)
        assert_that(cosine_distance([1, 0], [0, 1])).is_close_to(1.0, 1e-15)
        assert_that(cosine_distance([1, 2, 3], [3, 2, 1])).is_close_to(1.0 - 10.0 / 14.0, 1e-15)

    def test_zero_vector_is_degenerate(self):
        assert_that(cosine_distance_checked([0, 0], [1, 2])).is_equal_to((1.0, True))

    def test_scale_invariance_and_symmetry(self):
        a, b = self.rng.random(40), self.rng.random(40)
        d = cosine_distance(a, b)
        assert_that(cosine_distance(3.5 * a, 0.01 * b)).is_close_to(d, 1e-12)
        assert_that(cosine_distance(b, a)).is_close_to(d, 1e-15)
        assert_that(d).is_between(0.0, 2.0)

    def test_length_mismatch(self):
        with pytest.raises(DescriptorMismatchError):
            cosine_distance([1, 2], [1, 2, 3])

    def test_shift_convention(self):
        assert_that(shift([1, 2, 3, 4], 1).tolist()).is_equal_to([2, 3, 4, 1])
        assert_that(shift([1, 2, 3, 4], 0).tolist()).is_equal_to([1, 2, 3, 4])

    def test_heading_recovers_known_shift(self):
        cand = self.rng.random(60)
        query = shift(cand, 17)
        assert_that(estimate_heading(query, cand)).is_equal_to((17, 102.0))

    def test_heading_ties_pick_smallest_shift(self):
        assert_that(estimate_heading(np.ones(60), np.ones(60))).is_equal_to((0, 0.0))

    def test_heading_minimizes_residual(self):
        q, c = self.rng.random(60), self.rng.random(60)
        n_star, _ = estimate_heading(q, c)
        residuals = [np.linalg.norm(q - shift(c, n)) for n in range(60)]
        assert_that(residuals[n_star]).is_less_than_or_equal_to(min(residuals) + 1e-12)


@pytest.mark.retrieval
@pytest.mark.usefixtures('setup_binning')
class TestDatabase:

    def test_ids_must_increase(self):
        db = DescriptorDatabase(self.cfg)
        db.add(random_descriptors(self.rng, 1, self.cfg, first_id=5)[0])
        with pytest.raises(DescriptorMismatchError):
            db.add(random_descriptors(self.rng, 1, self.cfg, first_id=5)[0])

    def test_wrong_length_rejected(self):
        db = DescriptorDatabase(self.cfg)
        with pytest.raises(DescriptorMismatchError):
            db.add(_desc(np.ones(10)))

    def test_positions_all_or_none(self):
        db = DescriptorDatabase(self.cfg)
        d0, d1 = random_descriptors(self.rng, 2, self.cfg)
        db.add(d0, (0, 0, 0))
        with pytest.raises(DescriptorMismatchError):
            db.add(d1)

    def test_frozen_after_index(self):
        db = DescriptorDatabase(self.cfg)
        d0, d1 = random_descriptors(self.rng, 2, self.cfg)
        db.add(d0)
        db.build_index()
        assert_that(db.frozen).is_true()
        with pytest.raises(FrameworkException):
            db.add(d1)

    def test_pool_size(self):
        db = DescriptorDatabase(self.cfg)
        for d in random_descriptors(self.rng, 10, self.cfg):
            db.add(d)
        assert_that(db.pool_size(9, 5)).is_equal_to(5)
        assert_that(db.pool_size(3, 5)).is_zero()
        assert_that(db.pool_size(3, None)).is_equal_to(10)

    def test_exclusion_monotone(self):
        db = DescriptorDatabase(self.cfg)
        for d in random_descriptors(self.rng, 50, self.cfg):
            db.add(d)
        sizes = [db.pool_size(40, n) for n in range(0, 45)]
        assert_that(all(a >= b for a, b in zip(sizes, sizes[1:]))).is_true()


@pytest.mark.retrieval
@pytest.mark.usefixtures('setup_database')
class TestSearch:

    def test_self_match_in_multi_session(self):
        record = self.db.records[123]
        result = search_bruteforce(self.db, record.descriptor, exclude_recent=None)
        assert_that(result).is_instance_of(Match)
        assert_that(result.candidate_id).is_equal_to(record.frame_id)
        assert_that(result.distance).is_less_than(1e-12)
        assert_that(result.heading_shift).is_equal_to(0)

    def test_exclusion_window_respected(self):
        query = self.db.records[200].descriptor
        result = search_bruteforce(self.db, query, exclude_recent=100)
        assert_that(result.candidate_id).is_less_than_or_equal_to(100)

    def test_empty_pool(self):
        query = self.db.records[10].descriptor
        assert_that(search_bruteforce(self.db, query, exclude_recent=100)).is_equal_to(NoCandidate(10))

    def test_kd_requires_index(self):
        db = DescriptorDatabase(self.cfg)
        db.add(random_descriptors(self.rng, 1, self.cfg)[0])
        with pytest.raises(FrameworkException):
            search_kdtree(db, db.records[0].descriptor)

    def test_kd_matches_bruteforce(self):
        db = DescriptorDatabase(self.cfg)
        for d in random_descriptors(self.rng, 400, self.cfg):
            db.add(d)
        db.build_index()
        for i, q in enumerate(random_descriptors(self.rng, 60, self.cfg)):
            q = q.with_frame_id(int(self.rng.integers(0, 500)))
            window = None if i % 3 == 0 else 80
            bf, kd = search_bruteforce(db, q, window), search_kdtree(db, q, window)
            if isinstance(bf, NoCandidate):
                assert_that(kd).is_instance_of(NoCandidate)
            else:
                assert_that(kd.candidate_id).is_equal_to(bf.candidate_id)
                assert_that(kd.distance).is_close_to(bf.distance, 1e-12)

    def test_kd_zero_norm_query(self):
        db = DescriptorDatabase(self.cfg)
        db.add(random_descriptors(self.rng, 1, self.cfg)[0])
        db.build_index()
        zero = SolidDescriptor(np.zeros(40), np.zeros(60), 99)
        assert_that(search_kdtree(db, zero).reason).is_equal_to("zero-norm query")

    def test_zero_norm_candidate_is_degenerate_in_bruteforce(self):
        cfg = BinningConfig(n_r=2, n_a=3, n_e=2)
        db = DescriptorDatabase(cfg)
        db.add(_desc([0.0, 0.0], frame_id=0))
        result = search_bruteforce(db, _desc([1.0, 1.0], frame_id=5), None)
        assert_that(result.distance).is_equal_to(1.0)
        assert_that(result.degenerate).is_true()

    def test_ties_pick_smallest_frame_id(self):
        cfg = BinningConfig(n_r=2, n_a=3, n_e=2)
        db = DescriptorDatabase(cfg)
        for fid in (2, 4, 6):
            db.add(_desc([1.0, 2.0], frame_id=fid))
        result = search_bruteforce(db, _desc([2.0, 4.0], frame_id=50), None)
        assert_that(result.candidate_id).is_equal_to(2)

    def test_search_all_builds_index_for_kd(self):
        db = DescriptorDatabase(self.cfg)
        for d in random_descriptors(self.rng, 20, self.cfg):
            db.add(d)
        results = search_all(db, [r.descriptor for r in db.records], None, "kd")
        assert_that([r.candidate_id for r in results]).is_equal_to(list(range(20)))

    def test_unknown_backend(self):
        with pytest.raises(FrameworkException):
            search(self.db, self.db.records[0].descriptor, None, "annoy")
