"""
Retrieval Module
================

Descriptor database, nearest-place search and 1-DoF heading estimation.

Features:
    - Cosine distance between R-SOLiD vectors
    - Brute-force search over the admissible candidate pool
    - Exact kd-tree search on unit-normalized R-SOLiD (scipy cKDTree);
      Euclidean argmin on the unit sphere equals cosine argmin
    - Heading from the best circular shift of A-SOLiD

Candidate pool:
    exclude_recent=N (single session): records with frame_id <= query - N.
    exclude_recent=None (multi session): the whole target database.

Concurrency:
    A database is built by one writer; build_index() freezes it, after which
    any number of threads may query it.

Example:
    >>> db = DescriptorDatabase(cfg)
    >>> for desc, pos in described:
    ...     db.add(desc, pos)
    >>> db.build_index()
    >>> match = search_kdtree(db, query, exclude_recent=100)
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from constants.solid_constants import FULL_CIRCLE_DEG
from solid.descriptor import BinningConfig, SolidDescriptor
from utils.framework_exception import DescriptorMismatchError, FrameworkException

_logger = logging.getLogger(__name__)


# ================== Domain Types ==================

@dataclass(frozen=True)
class Match:
    """
    Top-1 retrieval result.

    Attributes:
        query_id: Frame id of the query.
        candidate_id: Frame id of the retrieved record.
        distance: Cosine distance in [0, 2] on the raw R-SOLiD vectors.
        heading_shift: n* in [0, n_a).
        heading_deg: n* * 360 / n_a; yaw to apply to the candidate frame to align it with the query.
        degenerate: True when a zero-norm vector forced distance 1.0.
    """

    query_id: int
    candidate_id: int
    distance: float
    heading_shift: int
    heading_deg: float
    degenerate: bool = False


@dataclass(frozen=True)
class NoCandidate:
    """Search outcome when the admissible pool is empty (or the query is unusable)."""

    query_id: int
    reason: str = "empty candidate pool"


SearchResult = Union[Match, NoCandidate]


@dataclass(frozen=True, eq=False)
class DatabaseRecord:
    frame_id: int
    position: Optional[np.ndarray]
    descriptor: SolidDescriptor


# ================== Distances & Heading ==================

def _check_lengths(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DescriptorMismatchError(f"Vector lengths differ | {a.shape[0]} vs {b.shape[0]}")


def cosine_distance_checked(a, b) -> Tuple[float, bool]:
    """
    Cosine distance plus a flag that is True when either vector has zero norm.

    Returns:
        (distance, degenerate): distance is 1.0 for degenerate input, otherwise
        1 - a.b / (|a| |b|) clamped into [0, 2].

    Raises:
        DescriptorMismatchError: If the lengths differ.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    _check_lengths(a, b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        _logger.debug("Cosine distance on a zero-norm vector | Returning 1.0")
        return 1.0, True
    d = 1.0 - float(np.dot(a, b)) / (na * nb)
    return min(max(d, 0.0), 2.0), False


def cosine_distance(a, b) -> float:
    """
    1 - a.b / (|a| |b|); 1.0 if either norm is zero.

    Example:
        >>> cosine_distance([1, 2, 3], [3, 2, 1])
        0.2857142857142857
    """
    return cosine_distance_checked(a, b)[0]


def shift(v, n: int) -> np.ndarray:
    """Circular shift with shift(v, n)[j] = v[(j + n) mod len(v)]."""
    return np.roll(np.asarray(v), -int(n))


def estimate_heading(query_a, cand_a) -> Tuple[int, float]:
    """
    Best alignment of the candidate A-SOLiD to the query's.

    n* = argmin_n |query_a - shift(cand_a, n)|, smallest n on ties.

    Returns:
        (n*, heading_deg) with heading_deg = n* * 360 / n_a.

    Raises:
        DescriptorMismatchError: If the lengths differ.
    """
    q = np.asarray(query_a, dtype=np.float64).reshape(-1)
    c = np.asarray(cand_a, dtype=np.float64).reshape(-1)
    _check_lengths(q, c)
    n_a = q.shape[0]
    idx = (np.arange(n_a)[:, None] + np.arange(n_a)[None, :]) % n_a
    residuals = np.linalg.norm(q[None, :] - c[idx], axis=1)
    n_star = int(np.argmin(residuals))
    return n_star, n_star * FULL_CIRCLE_DEG / n_a


# ================== Database ==================

class DescriptorDatabase:
    """
    Ordered frame records sharing one BinningConfig.

    Records must arrive in strictly increasing frame_id order. Positions
    are either present on every record or on none. build_index() creates the
    kd-tree over unit-normalized R-SOLiD of the nonzero records and freezes
    the database.
    """

    def __init__(self, config: BinningConfig):
        self.config = config
        self.records: List[DatabaseRecord] = []
        self.index: Optional[cKDTree] = None
        self._frozen = False
        self._index_rows: Optional[np.ndarray] = None
        self._r_matrix: Optional[np.ndarray] = None
        self._norms: Optional[np.ndarray] = None
        self._frame_ids: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def has_positions(self) -> bool:
        return bool(self.records) and self.records[0].position is not None

    def add(self, descriptor: SolidDescriptor, position=None) -> DatabaseRecord:
        """
        Append one record.

        Raises:
            FrameworkException: If the index is already built.
            DescriptorMismatchError: Wrong lengths, non-increasing frame_id or
                mixed presence of positions.
        """
        if self.frozen:
            raise FrameworkException("Database is frozen after build_index(); create a new one to add records")
        if not descriptor.matches(self.config):
            raise DescriptorMismatchError(
                f"Descriptor {descriptor.frame_id} has lengths "
                f"{descriptor.r_solid.shape[0]}/{descriptor.a_solid.shape[0]}, "
                f"config expects {self.config.n_r}/{self.config.n_a}"
            )
        if self.records and descriptor.frame_id <= self.records[-1].frame_id:
            raise DescriptorMismatchError(
                f"Frame ids must increase | Last: {self.records[-1].frame_id} | New: {descriptor.frame_id}"
            )
        if position is not None:
            position = np.asarray(position, dtype=np.float64).reshape(3)
        if self.records and (position is None) != (self.records[0].position is None):
            raise DescriptorMismatchError("Either every record carries a position or none does")
        record = DatabaseRecord(descriptor.frame_id, position, descriptor)
        self.records.append(record)
        self._r_matrix = None
        return record

    # ---------- cached arrays ----------

    @property
    def frame_ids(self) -> np.ndarray:
        if self._frame_ids is None or self._frame_ids.shape[0] != len(self.records):
            self._frame_ids = np.array([r.frame_id for r in self.records], dtype=np.int64)
        return self._frame_ids

    def _matrices(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._r_matrix is None:
            if self.records:
                self._r_matrix = np.vstack([r.descriptor.r_solid for r in self.records])
            else:
                self._r_matrix = np.zeros((0, self.config.n_r))
            self._norms = np.linalg.norm(self._r_matrix, axis=1)
        return self._r_matrix, self._norms

    def positions(self) -> np.ndarray:
        """(N, 3) positions; MissingPositionsError handling is the caller's job."""
        if not self.has_positions:
            return np.zeros((0, 3))
        return np.vstack([r.position for r in self.records])

    def pool_size(self, query_id: int, exclude_recent: Optional[int]) -> int:
        """Number of leading records admissible for this query."""
        if exclude_recent is None:
            return len(self.records)
        return int(np.searchsorted(self.frame_ids, query_id - exclude_recent, side="right"))

    def build_index(self) -> cKDTree:
        """Build the kd-tree over unit-normalized nonzero R-SOLiD and freeze the database."""
        r_matrix, norms = self._matrices()
        rows = np.flatnonzero(norms > 0.0)
        unit = r_matrix[rows] / norms[rows, None] if rows.size else np.zeros((0, self.config.n_r))
        self._index_rows = rows
        self.index = cKDTree(unit) if rows.size else None
        self._frozen = True
        _logger.info(f"KD-tree built | Records: {len(self.records)} | Indexed: {rows.size}")
        return self.index

    def __eq__(self, other) -> bool:
        if not isinstance(other, DescriptorDatabase):
            return NotImplemented
        if self.config != other.config or len(self) != len(other):
            return False
        for a, b in zip(self.records, other.records):
            if a.frame_id != b.frame_id:
                return False
            if (a.position is None) != (b.position is None):
                return False
            if a.position is not None and not np.array_equal(a.position, b.position):
                return False
            if not (np.array_equal(a.descriptor.r_solid, b.descriptor.r_solid)
                    and np.array_equal(a.descriptor.a_solid, b.descriptor.a_solid)):
                return False
        return True

    __hash__ = None


# ================== Search ==================

def _finish(db: DescriptorDatabase, query: SolidDescriptor, row: int,
            distance: float, degenerate: bool) -> Match:
    record = db.records[row]
    n_star, heading = estimate_heading(query.a_solid, record.descriptor.a_solid)
    return Match(query.frame_id, record.frame_id, distance, n_star, heading, degenerate)


def search_bruteforce(db: DescriptorDatabase, query: SolidDescriptor,
                      exclude_recent: Optional[int] = None) -> SearchResult:
    """
    Argmin cosine distance over the admissible pool, smallest frame_id on ties.

    Zero-norm vectors compare at distance 1.0 and flag the match degenerate.
    """
    if query.r_solid.shape[0] != db.config.n_r:
        raise DescriptorMismatchError(f"Query length {query.r_solid.shape[0]} != n_r {db.config.n_r}")
    pool = db.pool_size(query.frame_id, exclude_recent)
    if pool == 0:
        return NoCandidate(query.frame_id)
    r_matrix, norms = db._matrices()
    q = query.r_solid
    q_norm = np.linalg.norm(q)
    cand, cand_norms = r_matrix[:pool], norms[:pool]
    if q_norm == 0.0:
        distances = np.ones(pool)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            distances = 1.0 - (cand @ q) / (cand_norms * q_norm)
        distances = np.where(cand_norms == 0.0, 1.0, np.clip(distances, 0.0, 2.0))
    row = int(np.argmin(distances))
    degenerate = bool(q_norm == 0.0 or cand_norms[row] == 0.0)
    return _finish(db, query, row, float(distances[row]), degenerate)


def search_kdtree(db: DescriptorDatabase, query: SolidDescriptor,
                  exclude_recent: Optional[int] = None) -> SearchResult:
    """
    Exact nearest neighbour on unit-normalized R-SOLiD restricted to the pool.

    Queries k neighbours with k doubling until one is admissible, so the
    answer equals the brute-force one whenever that minimum is unique. The
    reported distance is recomputed as cosine distance on the raw vectors.

    Raises:
        FrameworkException: If build_index() has not been called.
    """
    if not db.frozen:
        raise FrameworkException("search_kdtree requires db.build_index() first")
    q_norm = np.linalg.norm(query.r_solid)
    if q_norm == 0.0:
        _logger.debug(f"Zero-norm query | Frame: {query.frame_id}")
        return NoCandidate(query.frame_id, "zero-norm query")
    pool = db.pool_size(query.frame_id, exclude_recent)
    rows = db._index_rows
    n_indexed = rows.size
    admissible = int(np.searchsorted(rows, pool))
    if admissible == 0:
        return NoCandidate(query.frame_id)
    unit = query.r_solid / q_norm

    best_row = None
    if admissible == n_indexed:
        _, i = db.index.query(unit, k=1)
        best_row = int(rows[int(i)])
    else:
        k = 8
        while best_row is None:
            k = min(k, n_indexed)
            if 2 * k > n_indexed:
                # scan the admissible rows directly
                r_matrix, norms = db._matrices()
                cand = r_matrix[rows[:admissible]] / norms[rows[:admissible], None]
                d2 = np.sum((cand - unit) ** 2, axis=1)
                best_row = int(rows[int(np.argmin(d2))])
                break
            _, idx = db.index.query(unit, k=k)
            hits = rows[np.asarray(idx)]
            ok = np.flatnonzero(hits < pool)
            if ok.size:
                best_row = int(hits[ok[0]])
            k *= 2

    distance, degenerate = cosine_distance_checked(query.r_solid, db.records[best_row].descriptor.r_solid)
    return _finish(db, query, best_row, distance, degenerate)


def search(db: DescriptorDatabase, query: SolidDescriptor,
           exclude_recent: Optional[int] = None, backend: str = "bf") -> SearchResult:
    """Dispatch to search_bruteforce ('bf') or search_kdtree ('kd')."""
    if backend == "bf":
        return search_bruteforce(db, query, exclude_recent)
    if backend == "kd":
        return search_kdtree(db, query, exclude_recent)
    raise FrameworkException(f"Unknown search backend '{backend}' | Expected: bf, kd")


def search_all(db: DescriptorDatabase, queries: Sequence[SolidDescriptor],
               exclude_recent: Optional[int] = None, backend: str = "bf") -> List[SearchResult]:
    """search() for every query, in order."""
    if backend == "kd" and not db.frozen:
        db.build_index()
    return [search(db, q, exclude_recent, backend) for q in queries]
