"""
Descriptor Database Storage
===========================

Binary persistence of DescriptorDatabase ("SOLIDDB1" files).

Layout (all little-endian):
    magic "SOLIDDB1" | u16 version=1 | u16 flags | u32 n_r | u32 n_a | u32 n_e
    | f64 l_max | f64 f_up | f64 f_down | u64 record count
    then per record: u64 frame_id | [f64 x3 position if flags bit0]
    | f64 x n_r R-SOLiD | f64 x n_a A-SOLiD

Flags: bit0 positions present, bit1 constant-IEV variant (bit1 extends the
base layout, which only defines bit0).
The voxel edge is a describe-time setting and is not stored; loaded configs
carry the default.

Example:
    >>> save_db(db, "out/solid.db")
    >>> same = load_db("out/solid.db")
    >>> cfg = BinningConfig(variant=Variant.CONSTANT_IEV)
    >>> struct.unpack_from("<H", encode_db(DescriptorDatabase(cfg)), 10)[0]  # flags
    2
"""

import logging
import struct
from pathlib import Path

import numpy as np

from constants.solid_constants import (
    DB_FLAG_CONSTANT_IEV,
    DB_FLAG_POSITIONS,
    DB_HEADER_FORMAT,
    DB_MAGIC,
    DB_VERSION,
)
from solid.descriptor import BinningConfig, SolidDescriptor, Variant
from solid.retrieval import DescriptorDatabase
from utils.framework_exception import BadMagicError, TruncatedDatabaseError, VersionMismatchError

_logger = logging.getLogger(__name__)

_HEADER = struct.Struct(DB_HEADER_FORMAT)


def _flags(db: DescriptorDatabase) -> int:
    flags = 0
    if db.has_positions:
        flags |= DB_FLAG_POSITIONS
    if db.config.variant is Variant.CONSTANT_IEV:
        flags |= DB_FLAG_CONSTANT_IEV
    return flags


def encode_db(db: DescriptorDatabase) -> bytes:
    """Serialize a database to bytes."""
    cfg = db.config
    flags = _flags(db)
    chunks = [_HEADER.pack(DB_MAGIC, DB_VERSION, flags, cfg.n_r, cfg.n_a, cfg.n_e,
                           float(cfg.l_max), float(cfg.f_up), float(cfg.f_down), len(db))]
    with_positions = bool(flags & DB_FLAG_POSITIONS)
    for record in db:
        chunks.append(struct.pack("<Q", record.frame_id))
        if with_positions:
            chunks.append(record.position.astype("<f8").tobytes())
        chunks.append(record.descriptor.r_solid.astype("<f8").tobytes())
        chunks.append(record.descriptor.a_solid.astype("<f8").tobytes())
    return b"".join(chunks)


def save_db(db: DescriptorDatabase, path) -> Path:
    """
    Write the database file.

    Returns:
        Path: The written file.
    """
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_db(db)
    file_path.write_bytes(payload)
    _logger.info(f"Database saved | File: {file_path} | Records: {len(db)} | Bytes: {len(payload)}")
    return file_path


def decode_db(data: bytes, source="<bytes>") -> DescriptorDatabase:
    """
    Parse database bytes.

    Raises:
        BadMagicError: Wrong leading bytes.
        VersionMismatchError: Version other than 1.
        TruncatedDatabaseError: File ends in the header or a record.
    """
    if len(data) < len(DB_MAGIC) or data[:len(DB_MAGIC)] != DB_MAGIC:
        raise BadMagicError(source, bytes(data[:len(DB_MAGIC)]))
    if len(data) < _HEADER.size:
        raise TruncatedDatabaseError(source, None)
    (_, version, flags, n_r, n_a, n_e, l_max, f_up, f_down, count) = _HEADER.unpack_from(data, 0)
    if version != DB_VERSION:
        raise VersionMismatchError(source, version, DB_VERSION)

    variant = Variant.CONSTANT_IEV if flags & DB_FLAG_CONSTANT_IEV else Variant.STANDARD
    cfg = BinningConfig(n_r=n_r, n_a=n_a, n_e=n_e, l_max=l_max, f_up=f_up, f_down=f_down, variant=variant)
    with_positions = bool(flags & DB_FLAG_POSITIONS)
    record_size = 8 + (24 if with_positions else 0) + 8 * (n_r + n_a)

    db = DescriptorDatabase(cfg)
    offset = _HEADER.size
    for index in range(count):
        if offset + record_size > len(data):
            _logger.error(f"Truncated database | Source: {source} | Record: {index}")
            raise TruncatedDatabaseError(source, index)
        (frame_id,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        position = None
        if with_positions:
            position = np.frombuffer(data, dtype="<f8", count=3, offset=offset).astype(np.float64)
            offset += 24
        r_solid = np.frombuffer(data, dtype="<f8", count=n_r, offset=offset).astype(np.float64)
        offset += 8 * n_r
        a_solid = np.frombuffer(data, dtype="<f8", count=n_a, offset=offset).astype(np.float64)
        offset += 8 * n_a
        db.add(SolidDescriptor(r_solid, a_solid, int(frame_id)), position)
    if offset != len(data):
        _logger.warning(f"Trailing bytes after last record | Source: {source} | Bytes: {len(data) - offset}")
    return db


def load_db(path) -> DescriptorDatabase:
    """Read a database file written by save_db."""
    file_path = Path(path)
    db = decode_db(file_path.read_bytes(), file_path)
    _logger.info(f"Database loaded | File: {file_path} | Records: {len(db)} | Positions: {db.has_positions}")
    return db
