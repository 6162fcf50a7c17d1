"""
SOLiD Constants Module
======================

Centralized constants for descriptor generation, database files,
evaluation and the command-line front-end.

Categories:
    - Binning defaults: bin counts and range used when no profile overrides them
    - Database format: magic, version, flag bits
    - Numerical tolerances: rotation checks, degenerate cases
    - CLI: output file names and exit codes

Usage:
    from constants.solid_constants import DEFAULT_N_R, DB_MAGIC
"""

# ============== Binning Defaults ==============

DEFAULT_N_R = 40
"""Radial bin count (R-SOLiD length)."""

DEFAULT_N_A = 60
"""Azimuthal bin count (A-SOLiD length); one bin spans 6 degrees."""

DEFAULT_L_MAX = 80.0
"""Maximum observable horizontal range in meters for KITTI scans."""

DEFAULT_VOXEL = 0.5
"""Voxel edge in meters applied before counting."""

FULL_CIRCLE_DEG = 360.0

# ============== Database Format ==============

DB_MAGIC = b"SOLIDDB1"
"""Eight ASCII bytes opening every database file."""

DB_VERSION = 1

DB_FLAG_POSITIONS = 0x0001
"""Records carry a 3-vector position."""

DB_FLAG_CONSTANT_IEV = 0x0002
"""Descriptors were built with the constant-IEV variant."""

DB_HEADER_FORMAT = "<8sHHIIIdddQ"
"""magic, version, flags, n_r, n_a, n_e, l_max, f_up, f_down, record count."""

BYTES_PER_VALUE = 8
"""Descriptor entries are stored as float64."""

# ============== Tolerances ==============

ROTATION_EXACT_TOL = 1e-6
"""Pose rotations must be orthonormal within this after loading."""

ROTATION_WARN_TOL = 1e-3
"""Beyond this, loading re-orthonormalizes with a warning."""

ROTATION_FAIL_TOL = 1e-1
"""Beyond this, loading fails."""

# ============== Evaluation ==============

DEFAULT_EXCLUDE_RECENT = 100
"""Most recent frames barred from the single-session candidate pool."""

DEFAULT_GT_DIST_SINGLE = 10.0
"""Ground-truth loop radius in meters, single-session (KITTI)."""

DEFAULT_GT_DIST_MULTI = 5.0
"""Ground-truth loop radius in meters, multi-session / multi-robot."""

DEFAULT_SAMPLE_SPACING = 2.0
"""Pose sampling interval in meters for multi-session runs."""

MIN_BENCH_SCANS = 10
"""bench_pipeline refuses to average over fewer scans."""

# ============== CLI ==============

DB_FILE_NAME = "solid.db"
REPORT_FILE_NAME = "report.json"
PR_CURVE_FILE_NAME = "pr_curve.csv"
ROC_CURVE_FILE_NAME = "roc_curve.csv"
MATCHES_FILE_NAME = "matches.csv"
FOV_SWEEP_FILE_NAME = "fov_sweep.csv"
BENCH_FILE_NAME = "bench.json"
CONFIG_ECHO_FILE_NAME = "run.cfg"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA_ERROR = 2
EXIT_PROPERTY_FAILURE = 3
