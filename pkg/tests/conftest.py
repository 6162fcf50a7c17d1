"""
Pytest Configuration Module (conftest.py)
==========================================

Central configuration file for pytest test execution.
Provides fixtures, hooks, and configuration for the test suite.

Features:
    - Binning, database and synthetic-sequence fixtures attached to test classes
    - Sensor profile reset around configuration tests
    - Logging configuration with parallel execution support
    - pytest-html report customization
    - Test start/end logging with visual separators

Command Line Options:
    --kitti-root: KITTI odometry root (holds sequences/ and poses/); enables kitti tests
    --kitti-seq: Sequence number (default: 00)

Example:
    pytest tests/ -n auto
    pytest tests/ -m kitti --kitti-root /data/kitti/odometry
"""

import logging
import os
import shutil
from datetime import datetime
from pathlib import Path

import numpy as np
import pytest

import solid
from solid.descriptor import BinningConfig
from solid.retrieval import DescriptorDatabase
from solid.synthetic import box_world, figure_eight_trajectory, random_descriptors, random_positions, write_sequence
from utils.config_reader import ConfigReader
from utils.log_config import configure_logging as apply_logging_config

_logger = logging.getLogger(__name__)

SEQUENCE_FRAMES_PER_LAP = 12
"""Frames per lap of the synthetic figure-eight; the second lap revisits the first."""


def pytest_addoption(parser):
    """
    Register custom command-line options for pytest.

    Options:
        --kitti-root: KITTI odometry dataset root. Without it, tests marked
                      `kitti` are skipped.
        --kitti-seq: Sequence to evaluate (default '00').

    Example:
        pytest tests/ -m kitti --kitti-root /data/kitti --kitti-seq 00
    """
    parser.addoption("--kitti-root", action="store", default=None,
        help="KITTI odometry root with sequences/<seq>/velodyne and poses/<seq>.txt"
    )
    parser.addoption("--kitti-seq", action="store", default="00", type=str,
        help="KITTI sequence number (default: 00)"
    )


# ============== Domain Fixtures ==============

@pytest.fixture(scope='class')
def setup_binning(request):
    """
    Default KITTI binning plus a seeded generator.

    Provides:
        - request.cls.cfg: BinningConfig (40 x 60 x 64, 80 m, +2/-24.8 deg)
        - request.cls.rng: numpy Generator seeded per class
    """
    request.cls.cfg = BinningConfig()
    request.cls.rng = np.random.default_rng(20240101)


@pytest.fixture(scope='class')
def setup_database(request, setup_binning):
    """
    A 300-record database with positions, built from random descriptors.

    Depends on: setup_binning

    Provides:
        - request.cls.db: DescriptorDatabase (not yet indexed)
    """
    cfg = request.cls.cfg
    rng = request.cls.rng
    db = DescriptorDatabase(cfg)
    for desc, pos in zip(random_descriptors(rng, 300, cfg), random_positions(rng, 300)):
        db.add(desc, pos)
    request.cls.db = db
    _logger.info(f"Database fixture ready | Records: {len(db)}")


@pytest.fixture(scope='class')
def setup_synthetic_sequence(request, tmp_path_factory, setup_binning):
    """
    Two laps of a figure-eight through a box world, written in KITTI layout.

    Depends on: setup_binning

    Provides:
        - request.cls.sequence_root: Directory with velodyne/ and poses.txt
        - request.cls.scans_dir, request.cls.poses_file
        - request.cls.frames_per_lap
    """
    root = tmp_path_factory.mktemp("sequence")
    cfg = request.cls.cfg
    world = box_world(np.random.default_rng(3))
    poses = figure_eight_trajectory(SEQUENCE_FRAMES_PER_LAP, laps=2)
    scans_dir, poses_file = write_sequence(root, poses, world, cfg)
    request.cls.sequence_root = root
    request.cls.scans_dir = scans_dir
    request.cls.poses_file = poses_file
    request.cls.frames_per_lap = SEQUENCE_FRAMES_PER_LAP


@pytest.fixture(scope='class')
def kitti_sequence(request):
    """
    Paths of a real KITTI sequence; skips the class when --kitti-root is absent.

    Provides:
        - request.cls.kitti_scans, request.cls.kitti_poses, request.cls.kitti_calib
    """
    root = request.config.getoption("kitti_root")
    if not root:
        pytest.skip("--kitti-root not given")
    seq = request.config.getoption("kitti_seq")
    request.cls.kitti_scans = Path(root) / "sequences" / seq / "velodyne"
    request.cls.kitti_poses = Path(root) / "poses" / f"{seq}.txt"
    request.cls.kitti_calib = Path(root) / "sequences" / seq / "calib.txt"
    if not request.cls.kitti_scans.is_dir():
        pytest.skip(f"KITTI scans not found: {request.cls.kitti_scans}")


@pytest.fixture
def clean_profile():
    """Drop any cached sensor profile before and after the test."""
    saved = os.environ.pop("SOLID_PROFILE", None)
    ConfigReader.reset()
    yield
    ConfigReader.reset()
    os.environ.pop("SOLID_PROFILE", None)
    if saved is not None:
        os.environ["SOLID_PROFILE"] = saved


@pytest.fixture(autouse=True)
def log_test_start_and_end(request):
    """Log clear separators between tests with metadata."""
    test_name = request.node.name
    test_class = request.node.parent.name if request.node.parent else "Unknown"
    test_file = request.node.fspath.basename if hasattr(request.node, 'fspath') else "Unknown"

    separator = "=" * 80
    _logger.info("")
    _logger.info(separator)
    _logger.info(f"  TEST START: {test_name}")
    _logger.info(f"  Class: {test_class} | File: {test_file}")
    _logger.info(separator)

    yield

    outcome = "PASSED" if getattr(request.node, '_fail_text', None) is None else "FAILED"

    _logger.info(separator)
    _logger.info(f"  TEST END: {test_name} | Result: {outcome}")
    _logger.info(separator)
    _logger.info("")


@pytest.fixture(scope="session", autouse=True)
def configure_logging(request):
    """One log file per sequential run, or per xdist worker."""
    project_root = Path(request.config.rootpath).resolve()
    ts = datetime.now().strftime("%Y%m%d_%H%M%S")

    workerinput = getattr(request.config, "workerinput", None)  # present only on xdist workers
    numproc = int(getattr(request.config.option, "numprocesses", 0) or 0)  # >0 when -n is used

    if workerinput:
        workerid = workerinput.get("workerid", "gw?")
        filename = f"test_{workerid}_{ts}.log"
    elif numproc > 0:
        # controller: workers write the logs
        return
    else:
        filename = f"test_{ts}.log"

    apply_logging_config(project_root / "logs", filename)


# ------------- pytest-html configuration --------------------

def _is_controller(config):
    # In xdist, workers have 'workerinput'; controller doesn't.
    return getattr(config, "workerinput", None) is None


def pytest_configure(config):
    if not config.pluginmanager.hasplugin("html"):
        return
    if not _is_controller(config):
        return

    base = Path(__file__).parent.parent / "reports" / "report.html"
    ts = datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
    stamped = base.with_name(f"{base.stem}_{ts}{base.suffix}")
    stamped.parent.mkdir(parents=True, exist_ok=True)

    config.option.htmlpath = str(stamped)
    # copied to latest.html in pytest_unconfigure
    config._latest_html_target = base.with_name("latest.html")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()

    if rep.when not in ("setup", "call") or rep.outcome != "failed" or getattr(rep, "wasxfail", ""):
        return

    # Stash failure text for the END separator
    try:
        item._fail_text = str(rep.longrepr)
    except Exception:
        item._fail_text = "failed"


@pytest.hookimpl(trylast=True)
def pytest_unconfigure(config):
    if getattr(config, "workerinput", None) is not None:
        return

    html = getattr(config.option, "htmlpath", None)
    latest = getattr(config, "_latest_html_target", None)
    if html and latest and Path(html).exists():
        try:
            shutil.copyfile(html, latest)
            _logger.info(f"Copied final HTML to: {latest}")
        except Exception as e:
            _logger.warning(f"Failed to copy HTML to latest: {e}")


def pytest_html_report_title(report):
    report.title = f"SOLiD {solid.__version__} | Place Recognition Tests | Profile: {ConfigReader.profile()}"


def pytest_metadata(metadata, config):
    metadata["Sensor profile"] = ConfigReader.profile()
    root = config.getoption("kitti_root")
    metadata["KITTI sequence"] = f"{root} / {config.getoption('kitti_seq')}" if root else "not given, kitti tests skipped"
