"""
Self-Test Suite Tests
=====================

The seeded property suite behind `python -m solid selftest`.

Markers:
    - @pytest.mark.selftest
"""

import pytest
from assertpy import assert_that

from constants.solid_constants import EXIT_OK, EXIT_PROPERTY_FAILURE
from solid import selftest
from solid.cli import cmd_selftest, main
from solid.selftest import PropertyResult, format_summary, property_names, run_selftest
from utils.framework_exception import FrameworkException, PropertyFailure


@pytest.mark.selftest
class TestPropertySuite:

    def test_registered_properties(self):
        names = property_names()
        assert_that(len(names)).is_greater_than_or_equal_to(8)
        assert_that(names).contains("yaw-invariance", "circular-shift-law", "kd-equals-bf", "database-round-trip")
        assert_that(len(set(names))).is_equal_to(len(names))

    @pytest.mark.parametrize('seed', [0, 7])
    def test_every_property_passes(self, seed):
        results = run_selftest(seed)
        failed = [f"{r.name}: {r.detail}" for r in results if not r.passed]
        assert_that(failed).is_empty()

    def test_summary_is_deterministic(self):
        first = format_summary(run_selftest(11), 11)
        second = format_summary(run_selftest(11), 11)
        assert_that(first).is_equal_to(second)
        assert_that(first.splitlines()[-1]).is_equal_to(f"{len(property_names())}/{len(property_names())} properties passed (seed 11)")

    def test_summary_marks_failures(self):
        text = format_summary([PropertyResult("a", True, "ok"), PropertyResult("b", False, "broke")], 3)
        assert_that(text).contains("PASS  a: ok", "FAIL  b: broke").ends_with("1/2 properties passed (seed 3)")

    def test_cli_selftest(self, tmp_path):
        assert_that(cmd_selftest(0)).is_equal_to(EXIT_OK)
        assert_that(main(["selftest", "--seed", "2", "--out", str(tmp_path)])).is_equal_to(EXIT_OK)

    def test_failing_property_maps_to_exit_code(self, tmp_path, monkeypatch):
        def broken(rng):
            raise FrameworkException("forced")

        monkeypatch.setattr(selftest, "_PROPERTIES", [("forced-failure", broken)])
        with pytest.raises(PropertyFailure):
            cmd_selftest(0)
        assert_that(main(["selftest", "--out", str(tmp_path)])).is_equal_to(EXIT_PROPERTY_FAILURE)
