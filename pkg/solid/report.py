"""
Report Writer Module
====================

Writes the artifacts of an evaluation run into one output directory:

    report.json    scalar metrics, diagnostics, config echo, provenance
    pr_curve.csv   threshold, precision, recall
    roc_curve.csv  threshold, fpr, tpr
    matches.csv    query_id, candidate_id, distance, heading_deg, is_tp

is_tp is judged at the F1-max threshold. NaN metrics are written as JSON
null. Provenance is "solid-<version>+cfg.<first 12 hex of sha1(config echo)>".
"""

import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Dict, Sequence

import solid
from constants.solid_constants import (
    MATCHES_FILE_NAME,
    PR_CURVE_FILE_NAME,
    REPORT_FILE_NAME,
    ROC_CURVE_FILE_NAME,
)
from solid.evaluation import EvalReport, GtLoopTable
from solid.retrieval import Match, SearchResult
from utils.csv_util import csv_writer

_logger = logging.getLogger(__name__)


def provenance(config_echo: str) -> str:
    digest = hashlib.sha1(config_echo.encode("utf-8")).hexdigest()[:12]
    return f"solid-{solid.__version__}+cfg.{digest}"


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def write_json(path, payload: Dict) -> Path:
    """Dump a dict as indented JSON with non-finite floats as null."""
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, "w", encoding="utf-8") as f:
        json.dump(_json_safe(payload), f, indent=2, sort_keys=True, allow_nan=False)
    _logger.info(f"JSON written | File: {file_path}")
    return file_path


def write_report(report: EvalReport, out_dir, config_echo: str,
                 results: Sequence[SearchResult], gt: GtLoopTable) -> Path:
    """
    Write report.json and the three CSV files.

    Returns:
        Path: The report.json file.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    csv_writer(out / PR_CURVE_FILE_NAME, ("threshold", "precision", "recall"), report.pr_curve)
    csv_writer(out / ROC_CURVE_FILE_NAME, ("threshold", "fpr", "tpr"), report.roc_curve)

    rows = []
    for result in results:
        if isinstance(result, Match):
            is_tp = result.distance < report.f1_threshold and gt.is_correct(result.query_id, result.candidate_id)
            rows.append((result.query_id, result.candidate_id, float(result.distance),
                         float(result.heading_deg), is_tp))
        else:
            rows.append((result.query_id, -1, math.nan, math.nan, False))
    csv_writer(out / MATCHES_FILE_NAME, ("query_id", "candidate_id", "distance", "heading_deg", "is_tp"), rows)

    payload = dict(report.scalars())
    payload["diagnostics"] = list(report.diagnostics)
    payload["config"] = config_echo
    payload["provenance"] = provenance(config_echo)
    report_path = write_json(out / REPORT_FILE_NAME, payload)
    _logger.info(f"Report written | Directory: {out} | Provenance: {payload['provenance']}")
    return report_path
