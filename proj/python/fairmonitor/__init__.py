"""Python access to the fairmonitor core."""

import json

from . import _core
from ._core import FairMonitorError, counts_table, describe, midranks, parse_verdict, pearson, spearman

__all__ = [
    "FairMonitorError",
    "build_batch",
    "build_report",
    "counts_table",
    "describe",
    "midranks",
    "parse_verdict",
    "pearson",
    "spearman",
    "validate_dataset",
    "validate_judge",
]


def validate_dataset(path):
    return json.loads(_core.validate_dataset(str(path)))


def validate_judge(verdicts, human_csv):
    """verdicts: iterable of (case_id, score)."""
    return json.loads(_core.validate_judge(list(verdicts), str(human_csv)))


def build_batch(theme, n, attribute="gender", seed=0):
    return json.loads(_core.build_batch(theme, n, attribute, seed))


def build_report(store, runs):
    """Report bundle as {relative path: file content}."""
    return _core.build_report(str(store), list(runs))
