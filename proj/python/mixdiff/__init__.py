import json as _json

from ._core import (
    DISCLOSURE_THRESHOLD,
    MixdiffError,
    disclosure_risk,
    kendall_tau,
    ks_statistic,
    ks_test,
    linear_trend,
    log_cluster_from_assignment,
    min_euclidean_distance,
    one_step_reconstruct,
    q_sample,
    schedule,
    schema_width,
)
from . import _core

COMMANDS = ("toygen", "train", "sample", "evaluate", "privacy", "utility")


def run(command, config, seed=None, out=None, plots=False, verbosity=0):
    """Run one pipeline command and return its summary as a dict."""
    return _json.loads(_core.run_command(command, str(config), seed, None if out is None else str(out), plots, verbosity))


def load_schema(path):
    return _json.loads(_core.load_schema_json(str(path)))


__all__ = [
    "COMMANDS",
    "DISCLOSURE_THRESHOLD",
    "MixdiffError",
    "disclosure_risk",
    "kendall_tau",
    "ks_statistic",
    "ks_test",
    "linear_trend",
    "load_schema",
    "log_cluster_from_assignment",
    "min_euclidean_distance",
    "one_step_reconstruct",
    "q_sample",
    "run",
    "schedule",
    "schema_width",
]
