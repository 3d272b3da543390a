"""Python entry points for the weak-to-strong backdoor transfer lab."""

from ._core import (
    Error,
    config_snapshot,
    environment_fingerprint,
    evaluate_arms,
    insert_trigger,
    plugin_mutual_information,
    run,
    stage_seeds,
)

__all__ = [
    "Error",
    "config_snapshot",
    "environment_fingerprint",
    "evaluate_arms",
    "insert_trigger",
    "plugin_mutual_information",
    "run",
    "stage_seeds",
]
