"""Python bindings for the labelclean C++ core."""

from ._core import (
    ConfigError,
    Error,
    Model,
    Service,
    StateError,
    run_experiment,
    score_counterexamples,
)

__all__ = [
    "ConfigError",
    "Error",
    "Model",
    "Service",
    "StateError",
    "run_experiment",
    "score_counterexamples",
]
