"""Python access to the nashdiff core (oracle, guidance, experiments)."""

import json as _json

from . import _nashdiff
from ._nashdiff import (
    ConfigError,
    DegenerateInput,
    InfeasibleInstance,
    NumericError,
    ShapeError,
    ValidationError,
    __version__,
    checkpoint_format,
    config_keys,
    ddim_timesteps,
    frontier_distance,
    generate_dataset,
    guide_grad,
    guide_loss,
    nash_product,
    project_feasible,
    project_to_frontier,
    solve_nbs,
    theory_suite,
    wilcoxon,
)


def _dump(config):
    if config is None:
        return ""
    if isinstance(config, str):
        return config
    return _json.dumps(config)


def resolve_config(config=None):
    """Return the fully resolved config as a dict. `config` overlays the defaults."""
    return _json.loads(_nashdiff.resolve_config(_dump(config)))


def run_experiment(config=None):
    """Run one experiment and return its metrics, samples and instance ids.

    Nothing is written to disk unless config["output"]["dir"] is set.
    """
    return _nashdiff.run_experiment(_dump(config))


__all__ = [
    "ConfigError",
    "DegenerateInput",
    "InfeasibleInstance",
    "NumericError",
    "ShapeError",
    "ValidationError",
    "checkpoint_format",
    "config_keys",
    "ddim_timesteps",
    "frontier_distance",
    "generate_dataset",
    "guide_grad",
    "guide_loss",
    "nash_product",
    "project_feasible",
    "project_to_frontier",
    "resolve_config",
    "run_experiment",
    "solve_nbs",
    "theory_suite",
    "wilcoxon",
]
