"""Traffic state estimation with physics-embedded sparse variational Gaussian processes.

Configuration arguments accept a dict in the same layout as the command-line JSON config.
"""

import json

from . import _core
from ._core import (
    Field,
    Grid,
    Model,
    Observations,
    PegpError,
    Prediction,
    Truth,
    cka,
    joint_ratio,
    principal_angles,
    shares,
)

__version__ = _core.__version__


def _text(config):
    if config is None:
        return ""
    if isinstance(config, str):
        return config
    return json.dumps(config)


def simulate(config=None, seed=None):
    """Truth field and vehicle trajectories for the configured scenario."""
    return _core.simulate(_text(config), seed)


def sample(truth, config=None, penetration=None, seed=1):
    """Observations drawn from `truth` with the configured sampling mode."""
    return _core.sample(truth, _text(config), penetration, seed)


def fit(observations, config=None, seed=None):
    """Train a model with the `model` section of `config`."""
    return _core.fit(observations, _text(config), seed)


def reconstruct(method, observations, grid, config=None, seed=1):
    """Mean field from one of: asm, rotated_gp, pegp_lwr, pegp_arz, plain_gp."""
    return _core.reconstruct(method, observations, grid, _text(config), seed)


def evaluate(truth, estimate, speed_unit=1.0, density_unit=1.0):
    """MAE and RMSE over cells valid in both fields."""
    return _core.evaluate(truth, estimate, speed_unit, density_unit)


__all__ = [
    "Field",
    "Grid",
    "Model",
    "Observations",
    "PegpError",
    "Prediction",
    "Truth",
    "cka",
    "evaluate",
    "fit",
    "joint_ratio",
    "principal_angles",
    "reconstruct",
    "sample",
    "shares",
    "simulate",
]
