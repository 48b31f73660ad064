"""Tagged-particle diffusion in one-dimensional interacting Brownian systems.

Simulation of labeled particle systems (free, smooth pair potentials, hard
rods, Dyson's log gas), mean-squared-displacement estimators and variational
self-diffusion bounds from the environment seen by the tagged particle.
"""
from .configspace import (
    Configuration,
    EnvironmentState,
    LabeledState,
    from_environment,
    label_ordered,
    shift,
    to_environment,
)
from .errors import ConfigError, NumericalError, SubdiffError
from .models import PotentialSpec, SamplerSpec, pair_drift

__version__ = "0.1.0"

__all__ = [
    "Configuration",
    "ConfigError",
    "EnvironmentState",
    "LabeledState",
    "NumericalError",
    "PotentialSpec",
    "SamplerSpec",
    "SubdiffError",
    "from_environment",
    "label_ordered",
    "pair_drift",
    "shift",
    "to_environment",
]
