"""Adaptive AnDE classifiers for drifting categorical streams, with a
controllable-drift synthetic generator and prequential experiment tooling."""

from __future__ import annotations

from driftlab.ande import AndeModel, ClassDistribution, batch_model
from driftlab.counts import CountStore, SubsetKey, TimeTravelError, WindowDisciplineError
from driftlab.driftgen import DriftConfig, GeneratorConfig, KdbNetwork, generate_stream
from driftlab.evaluation import GridSpec, prequential, run_grid
from driftlab.forgetting import ForgetPolicy
from driftlab.schema import Instance, Schema, SchemaError

__all__ = [
    "AndeModel", "ClassDistribution", "CountStore", "DriftConfig", "ForgetPolicy",
    "GeneratorConfig", "GridSpec", "Instance", "KdbNetwork", "Schema", "SchemaError",
    "SubsetKey", "TimeTravelError", "WindowDisciplineError", "batch_model",
    "generate_stream", "prequential", "run_grid",
]

__version__ = "0.1.0"
