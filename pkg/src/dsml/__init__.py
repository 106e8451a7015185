"""Measurement-set planning for multi-task learning-based control.

The package answers: at which (state, input) locations should data be
collected so that, once measured, several data-driven controllers satisfy
their task constraints with high probability? Uncertainty about the unknown
dynamics component is carried by a Gaussian-process model; candidate
measurement sets are scored by a sample-average approximation of the joint
constraint-satisfaction probability over consistently sampled closed-loop
trajectories, and grown one location at a time until the target probability
is cleared.
"""

from .gp import (
    ConditioningError,
    GPConsistencyError,
    InputShapeError,
    KernelParams,
    MultiGP,
    NumericInputError,
    condition,
    kernel_eval,
    posterior,
    sample_eval,
)
from .rollout import (
    IndexMap,
    RolloutResult,
    SampleBatch,
    build_index_map,
    generate_batch,
    rollout_one,
)
from .tasks import ExplorationRegion, SystemSpec, TaskSpec
from .saa import SAAEstimate, SurrogateValue, estimate_satisfaction, surrogate
from .planner import PlannerConfig, PlanResult, OptimizerSettings, optimize_locations, plan

__all__ = [
    "ConditioningError",
    "GPConsistencyError",
    "InputShapeError",
    "KernelParams",
    "MultiGP",
    "NumericInputError",
    "condition",
    "kernel_eval",
    "posterior",
    "sample_eval",
    "IndexMap",
    "RolloutResult",
    "SampleBatch",
    "build_index_map",
    "generate_batch",
    "rollout_one",
    "ExplorationRegion",
    "SystemSpec",
    "TaskSpec",
    "SAAEstimate",
    "SurrogateValue",
    "estimate_satisfaction",
    "surrogate",
    "PlannerConfig",
    "PlanResult",
    "OptimizerSettings",
    "optimize_locations",
    "plan",
]

__version__ = "0.1.0"
