"""Shared test fixtures: small systems with known closed-form behaviour."""

import numpy as np

from dsml.gp import KernelParams, MultiGP
from dsml.planner import OptimizerSettings, PlannerConfig
from dsml.tasks import (
    AdditiveInput,
    ConstantConstraint,
    CoordinateBoundConstraint,
    ExplorationRegion,
    MeanCancelingController,
    SystemSpec,
    TaskSpec,
    ZeroInput,
)


def calibration_fixture(bound=2.0, q=1.0):
    """Open-loop scalar random walk: x' = x + u + q*z'', u = 0, x0 = 0, H = 1.

    The unknown component is driven to zero (signal variance 1e-18), so the
    satisfaction probability of |x_1| <= bound is the Gaussian interval mass
    P(|Z| <= bound / q) exactly.
    """
    system = SystemSpec(
        dx=1,
        du=1,
        known_dynamics=AdditiveInput(1, 1),
        noise_scale=np.array([[q]]),
        true_unknown=None,
        gp_input_projection=(0,),
    )
    params = KernelParams(1e-18, (1.0,), 0.0, input_projection=(0,))
    prior = MultiGP.empty(params, dx=1)
    task = TaskSpec(
        task_id=1,
        control_law=ZeroInput(1),
        constraints=(CoordinateBoundConstraint(0, bound),),
        horizon=1,
        initial_state=np.array([0.0]),
    )
    return system, [task], prior


MEASURE_BOUND = 0.5
MEASURE_SF2 = 1.0
MEASURE_ELL = 0.5
MEASURE_Q = 0.1
MEASURE_NOISE = MEASURE_Q ** 2


def measurement_fixture():
    """Scalar measure-then-regulate problem with a closed-form optimum.

    x' = x + u + g(x) + q*z'' with g under a unit SE prior (lengthscale 0.5),
    u = -posterior_mean(x), x0 = 0, H = 1, constraint |x_1| <= 0.5. One
    measurement; satisfaction is maximized by measuring at the start state
    (s = 0), where the controller cancels most of the prior uncertainty.
    """
    system = SystemSpec(
        dx=1,
        du=1,
        known_dynamics=AdditiveInput(1, 1),
        noise_scale=np.array([[MEASURE_Q]]),
        true_unknown=None,
        gp_input_projection=(0,),
    )
    params = KernelParams(MEASURE_SF2, (MEASURE_ELL,), MEASURE_NOISE,
                          input_projection=(0,))
    prior = MultiGP.empty(params, dx=1)
    task = TaskSpec(
        task_id=1,
        control_law=MeanCancelingController(),
        constraints=(CoordinateBoundConstraint(0, MEASURE_BOUND),),
        horizon=1,
        initial_state=np.array([0.0]),
    )
    region = ExplorationRegion((-2.0, -2.0), (2.0, 2.0))
    return system, [task], prior, region


def constant_constraint_fixture(value):
    """Trivial scalar system whose single constraint is identically `value`."""
    system = SystemSpec(
        dx=1,
        du=1,
        known_dynamics=AdditiveInput(1, 1),
        noise_scale=np.array([[1.0]]),
        true_unknown=None,
        gp_input_projection=(0,),
    )
    params = KernelParams(1e-18, (1.0,), 0.0, input_projection=(0,))
    prior = MultiGP.empty(params, dx=1)
    task = TaskSpec(
        task_id=1,
        control_law=ZeroInput(1),
        constraints=(ConstantConstraint(value),),
        horizon=2,
        initial_state=np.array([0.0]),
    )
    return system, [task], prior


def small_planner_config(seed=0, **overrides):
    defaults = dict(
        delta=0.01,
        num_samples=20,
        max_locations=3,
        restarts=1,
        seed=seed,
        region=ExplorationRegion((-2.0, -2.0), (2.0, 2.0)),
        optimizer=OptimizerSettings(step_size=0.3, max_iters=5, tol=1e-6,
                                    patience=3, max_backtracks=8),
    )
    defaults.update(overrides)
    return PlannerConfig(**defaults)
