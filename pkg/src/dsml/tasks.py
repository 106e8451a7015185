"""System and task definitions: dynamics, control laws, references, constraints.

A system is ``x' = known(x, u) + unknown(x, u) + Q @ noise`` with the unknown
component modelled by a GP. A task couples a control law (which may query the
GP conditioned on collected data), a list of constraint functions over a
finite horizon, and an initial state.

Control laws receive ``(state, controller_gp, t)`` where ``t`` is the index
of the state the applied input produces (the target step), so time-varying
references are hit at the step their constraint is evaluated. Constraint
functions are vectorized: ``h(aug_states (K, dx+du), times (K,)) -> (K, n_c)``
with satisfaction meaning ``h <= 0`` componentwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray


class ConfigurationError(ValueError):
    """A task/system definition is inconsistent or references an unknown preset."""


class DynamicsSingularityError(ArithmeticError):
    """The demo dynamics were evaluated at (or next to) a pole."""


@dataclass(frozen=True)
class ExplorationRegion:
    """Axis-aligned box of admissible measurement locations (augmented states)."""

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigurationError("region bounds must be equal-length vectors")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigurationError("region bounds must be finite")
        if not np.all(lo < hi):
            raise ConfigurationError(f"region must satisfy lower < upper, got {lo} vs {hi}")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def sample(self, rng: np.random.Generator, n: int) -> NDArray:
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return rng.uniform(lo, hi, size=(n, self.dim))

    def clip(self, points: NDArray) -> NDArray:
        return np.clip(points, np.asarray(self.lower), np.asarray(self.upper))

    def contains(self, points: NDArray) -> bool:
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return bool(np.all(points >= lo) and np.all(points <= hi))


@dataclass(frozen=True)
class SystemSpec:
    """Known/unknown split of the dynamics plus the noise scaling.

    ``known_dynamics`` maps an augmented state (dx+du,) to (dx,).
    ``true_unknown`` is ground truth for validation only; planning never reads
    it. ``noise_scale`` is the matrix Q multiplying standard-normal process
    noise, so the noise covariance is Q Q^T. ``gp_input_projection`` lists the
    augmented-state coordinates the unknown component depends on.
    """

    dx: int
    du: int
    known_dynamics: Callable[[NDArray], NDArray]
    noise_scale: NDArray
    true_unknown: Optional[Callable[[NDArray], NDArray]] = None
    gp_input_projection: Tuple[int, ...] = (0,)

    def __post_init__(self):
        Q = np.asarray(self.noise_scale, dtype=np.float64)
        if Q.shape != (self.dx, self.dx):
            raise ConfigurationError(f"noise_scale must be ({self.dx}, {self.dx}), got {Q.shape}")
        object.__setattr__(self, "noise_scale", Q)
        object.__setattr__(self, "gp_input_projection",
                           tuple(int(i) for i in self.gp_input_projection))
        if any(i >= self.dx + self.du for i in self.gp_input_projection):
            raise ConfigurationError("gp_input_projection exceeds augmented-state bounds")

    @property
    def d_aug(self) -> int:
        return self.dx + self.du


@dataclass(frozen=True)
class TaskSpec:
    """One control task: law, constraints, horizon, concrete initial state."""

    task_id: int
    control_law: Callable
    constraints: Tuple[Callable, ...]
    horizon: int
    initial_state: NDArray

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "initial_state",
                           np.asarray(self.initial_state, dtype=np.float64))
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {self.horizon}")
        if len(self.constraints) == 0:
            raise ConfigurationError("a task needs at least one constraint")
        if not np.all(np.isfinite(self.initial_state)):
            raise ConfigurationError("initial state must be finite")


# ---------------------------------------------------------------------------
# Known-dynamics components
# ---------------------------------------------------------------------------

class InputPassthrough:
    """known(x, u) = u; the entire state map is left to the unknown component."""

    def __init__(self, dx: int, du: int):
        if du != dx:
            raise ConfigurationError("input passthrough requires du == dx")
        self.dx = dx
        self.du = du

    def __call__(self, aug: NDArray) -> NDArray:
        return aug[self.dx:self.dx + self.du]


class AdditiveInput:
    """known(x, u) = x + u (single integrator with direct input)."""

    def __init__(self, dx: int, du: int):
        if du != dx:
            raise ConfigurationError("additive input requires du == dx")
        self.dx = dx

    def __call__(self, aug: NDArray) -> NDArray:
        return aug[:self.dx] + aug[self.dx:2 * self.dx]


# ---------------------------------------------------------------------------
# Reference trajectories
# ---------------------------------------------------------------------------

class SetpointReference:
    def __init__(self, point: Sequence[float]):
        self.point = np.asarray(point, dtype=np.float64)

    def __call__(self, t: int) -> NDArray:
        return self.point


class CircleReference:
    """(sin(2 pi t / period), cos(2 pi t / period)): unit circle, given period."""

    def __init__(self, period: float = 50.0):
        self.period = float(period)

    def __call__(self, t: int) -> NDArray:
        w = 2.0 * math.pi * t / self.period
        return np.array([math.sin(w), math.cos(w)])


class SweepReference:
    """(amp * sin(2 pi t / px), cos(2 pi t / py)): fast horizontal sweep."""

    def __init__(self, amplitude: float = 2.0, period_x: float = 25.0, period_y: float = 100.0):
        self.amplitude = float(amplitude)
        self.period_x = float(period_x)
        self.period_y = float(period_y)

    def __call__(self, t: int) -> NDArray:
        return np.array([
            self.amplitude * math.sin(2.0 * math.pi * t / self.period_x),
            math.cos(2.0 * math.pi * t / self.period_y),
        ])


def reference_trajectory(j: int, t: int) -> NDArray:
    """The three built-in demo references, indexed 1..3."""
    if j == 1:
        return np.zeros(2)
    if j == 2:
        return CircleReference(50.0)(t)
    if j == 3:
        return SweepReference(2.0, 25.0, 100.0)(t)
    raise ConfigurationError(f"unknown reference trajectory index {j}")


# ---------------------------------------------------------------------------
# Control laws
# ---------------------------------------------------------------------------

class ZeroInput:
    """u = 0 regardless of state and data."""

    def __init__(self, du: int):
        self.du = du

    def __call__(self, x: NDArray, controller_gp, t: int) -> NDArray:
        return np.zeros(self.du)


class TrackingController:
    """u = -posterior_mean(x) + reference(t).

    Cancels the learned estimate of the unknown component and injects the
    reference, so under an input-passthrough known component the closed loop
    tracks the reference up to model error and noise. Requires du == dx.
    """

    def __init__(self, reference: Callable[[int], NDArray]):
        self.reference = reference

    def __call__(self, x: NDArray, controller_gp, t: int) -> NDArray:
        return self.reference(t) - controller_gp.posterior_mean(x)


class MeanCancelingController:
    """u = -posterior_mean(x): regulate toward the origin of the known part."""

    def __call__(self, x: NDArray, controller_gp, t: int) -> NDArray:
        return -controller_gp.posterior_mean(x)


def feedback_linearizing_control(x: NDArray, controller_gp, t: int, j: int) -> NDArray:
    """Demo control law for task ``j``: cancel the GP mean, inject reference j."""
    return reference_trajectory(j, t) - controller_gp.posterior_mean(x)


# ---------------------------------------------------------------------------
# Constraints (vectorized over steps)
# ---------------------------------------------------------------------------

def tracking_envelope(t) -> NDArray:
    """Shrinking tracking tolerance: max(3 exp(-t/5), 0.1)."""
    return np.maximum(3.0 * np.exp(-np.asarray(t, dtype=np.float64) / 5.0), 0.1)


class TrackingEnvelopeConstraint:
    """h = ||x - reference(t)||_2 - envelope(t), one component."""

    def __init__(self, reference: Callable[[int], NDArray]):
        self.reference = reference

    def __call__(self, aug_states: NDArray, times: NDArray) -> NDArray:
        refs = np.array([self.reference(int(t)) for t in times])
        dx = refs.shape[1]
        err = aug_states[:, :dx] - refs
        h = np.sqrt(np.einsum("ij,ij->i", err, err)) - tracking_envelope(times)
        return h[:, None]


class CoordinateBoundConstraint:
    """h = |x_i| - bound, one component."""

    def __init__(self, index: int = 0, bound: float = 2.5):
        self.index = int(index)
        self.bound = float(bound)

    def __call__(self, aug_states: NDArray, times: NDArray) -> NDArray:
        return (np.abs(aug_states[:, self.index]) - self.bound)[:, None]


class ConstantConstraint:
    """h identically equal to a constant; useful for degenerate fixtures."""

    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, aug_states: NDArray, times: NDArray) -> NDArray:
        return np.full((aug_states.shape[0], 1), self.value)


def demo_constraints(j: int, aug_state: NDArray, t: int) -> NDArray:
    """Demo constraint for task j at a single augmented state."""
    if j in (1, 2):
        ref = reference_trajectory(j, t)
        return np.array([float(np.linalg.norm(aug_state[:2] - ref)) - float(tracking_envelope(t))])
    if j == 3:
        return np.array([abs(float(aug_state[0])) - 2.5])
    raise ConfigurationError(f"unknown demo task index {j}")


# ---------------------------------------------------------------------------
# Demo system: a planar map with strong nonlinearity in both coordinates
# ---------------------------------------------------------------------------

def demo_dynamics(x: NDArray) -> NDArray:
    """Nonlinear planar state map with a rational second component.

    Component 1: x1 + (cos(2 pi x1) - 1) * x2.
    Component 2: 1 / (1 + exp(-5 x1) - 1/2 + cos(pi x2)).

    The denominator of the second component vanishes along curves inside
    [-3, 3]^2, so this map has poles there; evaluation within 1e-9 of a zero
    denominator raises :class:`DynamicsSingularityError`. Regions where the
    denominator magnitude falls below 1e-3 are outside the supported domain
    (see README).
    """
    x = np.asarray(x, dtype=np.float64)
    x1, x2 = float(x[0]), float(x[1])
    first = x1 + (math.cos(2.0 * math.pi * x1) - 1.0) * x2
    denom = 1.0 + math.exp(-5.0 * x1) - 0.5 + math.cos(math.pi * x2)
    if abs(denom) < 1e-9:
        raise DynamicsSingularityError(
            f"demo dynamics denominator {denom:.3e} vanishes at x = ({x1}, {x2})"
        )
    return np.array([first, 1.0 / denom])


def demo_dynamics_smooth(x: NDArray) -> NDArray:
    """Bounded reading of the demo map: the rational part keeps only the
    logistic term, with the remaining terms additive.

    Component 1 is unchanged; component 2 is
    1 / (1 + exp(-5 x1)) - 1/2 + cos(pi x2), which is finite on all of R^2.
    Used by the runnable demo preset, whose ground-truth map must be finite on
    the exploration region (see README for the full rationale).
    """
    x = np.asarray(x, dtype=np.float64)
    x1, x2 = float(x[0]), float(x[1])
    first = x1 + (math.cos(2.0 * math.pi * x1) - 1.0) * x2
    second = 1.0 / (1.0 + math.exp(-5.0 * x1)) - 0.5 + math.cos(math.pi * x2)
    return np.array([first, second])


class ZeroMap:
    """State map identically zero (systems whose unknown part is absent)."""

    def __call__(self, x: NDArray) -> NDArray:
        return np.zeros(np.asarray(x).shape[0])


class _StateMapUnknown:
    """Adapt a state map f(x) -> (dx,) to the unknown-component signature."""

    def __init__(self, fn: Callable[[NDArray], NDArray], dx: int):
        self.fn = fn
        self.dx = dx

    def __call__(self, aug: NDArray) -> NDArray:
        return self.fn(aug[:self.dx])


def demo_system(smooth: bool = True, noise_scale: float = 0.01) -> SystemSpec:
    """The planar demo system: known part is the input channel, unknown part
    is the nonlinear state map, noise scale Q = noise_scale * I."""
    fn = demo_dynamics_smooth if smooth else demo_dynamics
    return SystemSpec(
        dx=2,
        du=2,
        known_dynamics=InputPassthrough(2, 2),
        noise_scale=noise_scale * np.eye(2),
        true_unknown=_StateMapUnknown(fn, 2),
        gp_input_projection=(0, 1),
    )


def demo_tasks(horizon: int, initial_states: Sequence[NDArray]) -> List[TaskSpec]:
    """The three demo tracking tasks with concrete initial states."""
    if len(initial_states) != 3:
        raise ConfigurationError("demo needs exactly three initial states")
    refs = [SetpointReference((0.0, 0.0)), CircleReference(50.0), SweepReference(2.0, 25.0, 100.0)]
    constraints = [
        (TrackingEnvelopeConstraint(refs[0]),),
        (TrackingEnvelopeConstraint(refs[1]),),
        (CoordinateBoundConstraint(0, 2.5),),
    ]
    return [
        TaskSpec(
            task_id=j + 1,
            control_law=TrackingController(refs[j]),
            constraints=constraints[j],
            horizon=horizon,
            initial_state=initial_states[j],
        )
        for j in range(3)
    ]


def sample_prior_data(system: SystemSpec, count: int, rng: np.random.Generator,
                      state_lower: Sequence[float] = (-3.0, -3.0),
                      state_upper: Sequence[float] = (3.0, 3.0)):
    """Simulated pre-collected measurements of the true system.

    States are drawn uniformly from the given box, inputs are zero, and the
    observed next state is known + unknown + noise. Returns (augmented points
    (n, dx+du), residual targets (n, dx)) where the residual subtracts the
    known component, i.e. exactly what the GP is trained on.
    """
    if system.true_unknown is None:
        raise ConfigurationError("sampling prior data requires ground-truth dynamics")
    lo = np.asarray(state_lower, dtype=np.float64)
    hi = np.asarray(state_upper, dtype=np.float64)
    points = np.zeros((count, system.d_aug))
    residuals = np.zeros((count, system.dx))
    for i in range(count):
        x = rng.uniform(lo, hi)
        aug = np.zeros(system.d_aug)
        aug[:system.dx] = x
        observed = (system.known_dynamics(aug) + system.true_unknown(aug)
                    + system.noise_scale @ rng.standard_normal(system.dx))
        points[i] = aug
        residuals[i] = observed - system.known_dynamics(aug)
    return points, residuals


# ---------------------------------------------------------------------------
# Initial-state policies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedStart:
    state: Tuple[float, ...]

    def resolve(self, rng: np.random.Generator) -> NDArray:
        return np.asarray(self.state, dtype=np.float64)


@dataclass(frozen=True)
class UniformStart:
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def resolve(self, rng: np.random.Generator) -> NDArray:
        return rng.uniform(np.asarray(self.lower), np.asarray(self.upper))
