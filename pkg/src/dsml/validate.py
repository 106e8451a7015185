"""Post-hoc validation: collect real data at planned locations, simulate truth.

Planning only ever sees the GP model; validation closes the loop against the
ground-truth dynamics. Measurements are taken at the planned locations (true
dynamics plus process noise), the controller GP is conditioned on prior plus
collected data exactly as the control laws expect, and the true closed loop
is simulated repeatedly to estimate how often the task constraints actually
hold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from .gp import MultiGP
from .rollout import DIVERGENCE_NORM
from .tasks import ConfigurationError, SystemSpec, TaskSpec


@dataclass
class ValidationReport:
    """Constraint-violation statistics over repeated true-system runs.

    ``step_mean[j, t-1]`` / ``step_std[j, t-1]`` summarize the worst-component
    hinge max(0, h) at step t for task j across runs; ``task_violation_rate``
    is the fraction of runs in which task j violated at least once; the
    overall satisfaction rate counts runs in which every task stayed clean.
    """

    runs: int
    task_violation_rate: List[float]
    task_max_violation: List[float]
    step_violation_counts: NDArray
    step_mean: NDArray
    step_std: NDArray
    overall_satisfaction_rate: float
    diverged_runs: int

    @property
    def overall_violation_rate(self) -> float:
        return 1.0 - self.overall_satisfaction_rate

    def to_dict(self) -> dict:
        return {
            "runs": int(self.runs),
            "task_violation_rate": [float(v) for v in self.task_violation_rate],
            "task_max_violation": [float(v) for v in self.task_max_violation],
            "step_violation_counts": np.asarray(self.step_violation_counts,
                                                dtype=int).tolist(),
            "step_mean": np.asarray(self.step_mean).tolist(),
            "step_std": np.asarray(self.step_std).tolist(),
            "overall_satisfaction_rate": float(self.overall_satisfaction_rate),
            "overall_violation_rate": float(self.overall_violation_rate),
            "diverged_runs": int(self.diverged_runs),
        }


def collect_true_measurements(
    system: SystemSpec, locations: NDArray, rng: np.random.Generator
) -> Tuple[NDArray, NDArray]:
    """Observe the true system at the planned locations.

    Returns the locations and the residual targets (observed next state minus
    the known component), i.e. noisy evaluations of the unknown component.
    """
    if system.true_unknown is None:
        raise ConfigurationError("validation requires ground-truth dynamics")
    locations = np.asarray(locations, dtype=np.float64).reshape(-1, system.d_aug)
    residuals = np.zeros((locations.shape[0], system.dx))
    for i, loc in enumerate(locations):
        observed = (system.known_dynamics(loc) + system.true_unknown(loc)
                    + system.noise_scale @ rng.standard_normal(system.dx))
        residuals[i] = observed - system.known_dynamics(loc)
    return locations, residuals


def _simulate_task(system, task, controller_gp, rng):
    """One true-system closed-loop run; returns per-step hinges (NaN past a
    divergence) and whether the run diverged."""
    dx, H = system.dx, task.horizon
    law = task.control_law
    known = system.known_dynamics
    truth = system.true_unknown
    Q = system.noise_scale
    guard = DIVERGENCE_NORM ** 2
    states = np.zeros((H + 1, system.d_aug))
    x = task.initial_state
    steps = 0
    diverged = False
    for t in range(H + 1):
        u = law(x, controller_gp, t + 1)
        uu = float(u @ u)
        if uu != uu or uu == np.inf:
            diverged = True
            break
        states[t, :dx] = x
        states[t, dx:] = u
        steps = t + 1
        if t == H:
            break
        x = known(states[t]) + truth(states[t]) + Q @ rng.standard_normal(dx)
        nx = float(x @ x)
        if not nx <= guard:
            diverged = True
            break
    hinges = np.full(H, np.nan)
    last = min(steps - 1, H)
    if last >= 1:
        times = np.arange(1, last + 1)
        rows = states[1:last + 1]
        hs = np.hstack([np.asarray(c(rows, times), dtype=np.float64)
                        for c in task.constraints])
        hinges[:last] = np.maximum(hs, 0.0).max(axis=1)
    return hinges, diverged


def run_validation(
    system: SystemSpec,
    tasks: Sequence[TaskSpec],
    controller_gp: MultiGP,
    runs: int,
    rng: np.random.Generator,
) -> ValidationReport:
    """Simulate every task ``runs`` times against the true dynamics."""
    if system.true_unknown is None:
        raise ConfigurationError("validation requires ground-truth dynamics")
    L = len(tasks)
    H = tasks[0].horizon
    hinge_stack = np.full((runs, L, H), np.nan)
    task_violated = np.zeros((runs, L), dtype=bool)
    run_diverged = np.zeros(runs, dtype=bool)
    for r in range(runs):
        for j, task in enumerate(tasks):
            hinges, diverged = _simulate_task(system, task, controller_gp, rng)
            hinge_stack[r, j] = hinges
            task_violated[r, j] = bool(np.any(hinges > 0)) or diverged
            run_diverged[r] |= diverged
    evaluated = ~np.isnan(hinge_stack)
    counts = evaluated.sum(axis=0)
    filled = np.where(evaluated, hinge_stack, 0.0)
    mean = np.divide(filled.sum(axis=0), counts,
                     out=np.zeros((L, H)), where=counts > 0)
    centered = np.where(evaluated, hinge_stack - mean, 0.0)
    var = np.divide((centered ** 2).sum(axis=0), counts,
                    out=np.zeros((L, H)), where=counts > 0)
    std = np.sqrt(var)
    with np.errstate(invalid="ignore"):
        counts = (np.where(evaluated, hinge_stack, 0.0) > 0.0).sum(axis=0)
    return ValidationReport(
        runs=runs,
        task_violation_rate=[float(task_violated[:, j].mean()) for j in range(L)],
        task_max_violation=[float(np.nanmax(hinge_stack[:, j]))
                            if np.any(evaluated[:, j]) else float("inf")
                            for j in range(L)],
        step_violation_counts=counts,
        step_mean=mean,
        step_std=std,
        overall_satisfaction_rate=float((~task_violated.any(axis=1)).mean()),
        diverged_runs=int(run_diverged.sum()),
    )
