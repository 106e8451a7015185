"""Consistent closed-loop trajectory sampling under a candidate measurement set.

One rollout plays out a single joint scenario: hypothetical measurement
outcomes are drawn at the candidate locations, a controller GP is conditioned
on them (plus any pre-existing data) and frozen, and then every task's closed
loop is simulated against one shared pathwise sample of the unknown dynamics.
The sampler GP keeps growing across measurements and all tasks' trajectory
points, so every dynamics evaluation in the scenario is consistent with a
single sampled function; the controller GP stays fixed at the measurement
set, which is exactly the information the control laws would have after
collecting the data.

Index bookkeeping: scenario entry ``n`` is measurement ``n`` for ``n < N``,
and trajectory step ``(j, t)`` with ``j = (n - N) // (H + 1)`` and
``t = (n - N) % (H + 1)`` otherwise. Each entry consumes one 2*dx block of
standard normals: the first half drives the function draw, the second half
the process noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from .gp import ConditioningError, GPConsistencyError, MultiGP
from .tasks import ConfigurationError, SystemSpec, TaskSpec

DIVERGENCE_NORM = 1e6


@dataclass(frozen=True)
class IndexMap:
    """Layout of one scenario: N measurements then L trajectories of H+1 steps."""

    num_measurements: int
    num_tasks: int
    horizon: int

    @property
    def total(self) -> int:
        return self.num_measurements + self.num_tasks * (self.horizon + 1)

    def entry(self, n: int):
        """("measurement", d) with 1-based d, or ("trajectory", j, t) with
        1-based task j and step t in 0..H."""
        if not 0 <= n < self.total:
            raise IndexError(f"entry {n} out of range [0, {self.total})")
        N = self.num_measurements
        if n < N:
            return ("measurement", n + 1)
        j, t = divmod(n - N, self.horizon + 1)
        return ("trajectory", j + 1, t)


def build_index_map(num_measurements: int, num_tasks: int, horizon: int) -> IndexMap:
    if num_tasks < 1:
        raise ConfigurationError(f"need at least one task, got {num_tasks}")
    if horizon < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
    if num_measurements < 0:
        raise ConfigurationError(f"measurement count must be >= 0, got {num_measurements}")
    return IndexMap(num_measurements, num_tasks, horizon)


@dataclass(frozen=True)
class SampleBatch:
    """Fixed scenario noise: (M, total, 2*dx) standard normals.

    Fully determined by (seed, M, total, dx); regenerating with the same
    arguments is bit-identical (Philox counter-based generator).
    """

    seed: int
    dx: int
    draws: NDArray

    @property
    def num_samples(self) -> int:
        return self.draws.shape[0]

    @property
    def total(self) -> int:
        return self.draws.shape[1]


def generate_batch(seed: int, num_samples: int, index_map: IndexMap, dx: int) -> SampleBatch:
    if num_samples < 1:
        raise ConfigurationError(f"need at least one sample, got {num_samples}")
    gen = np.random.Generator(np.random.Philox(seed))
    draws = gen.standard_normal((num_samples, index_map.total, 2 * dx))
    return SampleBatch(seed=int(seed), dx=dx, draws=draws)


@dataclass
class RolloutResult:
    """Everything one scenario produced.

    ``trajectories[j]`` holds H+1 augmented states (state rows 0..H with the
    inputs applied at each step). On divergence, rows from the recorded break
    point on are unset; ``valid_steps[j]`` counts the trustworthy rows.
    """

    measurement_points: NDArray
    measurement_values: NDArray
    measurement_residuals: NDArray
    trajectories: List[NDArray]
    valid_steps: List[int]
    controller_gp: MultiGP
    diverged: Optional[Tuple[int, int]] = None  # 0-based (task, step) of the break


def rollout_one(
    locations: NDArray,
    system: SystemSpec,
    tasks: Sequence[TaskSpec],
    prior_gp: MultiGP,
    zetas: NDArray,
) -> RolloutResult:
    """Simulate one joint scenario. Pure in all arguments.

    ``locations``: (N, dx+du) candidate measurement locations (N may be 0).
    ``zetas``: (N + L*(H+1), 2*dx) standard normals for this scenario.
    """
    dx, du = system.dx, system.du
    d_aug = dx + du
    locations = np.asarray(locations, dtype=np.float64).reshape(-1, d_aug)
    N = locations.shape[0]
    L = len(tasks)
    if L == 0:
        raise ConfigurationError("need at least one task")
    H = tasks[0].horizon
    if any(t.horizon != H for t in tasks):
        raise ConfigurationError("all tasks must share one horizon")
    total = N + L * (H + 1)
    if zetas.shape != (total, 2 * dx):
        raise ConfigurationError(
            f"zeta block shape {zetas.shape} does not match ({total}, {2 * dx})"
        )

    Q = system.noise_scale
    known = system.known_dynamics
    noise_var = prior_gp.params.noise_variance

    # Phase 1: draw hypothetical measurement outcomes, freeze the controller.
    sampler = prior_gp.with_capacity(total + 2)
    values = np.zeros((N, dx))
    residuals = np.zeros((N, dx))
    diverged: Optional[Tuple[int, int]] = None
    controller = prior_gp.with_capacity(N + 2) if N else prior_gp
    try:
        for i in range(N):
            loc = locations[i]
            z = zetas[i]
            g_val, sampler = sampler.sample_eval(loc, z[:dx])
            w = Q @ z[dx:]
            residuals[i] = g_val + w
            values[i] = known(loc) + residuals[i]
        for i in range(N):
            controller = controller.condition(locations[i], residuals[i],
                                              noise_variance=noise_var)
    except (ConditioningError, GPConsistencyError):
        diverged = (-1, -1)

    trajectories = [np.zeros((H + 1, d_aug)) for _ in range(L)]
    valid = [0] * L
    if diverged is not None:
        return RolloutResult(locations, values, residuals, trajectories, valid,
                             controller, diverged)

    # Phase 2: roll each task against the shared function draw.
    guard = DIVERGENCE_NORM ** 2
    n = N
    for j, task in enumerate(tasks):
        law = task.control_law
        traj = trajectories[j]
        x = task.initial_state
        for t in range(H + 1):
            u = law(x, controller, t + 1)
            uu = float(u @ u)
            if uu != uu or uu == np.inf:  # NaN or overflow in the control law
                diverged = (j, t)
                break
            aug = traj[t]
            aug[:dx] = x
            aug[dx:] = u
            z = zetas[n]
            n += 1
            valid[j] = t + 1
            try:
                g_val, sampler = sampler.sample_eval(aug, z[:dx])
            except (ConditioningError, GPConsistencyError):
                diverged = (j, t)
                break
            x_next = known(aug) + g_val + Q @ z[dx:]
            nx = float(x_next @ x_next)
            if not nx <= guard:  # catches NaN, inf, and norm blow-ups alike
                if t + 1 <= H:
                    diverged = (j, t + 1)
                    break
            x = x_next
        if diverged is not None:
            break

    return RolloutResult(locations, values, residuals, trajectories, valid,
                         controller, diverged)
