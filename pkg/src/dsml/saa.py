"""Sample-average estimates of constraint satisfaction and its smooth surrogate.

Both estimators replay the same fixed scenario batch (common random numbers),
so for a given batch they are deterministic functions of the candidate
locations: moving the locations moves the estimate continuously except where
an indicator flips. Reductions run in sample order, making repeated
evaluation bit-stable regardless of worker count.

The surrogate replaces the 0/1 satisfaction indicator with a hinge penalty
``sum over (task, step, component) of max(0, h)``: it is zero exactly when
every sampled trajectory satisfies every constraint and grows with violation
depth, which gives the location optimizer a usable slope. A scenario whose
rollout diverged contributes a flat penalty instead of (undefined) hinges.
"""

from __future__ import annotations

import os
import pickle
from dataclasses import dataclass
from multiprocessing import get_context
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from .gp import MultiGP
from .rollout import RolloutResult, SampleBatch, generate_batch, build_index_map, rollout_one
from .tasks import SystemSpec, TaskSpec

DIVERGENCE_PENALTY = 1e3


@dataclass
class SAAEstimate:
    """Empirical probability that all tasks satisfy all constraints.

    ``violation_profiles[j, t-1]`` is the per-step worst-component hinge
    max(0, h) averaged over the scenarios in which step (j, t) was evaluated
    (diverged scenarios stop contributing at their break point).
    """

    value: float
    indicators: NDArray
    violation_profiles: NDArray
    diverged: NDArray

    @property
    def num_samples(self) -> int:
        return self.indicators.shape[0]


@dataclass
class SurrogateValue:
    value: float
    gradient: Optional[NDArray] = None


@dataclass
class _SampleOutcome:
    """Reduced per-scenario record (small enough to ship between processes)."""

    indicator: bool
    hinge_sum: float
    hinge_max: NDArray  # (L, H), NaN where unevaluated
    diverged: bool
    # per task: worst-step hinge and the augmented state where it occurred
    worst_hinge: NDArray = None
    worst_state: NDArray = None


def evaluate_sample(
    locations: NDArray,
    system: SystemSpec,
    tasks: Sequence[TaskSpec],
    prior_gp: MultiGP,
    zetas: NDArray,
) -> _SampleOutcome:
    """Roll one scenario and reduce it to indicator + hinge statistics."""
    result = rollout_one(locations, system, tasks, prior_gp, zetas)
    L = len(tasks)
    H = tasks[0].horizon
    hinge_max = np.full((L, H), np.nan)
    worst_hinge = np.zeros(L)
    worst_state = np.zeros((L, system.d_aug))
    hinge_sum = 0.0
    ok = True
    for j, task in enumerate(tasks):
        valid = result.valid_steps[j]
        last = min(valid - 1, H)  # constraint steps 1..last are evaluated
        if last >= 1:
            states = result.trajectories[j][1:last + 1]
            times = np.arange(1, last + 1)
            cs = task.constraints
            if len(cs) == 1:
                hs = np.asarray(cs[0](states, times), dtype=np.float64)
            else:
                hs = np.hstack([np.asarray(c(states, times), dtype=np.float64)
                                for c in cs])
            hinged = np.maximum(hs, 0.0)
            per_step = hinged.max(axis=1)
            hinge_max[j, :last] = per_step
            hinge_sum += float(hinged.sum())
            k = int(np.argmax(per_step))
            worst_hinge[j] = per_step[k]
            worst_state[j] = states[k]
            if per_step[k] > 0.0:
                ok = False
        if valid < H + 1:
            ok = False
    diverged = result.diverged is not None
    if diverged:
        hinge_sum += DIVERGENCE_PENALTY
    return _SampleOutcome(indicator=ok, hinge_sum=hinge_sum,
                          hinge_max=hinge_max, diverged=diverged,
                          worst_hinge=worst_hinge, worst_state=worst_state)


# ---------------------------------------------------------------------------
# Execution: serial by default, optional fork-based worker pool
# ---------------------------------------------------------------------------

def resolve_worker_count(workers: Optional[int] = None) -> int:
    """Requested workers, capped by the DSML_THREADS environment variable."""
    if workers is None:
        workers = os.cpu_count() or 1
    cap = os.environ.get("DSML_THREADS")
    if cap is not None:
        workers = min(workers, max(1, int(cap)))
    return max(1, workers)


_WORKER_PROBLEM = None
_WORKER_BATCHES: dict = {}


def _init_worker(payload: bytes):
    global _WORKER_PROBLEM
    _WORKER_PROBLEM = pickle.loads(payload)


def _worker_batch(seed: int, num_samples: int, total: int, dx: int) -> NDArray:
    key = (seed, num_samples, total, dx)
    draws = _WORKER_BATCHES.get(key)
    if draws is None:
        gen = np.random.Generator(np.random.Philox(seed))
        draws = gen.standard_normal((num_samples, total, 2 * dx))
        _WORKER_BATCHES.clear()  # one live batch per worker is enough
        _WORKER_BATCHES[key] = draws
    return draws

def _worker_eval(args):
    locations, seed, num_samples, total, dx, lo, hi = args
    system, tasks, prior_gp = _WORKER_PROBLEM
    draws = _worker_batch(seed, num_samples, total, dx)
    return [evaluate_sample(locations, system, tasks, prior_gp, draws[m])
            for m in range(lo, hi)]


class RolloutExecutor:
    """Evaluates a scenario batch for given locations, optionally in parallel.

    The problem definition (system, tasks, prior GP) is shipped to workers
    once at construction; per-call traffic is just the locations and batch
    coordinates, with workers regenerating their scenario noise from the seed.
    Results are reduced in sample order, so the output is identical for any
    worker count.
    """

    def __init__(self, system: SystemSpec, tasks: Sequence[TaskSpec],
                 prior_gp: MultiGP, workers: Optional[int] = None):
        self.system = system
        self.tasks = list(tasks)
        self.prior_gp = prior_gp
        self.workers = resolve_worker_count(workers)
        self._pool = None
        if self.workers > 1:
            ctx = get_context("fork")
            payload = pickle.dumps((system, self.tasks, prior_gp))
            self._pool = ctx.Pool(self.workers, initializer=_init_worker,
                                  initargs=(payload,))

    def run(self, locations: NDArray, batch: SampleBatch) -> List[_SampleOutcome]:
        M = batch.num_samples
        if self._pool is None:
            return [evaluate_sample(locations, self.system, self.tasks,
                                    self.prior_gp, batch.draws[m])
                    for m in range(M)]
        bounds = np.linspace(0, M, self.workers + 1).astype(int)
        jobs = [(locations, batch.seed, M, batch.total, batch.dx, int(lo), int(hi))
                for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        chunks = self._pool.map(_worker_eval, jobs)
        return [outcome for chunk in chunks for outcome in chunk]

    def close(self):
        if self._pool is not None:
            self._pool.close()
            self._pool.join()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _run_batch(locations, system, tasks, prior_gp, batch, executor):
    if executor is not None:
        return executor.run(np.asarray(locations, dtype=np.float64), batch)
    return [evaluate_sample(locations, system, tasks, prior_gp, batch.draws[m])
            for m in range(batch.num_samples)]


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def _estimate_from_outcomes(outcomes: List[_SampleOutcome], L: int, H: int) -> SAAEstimate:
    M = len(outcomes)
    indicators = np.array([o.indicator for o in outcomes], dtype=bool)
    diverged = np.array([o.diverged for o in outcomes], dtype=bool)
    stack = np.stack([o.hinge_max for o in outcomes])  # (M, L, H)
    evaluated = ~np.isnan(stack)
    counts = evaluated.sum(axis=0)
    sums = np.where(evaluated, stack, 0.0).sum(axis=0)
    profiles = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return SAAEstimate(
        value=float(np.count_nonzero(indicators)) / M,
        indicators=indicators,
        violation_profiles=profiles,
        diverged=diverged,
    )


def _surrogate_value(outcomes: List[_SampleOutcome]) -> float:
    return float(np.sum([o.hinge_sum for o in outcomes])) / len(outcomes)


def violation_hotspot(
    locations: NDArray,
    system: SystemSpec,
    tasks: Sequence[TaskSpec],
    prior_gp: MultiGP,
    batch: SampleBatch,
    executor: Optional[RolloutExecutor] = None,
) -> Optional[NDArray]:
    """Mean augmented state at the currently worst-violated constraint.

    Replays the batch at the given locations, finds the task with the largest
    average worst-step hinge, and averages that task's worst-violation states
    over the violating scenarios. Returns None when nothing violates. Used to
    seed a new measurement location where it is most needed.
    """
    outcomes = _run_batch(locations, system, tasks, prior_gp, batch, executor)
    L = len(tasks)
    worst = np.stack([o.worst_hinge for o in outcomes])   # (M, L)
    states = np.stack([o.worst_state for o in outcomes])  # (M, L, d)
    per_task = worst.mean(axis=0)
    j = int(np.argmax(per_task))
    if per_task[j] <= 0.0:
        return None
    mask = worst[:, j] > 0.0
    return states[mask, j].mean(axis=0)


def estimate_satisfaction(
    locations: NDArray,
    system: SystemSpec,
    tasks: Sequence[TaskSpec],
    prior_gp: MultiGP,
    batch: SampleBatch,
    executor: Optional[RolloutExecutor] = None,
) -> SAAEstimate:
    """Fraction of scenarios in which every task satisfies every constraint.

    Scenarios whose rollout failed (divergence, conditioning breakdown) count
    as unsatisfied; they are visible in ``diverged``.
    """
    outcomes = _run_batch(locations, system, tasks, prior_gp, batch, executor)
    return _estimate_from_outcomes(outcomes, len(tasks), tasks[0].horizon)


def active_coordinates(system: SystemSpec, prior_gp: MultiGP) -> NDArray:
    """Location coordinates that can influence the estimators.

    Coordinates outside the GP input projection are inert: the kernel ignores
    them and the known-dynamics contribution to a measurement cancels in the
    residual targets, so their exact finite-difference gradient is zero.
    """
    proj = set(prior_gp.params.input_projection)
    return np.array([c for c in range(system.d_aug) if c in proj], dtype=int)


def surrogate(
    locations: NDArray,
    system: SystemSpec,
    tasks: Sequence[TaskSpec],
    prior_gp: MultiGP,
    batch: SampleBatch,
    executor: Optional[RolloutExecutor] = None,
    compute_gradient: bool = False,
    fd_step: float = 1e-4,
    fd_coords: str = "projected",
) -> SurrogateValue:
    """Mean hinge penalty over the batch, optionally with its gradient.

    The gradient is computed by central finite differences on each location
    coordinate, re-using the same scenario batch. With ``fd_coords ==
    "projected"`` the provably inert coordinates are skipped (their entries
    are exactly zero); ``"all"`` differences every coordinate.
    """
    locations = np.asarray(locations, dtype=np.float64)
    outcomes = _run_batch(locations, system, tasks, prior_gp, batch, executor)
    value = _surrogate_value(outcomes)
    if not compute_gradient:
        return SurrogateValue(value=value)
    grad = surrogate_gradient(locations, system, tasks, prior_gp, batch,
                              executor=executor, fd_step=fd_step, fd_coords=fd_coords)
    return SurrogateValue(value=value, gradient=grad)


def surrogate_gradient(
    locations: NDArray,
    system: SystemSpec,
    tasks: Sequence[TaskSpec],
    prior_gp: MultiGP,
    batch: SampleBatch,
    executor: Optional[RolloutExecutor] = None,
    fd_step: float = 1e-4,
    fd_coords: str = "projected",
) -> NDArray:
    """Central finite-difference gradient of the surrogate, same batch."""
    locations = np.asarray(locations, dtype=np.float64)
    grad = np.zeros_like(locations)
    if not locations.size:
        return grad
    if fd_coords == "projected":
        coords = active_coordinates(system, prior_gp)
    elif fd_coords == "all":
        coords = np.arange(locations.shape[1])
    else:
        raise ValueError(f"fd_coords must be 'projected' or 'all', got {fd_coords!r}")
    for i in range(locations.shape[0]):
        for c in coords:
            plus = locations.copy()
            plus[i, c] += fd_step
            minus = locations.copy()
            minus[i, c] -= fd_step
            f_plus = _surrogate_value(_run_batch(plus, system, tasks, prior_gp,
                                                 batch, executor))
            f_minus = _surrogate_value(_run_batch(minus, system, tasks, prior_gp,
                                                  batch, executor))
            grad[i, c] = (f_plus - f_minus) / (2.0 * fd_step)
    return grad


def evaluate_locations(
    locations: NDArray,
    system: SystemSpec,
    tasks: Sequence[TaskSpec],
    prior_gp: MultiGP,
    batch: SampleBatch,
    executor: Optional[RolloutExecutor] = None,
) -> Tuple[SAAEstimate, SurrogateValue]:
    """Satisfaction estimate and surrogate value from a single batch pass."""
    outcomes = _run_batch(locations, system, tasks, prior_gp, batch, executor)
    est = _estimate_from_outcomes(outcomes, len(tasks), tasks[0].horizon)
    return est, SurrogateValue(value=_surrogate_value(outcomes))
