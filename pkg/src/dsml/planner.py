"""Outer loop: grow the measurement set until the satisfaction target clears.

Starting from an empty candidate set, each round adds one location slot,
draws a fresh common-random-number scenario batch, and optimizes all location
coordinates by multi-start projected gradient descent on the hinge surrogate.
The round's best candidate (highest satisfaction estimate, ties broken by
lower surrogate, then by start order) becomes the incumbent; the loop stops
as soon as the estimate strictly exceeds ``1 - delta`` or the size cap is
reached. Because every round re-samples its scenarios, the reported estimate
is not monotone in the set size on a single run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from .gp import MultiGP
from .rollout import build_index_map, generate_batch
from .saa import (
    RolloutExecutor,
    SAAEstimate,
    estimate_satisfaction,
    evaluate_locations,
    surrogate,
    surrogate_gradient,
    violation_hotspot,
)
from .seeds import derive_seed, make_rng
from .tasks import ConfigurationError, ExplorationRegion, SystemSpec, TaskSpec


class PlannerError(RuntimeError):
    """Every optimization start failed to produce a usable candidate."""


@dataclass(frozen=True)
class OptimizerSettings:
    """Projected-gradient-descent knobs for the per-round location search."""

    step_size: float = 0.25
    max_iters: int = 200
    tol: float = 1e-6
    patience: int = 10
    max_backtracks: int = 20
    fd_step: float = 1e-4

    def __post_init__(self):
        if self.step_size <= 0 or self.max_iters < 1 or self.max_backtracks < 1:
            raise ConfigurationError(f"invalid optimizer settings: {self}")


@dataclass(frozen=True)
class PlannerConfig:
    """Outer-loop settings.

    With ``warm_start`` enabled, each round's first descent start is the
    previous round's best locations plus one fresh uniform draw instead of a
    fully uniform initialization; the incumbent structure survives across
    rounds, which typically converges in far fewer iterations. Remaining
    restarts stay uniform. Off by default (fully uniform multi-start).
    """

    delta: float
    num_samples: int
    max_locations: int
    restarts: int
    seed: int
    region: ExplorationRegion
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    warm_start: bool = False

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ConfigurationError(f"delta must lie in (0, 1), got {self.delta}")
        if self.num_samples < 1:
            raise ConfigurationError(f"num_samples must be >= 1, got {self.num_samples}")
        if self.max_locations < 1:
            raise ConfigurationError(f"max_locations must be >= 1, got {self.max_locations}")
        if self.restarts < 1:
            raise ConfigurationError(f"restarts must be >= 1, got {self.restarts}")


@dataclass
class PlanResult:
    """Outcome of a full planning run.

    ``satisfaction_history[k] == (N, best estimate at size N)`` for N = 0 up
    to the final size; ``batch_seeds`` lets any entry be re-evaluated against
    the exact scenario batch that produced it.
    """

    locations: NDArray
    num_locations: int
    satisfaction_history: List[Tuple[int, float]]
    batch_seeds: List[int]
    optimizer_traces: List[List[dict]]
    terminated_by: str  # "satisfied" | "cap"
    delta: float
    num_samples: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "locations": np.asarray(self.locations).tolist(),
            "num_locations": int(self.num_locations),
            "satisfaction_history": [[int(n), float(c)] for n, c in self.satisfaction_history],
            "batch_seeds": [int(s) for s in self.batch_seeds],
            "optimizer_traces": self.optimizer_traces,
            "terminated_by": self.terminated_by,
            "delta": float(self.delta),
            "num_samples": int(self.num_samples),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlanResult":
        return cls(
            locations=np.asarray(d["locations"], dtype=np.float64),
            num_locations=int(d["num_locations"]),
            satisfaction_history=[(int(n), float(c)) for n, c in d["satisfaction_history"]],
            batch_seeds=[int(s) for s in d["batch_seeds"]],
            optimizer_traces=d["optimizer_traces"],
            terminated_by=str(d["terminated_by"]),
            delta=float(d["delta"]),
            num_samples=int(d["num_samples"]),
            seed=int(d["seed"]),
        )


def _pgd(
    x0: NDArray,
    system: SystemSpec,
    tasks: Sequence[TaskSpec],
    prior_gp: MultiGP,
    batch,
    region: ExplorationRegion,
    settings: OptimizerSettings,
    executor,
) -> Tuple[NDArray, float, List[float]]:
    """Projected gradient descent on the surrogate from one start point."""

    def value(locs: NDArray) -> float:
        return surrogate(locs, system, tasks, prior_gp, batch, executor=executor).value

    cur = region.clip(x0)
    f_cur = value(cur)
    history = [f_cur]
    for _ in range(settings.max_iters):
        if f_cur <= 0.0:
            break
        grad = surrogate_gradient(cur, system, tasks, prior_gp, batch,
                                  executor=executor, fd_step=settings.fd_step)
        gmax = float(np.abs(grad).max()) if grad.size else 0.0
        if gmax == 0.0:
            break
        # step_size is a trust distance along the sup-normalized gradient:
        # hinge kinks make raw gradient magnitudes vary over orders of
        # magnitude, so a raw-gradient step is either rejected or microscopic
        direction = grad / gmax
        step = settings.step_size
        accepted = False
        for _ in range(settings.max_backtracks):
            cand = region.clip(cur - step * direction)
            f_cand = value(cand)
            if f_cand < f_cur:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        cur, f_cur = cand, f_cand
        history.append(f_cur)
        lookback = settings.patience + 1
        if len(history) >= lookback and history[-lookback] - f_cur < settings.tol:
            break
    return cur, f_cur, history


def optimize_locations(
    num_locations: int,
    system: SystemSpec,
    tasks: Sequence[TaskSpec],
    prior_gp: MultiGP,
    batch,
    config: PlannerConfig,
    executor: Optional[RolloutExecutor] = None,
    rng: Optional[np.random.Generator] = None,
    warm_start_from: Optional[NDArray] = None,
) -> Tuple[NDArray, SAAEstimate, List[dict]]:
    """Multi-start surrogate descent; returns the best start's locations.

    Starts are ranked by satisfaction estimate, ties by lower surrogate
    value, then by start index. A perfect estimate short-circuits the
    remaining starts (it cannot be beaten under the fixed batch). When the
    config enables warm starts and ``warm_start_from`` holds one fewer
    location than requested, the first start reuses it plus a fresh draw.
    """
    if num_locations < 1:
        raise ConfigurationError("optimize_locations needs at least one location")
    if rng is None:
        rng = make_rng(config.seed, "starts", num_locations)
    warm = None
    if warm_start_from is not None and config.warm_start:
        prev = np.asarray(warm_start_from, dtype=np.float64)
        if prev.shape[0] == num_locations - 1:
            # seed the added location where the incumbent violates hardest;
            # a uniform draw would usually land where the surrogate is flat.
            # Replaying the incumbent needs one fewer measurement row, so
            # drop the batch's last measurement block for the probe.
            from .rollout import SampleBatch
            probe_draws = np.concatenate(
                [batch.draws[:, :num_locations - 1],
                 batch.draws[:, num_locations:]], axis=1)
            probe = SampleBatch(seed=batch.seed, dx=batch.dx, draws=probe_draws)
            # serial on purpose: workers regenerate batches from (seed, shape)
            # and would not see this sliced view
            hotspot = violation_hotspot(prev, system, tasks, prior_gp, probe,
                                        executor=None)
            if hotspot is None:
                new_loc = config.region.sample(rng, 1)
            else:
                new_loc = config.region.clip(hotspot[None, :])
            warm = np.vstack([prev, new_loc])
    best = None  # (locations, estimate, surrogate value, start index)
    traces: List[dict] = []
    usable = False
    for s in range(config.restarts):
        x0 = warm if (s == 0 and warm is not None) else config.region.sample(rng, num_locations)
        locs, f_val, history = _pgd(x0, system, tasks, prior_gp, batch,
                                    config.region, config.optimizer, executor)
        est = estimate_satisfaction(locs, system, tasks, prior_gp, batch,
                                    executor=executor)
        traces.append({
            "start": s,
            "surrogate_history": [float(v) for v in history],
            "surrogate": float(f_val),
            "satisfaction": float(est.value),
        })
        if not np.all(est.diverged):
            usable = True
        if best is None or (est.value, -f_val) > (best[1].value, -best[2]):
            best = (locs, est, f_val, s)
        if est.value == 1.0:
            break
    if not usable:
        raise PlannerError(
            f"all {config.restarts} starts failed: every scenario rollout diverged "
            f"at size {num_locations}"
        )
    return best[0], best[1], traces


def plan(
    system: SystemSpec,
    tasks: Sequence[TaskSpec],
    prior_gp: MultiGP,
    config: PlannerConfig,
    executor: Optional[RolloutExecutor] = None,
) -> PlanResult:
    """Run the full measurement-selection loop.

    The empty candidate set is evaluated first (the loop may terminate with
    no measurements if the prior model is already good enough); afterwards
    the set grows by one per round until the estimate clears ``1 - delta``
    strictly or ``max_locations`` is hit, which is reported as ``terminated_by
    = "cap"`` rather than raised.
    """
    L = len(tasks)
    if L == 0:
        raise ConfigurationError("need at least one task")
    H = tasks[0].horizon
    dx = system.dx
    threshold = 1.0 - config.delta

    history: List[Tuple[int, float]] = []
    batch_seeds: List[int] = []
    traces_all: List[List[dict]] = []

    locations = np.zeros((0, system.d_aug))
    seed0 = derive_seed(config.seed, "batch", 0)
    batch = generate_batch(seed0, config.num_samples, build_index_map(0, L, H), dx)
    est = estimate_satisfaction(locations, system, tasks, prior_gp, batch,
                                executor=executor)
    history.append((0, est.value))
    batch_seeds.append(seed0)

    current = est.value
    N = 0
    while current <= threshold and N < config.max_locations:
        N += 1
        bseed = derive_seed(config.seed, "batch", N)
        batch = generate_batch(bseed, config.num_samples, build_index_map(N, L, H), dx)
        locations, est, traces = optimize_locations(
            N, system, tasks, prior_gp, batch, config, executor=executor,
            warm_start_from=locations)
        history.append((N, est.value))
        batch_seeds.append(bseed)
        traces_all.append(traces)
        current = est.value

    return PlanResult(
        locations=locations,
        num_locations=N,
        satisfaction_history=history,
        batch_seeds=batch_seeds,
        optimizer_traces=traces_all,
        terminated_by="satisfied" if current > threshold else "cap",
        delta=config.delta,
        num_samples=config.num_samples,
        seed=config.seed,
    )
