"""Run configuration: YAML schema, strict validation, presets, and builders.

A run file has five blocks: ``system``, ``tasks``, ``gp``, ``planner``, and
``output``, plus an optional ``validation`` block. Unknown keys anywhere are
rejected with the dotted path of the offender; YAML syntax errors surface
with the parser's line/column information. Loading, serializing, and loading
again yields an identical configuration (normalized dict equality).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import yaml

from .gp import KernelParams, MultiGP
from .planner import OptimizerSettings, PlannerConfig
from .seeds import make_rng
from .tasks import (
    AdditiveInput,
    CircleReference,
    ConfigurationError,
    ConstantConstraint,
    CoordinateBoundConstraint,
    ExplorationRegion,
    InputPassthrough,
    MeanCancelingController,
    SetpointReference,
    SweepReference,
    SystemSpec,
    TaskSpec,
    TrackingController,
    TrackingEnvelopeConstraint,
    ZeroInput,
    ZeroMap,
    _StateMapUnknown,
    demo_dynamics,
    demo_dynamics_smooth,
    sample_prior_data,
)


class ConfigError(ConfigurationError):
    """Configuration file is syntactically or semantically invalid."""


def _require_keys(d: dict, allowed: set, required: set, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(d).__name__}")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)} (allowed: {sorted(allowed)})")
    missing = required - set(d)
    if missing:
        raise ConfigError(f"{path}: missing required keys {sorted(missing)}")


def _as_spec(entry, path: str) -> dict:
    """Normalize "name" | {"name": ..., params} preset references."""
    if isinstance(entry, str):
        return {"name": entry}
    if isinstance(entry, dict):
        if "name" not in entry:
            raise ConfigError(f"{path}: preset mapping needs a 'name' key")
        return dict(entry)
    raise ConfigError(f"{path}: expected a preset name or mapping, got {type(entry).__name__}")


# ---------------------------------------------------------------------------
# Component registries
# ---------------------------------------------------------------------------

def _check_params(spec: dict, allowed: set, path: str):
    extra = set(spec) - allowed - {"name"}
    if extra:
        raise ConfigError(f"{path}: unknown parameters {sorted(extra)} for '{spec['name']}'")


def _build_reference(spec: dict, path: str):
    name = spec["name"]
    if name == "setpoint-origin":
        _check_params(spec, {"point"}, path)
        return SetpointReference(spec.get("point", (0.0, 0.0)))
    if name == "unit-circle":
        _check_params(spec, {"period"}, path)
        return CircleReference(spec.get("period", 50.0))
    if name == "sweep":
        _check_params(spec, {"amplitude", "period_x", "period_y"}, path)
        return SweepReference(spec.get("amplitude", 2.0), spec.get("period_x", 25.0),
                              spec.get("period_y", 100.0))
    raise ConfigError(f"{path}: unknown reference preset '{name}'")


def _build_controller(spec: dict, system: SystemSpec, path: str):
    name = spec["name"]
    if name == "tracking":
        ref_spec = spec.get("reference")
        if ref_spec is None:
            raise ConfigError(f"{path}: 'tracking' controller needs a 'reference'")
        extra = set(spec) - {"name", "reference"}
        if extra:
            raise ConfigError(f"{path}: unknown parameters {sorted(extra)} for 'tracking'")
        return TrackingController(_build_reference(_as_spec(ref_spec, path), f"{path}.reference"))
    if name == "zero":
        return ZeroInput(system.du)
    if name == "mean-canceling":
        return MeanCancelingController()
    raise ConfigError(f"{path}: unknown controller preset '{name}'")


def _build_constraint(spec: dict, path: str):
    name = spec["name"]
    if name == "tracking-envelope":
        ref_spec = spec.get("reference")
        if ref_spec is None:
            raise ConfigError(f"{path}: 'tracking-envelope' needs a 'reference'")
        extra = set(spec) - {"name", "reference"}
        if extra:
            raise ConfigError(f"{path}: unknown parameters {sorted(extra)}")
        return TrackingEnvelopeConstraint(
            _build_reference(_as_spec(ref_spec, path), f"{path}.reference"))
    if name == "coordinate-bound":
        extra = set(spec) - {"name", "index", "bound"}
        if extra:
            raise ConfigError(f"{path}: unknown parameters {sorted(extra)}")
        return CoordinateBoundConstraint(spec.get("index", 0), spec.get("bound", 2.5))
    if name == "constant":
        extra = set(spec) - {"name", "value"}
        if extra:
            raise ConfigError(f"{path}: unknown parameters {sorted(extra)}")
        return ConstantConstraint(spec.get("value", -1.0))
    raise ConfigError(f"{path}: unknown constraint preset '{name}'")


_KNOWN_DYNAMICS = {
    "input-passthrough": InputPassthrough,
    "additive-input": AdditiveInput,
}

_UNKNOWN_DYNAMICS = {
    "demo-nonlinear": demo_dynamics,
    "demo-nonlinear-smooth": demo_dynamics_smooth,
    "zero": ZeroMap(),
    "none": None,
}


# ---------------------------------------------------------------------------
# RunConfig
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Validated, normalized run configuration."""

    data: dict

    @property
    def repetitions(self) -> int:
        return int(self.data["planner"].get("repetitions", 1))

    @property
    def seed(self) -> int:
        return int(self.data["planner"]["seed"])

    @property
    def validation_runs(self) -> int:
        return int(self.data.get("validation", {}).get("runs", 100))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def with_seed(self, seed: int) -> "RunConfig":
        d = self.to_dict()
        d["planner"]["seed"] = int(seed)
        return RunConfig(d)


_TOP_KEYS = {"system", "tasks", "gp", "planner", "output", "validation"}
_SYSTEM_KEYS = {"dx", "du", "known_dynamics", "unknown_dynamics", "noise_scale", "region"}
_TASK_KEYS = {"controller", "constraints", "horizon", "initial_state"}
_GP_KEYS = {"signal_variance", "lengthscales", "noise_variance", "input_projection",
            "prior_data"}
_PLANNER_KEYS = {"delta", "num_samples", "max_locations", "restarts", "repetitions",
                 "seed", "optimizer", "warm_start"}
_OPTIMIZER_KEYS = {"step_size", "max_iters", "tol", "patience", "max_backtracks", "fd_step"}
_OUTPUT_KEYS = {"directory", "formats"}
_VALIDATION_KEYS = {"runs"}


def validate_config(data: dict) -> RunConfig:
    _require_keys(data, _TOP_KEYS, {"system", "tasks", "gp", "planner"}, "config")
    sys_cfg = data["system"]
    _require_keys(sys_cfg, _SYSTEM_KEYS,
                  {"dx", "du", "known_dynamics", "noise_scale", "region"}, "system")
    _require_keys(sys_cfg["region"], {"lower", "upper"}, {"lower", "upper"}, "system.region")
    if not isinstance(data["tasks"], list) or not data["tasks"]:
        raise ConfigError("tasks: expected a non-empty list")
    for i, t in enumerate(data["tasks"]):
        _require_keys(t, _TASK_KEYS, {"controller", "constraints", "horizon", "initial_state"},
                      f"tasks[{i}]")
        if not isinstance(t["constraints"], list) or not t["constraints"]:
            raise ConfigError(f"tasks[{i}].constraints: expected a non-empty list")
    _require_keys(data["gp"], _GP_KEYS,
                  {"signal_variance", "lengthscales", "input_projection"}, "gp")
    _require_keys(data["planner"], _PLANNER_KEYS,
                  {"delta", "num_samples", "max_locations", "restarts", "seed"}, "planner")
    if "optimizer" in data["planner"]:
        _require_keys(data["planner"]["optimizer"], _OPTIMIZER_KEYS, set(),
                      "planner.optimizer")
    if "output" in data:
        _require_keys(data["output"], _OUTPUT_KEYS, set(), "output")
    if "validation" in data:
        _require_keys(data["validation"], _VALIDATION_KEYS, set(), "validation")

    cfg = RunConfig(copy.deepcopy(data))
    # build everything once to surface semantic errors at load time
    system = build_system(cfg)
    build_kernel(cfg, system)
    build_tasks(cfg, system, make_rng(0, "probe"))
    build_planner_config(cfg, system)
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: YAML parse error: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a top-level mapping")
    return validate_config(data)


def save_config(cfg: RunConfig, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_system(cfg: RunConfig) -> SystemSpec:
    sc = cfg.data["system"]
    dx, du = int(sc["dx"]), int(sc["du"])
    known_name = sc["known_dynamics"]
    if known_name not in _KNOWN_DYNAMICS:
        raise ConfigError(f"system.known_dynamics: unknown preset '{known_name}'")
    known = _KNOWN_DYNAMICS[known_name](dx, du)
    unknown_name = sc.get("unknown_dynamics", "none")
    if unknown_name not in _UNKNOWN_DYNAMICS:
        raise ConfigError(f"system.unknown_dynamics: unknown preset '{unknown_name}'")
    unknown_fn = _UNKNOWN_DYNAMICS[unknown_name]
    true_unknown = _StateMapUnknown(unknown_fn, dx) if unknown_fn is not None else None
    q = sc["noise_scale"]
    Q = np.eye(dx) * float(q) if np.isscalar(q) else np.asarray(q, dtype=np.float64)
    proj = tuple(int(i) for i in cfg.data["gp"]["input_projection"])
    try:
        return SystemSpec(dx=dx, du=du, known_dynamics=known, noise_scale=Q,
                          true_unknown=true_unknown, gp_input_projection=proj)
    except ConfigurationError as err:
        raise ConfigError(f"system: {err}") from err


def build_region(cfg: RunConfig) -> ExplorationRegion:
    rc = cfg.data["system"]["region"]
    try:
        return ExplorationRegion(tuple(rc["lower"]), tuple(rc["upper"]))
    except ConfigurationError as err:
        raise ConfigError(f"system.region: {err}") from err


def build_kernel(cfg: RunConfig, system: SystemSpec) -> KernelParams:
    gc = cfg.data["gp"]
    try:
        return KernelParams(
            signal_variance=float(gc["signal_variance"]),
            lengthscales=tuple(float(l) for l in gc["lengthscales"]),
            noise_variance=float(gc.get("noise_variance", 0.0)),
            input_projection=tuple(int(i) for i in gc["input_projection"]),
        )
    except ValueError as err:
        raise ConfigError(f"gp: {err}") from err


def build_prior(cfg: RunConfig, system: SystemSpec, rng: np.random.Generator) -> MultiGP:
    """The GP conditioned on any configured pre-existing data."""
    params = build_kernel(cfg, system)
    spec = cfg.data["gp"].get("prior_data", {"source": "none"})
    spec = _as_spec(spec, "gp.prior_data") if isinstance(spec, str) else dict(spec)
    source = spec.get("source", "none")
    if source == "none":
        return MultiGP.empty(params, dx=system.dx)
    if source == "sample-true-system":
        count = int(spec.get("count", 100))
        region = build_region(cfg)
        lo = region.lower[:system.dx]
        hi = region.upper[:system.dx]
        points, residuals = sample_prior_data(system, count, rng,
                                              state_lower=lo, state_upper=hi)
        return MultiGP.from_data(params, system.dx, points, residuals,
                                 capacity=count + 8)
    if source == "inline":
        points = np.asarray(spec["points"], dtype=np.float64)
        targets = np.asarray(spec["targets"], dtype=np.float64)
        return MultiGP.from_data(params, system.dx, points, targets)
    raise ConfigError(f"gp.prior_data: unknown source '{source}'")


def build_tasks(cfg: RunConfig, system: SystemSpec, rng: np.random.Generator) -> List[TaskSpec]:
    """Construct tasks, resolving any random initial-state policies with rng."""
    region = build_region(cfg)
    tasks = []
    for i, tc in enumerate(cfg.data["tasks"]):
        path = f"tasks[{i}]"
        controller = _build_controller(_as_spec(tc["controller"], path), system,
                                       f"{path}.controller")
        constraints = tuple(
            _build_constraint(_as_spec(c, f"{path}.constraints[{k}]"),
                              f"{path}.constraints[{k}]")
            for k, c in enumerate(tc["constraints"])
        )
        init = tc["initial_state"]
        if isinstance(init, str):
            if init != "uniform-random":
                raise ConfigError(f"{path}.initial_state: unknown policy '{init}'")
            lo = np.asarray(region.lower[:system.dx])
            hi = np.asarray(region.upper[:system.dx])
            x0 = rng.uniform(lo, hi)
        else:
            x0 = np.asarray(init, dtype=np.float64)
            if x0.shape != (system.dx,):
                raise ConfigError(f"{path}.initial_state: expected {system.dx} numbers")
        try:
            tasks.append(TaskSpec(task_id=i + 1, control_law=controller,
                                  constraints=constraints, horizon=int(tc["horizon"]),
                                  initial_state=x0))
        except ConfigurationError as err:
            raise ConfigError(f"{path}: {err}") from err
    return tasks


def build_planner_config(cfg: RunConfig, system: SystemSpec,
                         seed: Optional[int] = None) -> PlannerConfig:
    pc = cfg.data["planner"]
    oc = pc.get("optimizer", {})
    try:
        optimizer = OptimizerSettings(
            step_size=float(oc.get("step_size", 0.25)),
            max_iters=int(oc.get("max_iters", 200)),
            tol=float(oc.get("tol", 1e-6)),
            patience=int(oc.get("patience", 10)),
            max_backtracks=int(oc.get("max_backtracks", 20)),
            fd_step=float(oc.get("fd_step", 1e-4)),
        )
        return PlannerConfig(
            delta=float(pc["delta"]),
            num_samples=int(pc["num_samples"]),
            max_locations=int(pc["max_locations"]),
            restarts=int(pc["restarts"]),
            seed=int(seed if seed is not None else pc["seed"]),
            region=build_region(cfg),
            optimizer=optimizer,
            warm_start=bool(pc.get("warm_start", False)),
        )
    except ConfigurationError as err:
        raise ConfigError(f"planner: {err}") from err


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def demo_config(full_scale: bool = False, smooth: bool = True, seed: int = 7) -> RunConfig:
    """The built-in planar tracking demo.

    Desk scale uses a 40-step horizon, 50 scenarios, and 3 repetitions; full
    scale uses the 100-step horizon and 100 scenarios with 10 repetitions.
    ``smooth=False`` swaps in the pole-afflicted literal reading of the demo
    map (see README: its ground truth is not finite on the region, so the
    quality targets do not apply to it).
    """
    horizon = 100 if full_scale else 40
    num_samples = 100 if full_scale else 50
    repetitions = 10 if full_scale else 3
    unknown = "demo-nonlinear-smooth" if smooth else "demo-nonlinear"
    data = {
        "system": {
            "dx": 2,
            "du": 2,
            "known_dynamics": "input-passthrough",
            "unknown_dynamics": unknown,
            "noise_scale": 0.01,
            "region": {"lower": [-3.0, -3.0, -3.0, -3.0],
                       "upper": [3.0, 3.0, 3.0, 3.0]},
        },
        "tasks": [
            {
                "controller": {"name": "tracking", "reference": "setpoint-origin"},
                "constraints": [{"name": "tracking-envelope",
                                 "reference": "setpoint-origin"}],
                "horizon": horizon,
                "initial_state": "uniform-random",
            },
            {
                "controller": {"name": "tracking", "reference": "unit-circle"},
                "constraints": [{"name": "tracking-envelope",
                                 "reference": "unit-circle"}],
                "horizon": horizon,
                "initial_state": "uniform-random",
            },
            {
                "controller": {"name": "tracking", "reference": "sweep"},
                "constraints": [{"name": "coordinate-bound", "index": 0, "bound": 2.5}],
                "horizon": horizon,
                "initial_state": "uniform-random",
            },
        ],
        "gp": {
            "signal_variance": 1.0,
            "lengthscales": [0.5, 0.5],
            "noise_variance": 1.0e-4,
            "input_projection": [0, 1],
            "prior_data": {"source": "sample-true-system", "count": 100},
        },
        "planner": {
            "delta": 0.01,
            "num_samples": num_samples,
            "max_locations": 15,
            "restarts": 1,
            "repetitions": repetitions,
            "seed": seed,
            "warm_start": True,
            "optimizer": {"step_size": 0.3, "max_iters": 5, "tol": 1.0e-4,
                          "patience": 2, "max_backtracks": 10, "fd_step": 1.0e-4},
        },
        "output": {"directory": "out", "formats": ["csv", "json"]},
        "validation": {"runs": 100},
    }
    return validate_config(data)


_PRESETS = {
    "paper-demo": lambda: demo_config(full_scale=False, smooth=True),
    "paper-demo-literal": lambda: demo_config(full_scale=False, smooth=False),
}


def preset_config(name: str) -> RunConfig:
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset '{name}' (available: {sorted(_PRESETS)})")
    return _PRESETS[name]()
