"""Scenario and sweep documents: strict validation and materialization."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError, model_validator

from . import traces
from .engine import Scenario
from .mape import LoopConfig
from .model import AppModule, CloudNode, FogNode, MobileUser, Topology
from .pso import PsoConfig

Range = Tuple[float, float]


class ConfigError(ValueError):
    """Bad configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _check_range(name: str, r: Range, positive: bool = True):
    lo, hi = r
    if hi < lo or (positive and lo <= 0):
        raise ValueError(f"{name} must satisfy {'0 < ' if positive else ''}low <= high, got {r}")


class NodeSpec(_Strict):
    id: int = Field(ge=0)
    x: float
    y: float
    coverage_radius: float = Field(gt=0)
    cpu_capacity: float = Field(gt=0)
    mem_capacity: float = Field(gt=0)
    bw_capacity: float = Field(gt=0)
    uplink_propagation_delay: float = Field(default=0.01, ge=0)


class GridSpec(_Strict):
    count: int = Field(default=15, ge=1)
    rows: int = Field(default=3, ge=1)
    coverage_radius: float = Field(default=600.0, gt=0)
    cpu_range: Range = (2000.0, 4000.0)
    mem_range: Range = (4096.0, 8192.0)
    bw_range: Range = (50.0, 100.0)
    delay_range: Range = (0.005, 0.02)

    @model_validator(mode="after")
    def _ranges(self):
        for name in ("cpu_range", "mem_range", "bw_range"):
            _check_range(name, getattr(self, name))
        _check_range("delay_range", self.delay_range, positive=False)
        return self


class CloudSpec(_Strict):
    cpu_capacity: float = Field(default=1e7, gt=0)
    propagation_delay: float = Field(default=0.5, gt=0)
    bandwidth: float = Field(default=10.0, gt=0)


class WorkloadSpec(_Strict):
    tasks: int = Field(default=200, ge=1)
    release_window: Range = (0.0, 300.0)
    cpu_range: Range = (100.0, 400.0)
    mem_range: Range = (128.0, 1024.0)
    bw_range: Range = (1.0, 5.0)
    image_range: Range = (50.0, 300.0)
    # Seconds of processing at the module's own cpu demand.
    service_range: Range = (60.0, 180.0)

    @model_validator(mode="after")
    def _ranges(self):
        for name in ("cpu_range", "mem_range", "bw_range", "image_range", "service_range"):
            _check_range(name, getattr(self, name))
        _check_range("release_window", self.release_window, positive=False)
        if self.release_window[0] < 0:
            raise ValueError("release_window must start at or after 0")
        return self


class TraceSpec(_Strict):
    kind: Literal["clustered", "waypoint", "file"] = "clustered"
    path: Optional[str] = None
    schema_: Optional[Dict[str, Optional[str]]] = Field(default=None, alias="schema")
    delimiter: str = ","
    area: Tuple[float, float, float, float] = (0.0, 0.0, 3000.0, 1800.0)
    speed_range: Range = (5.0, 15.0)
    # Fog node indices whose positions attract the parking vehicles.
    hotspots: List[int] = Field(default_factory=lambda: [3, 7])
    hotspot_share: float = Field(default=0.7, ge=0, le=1)
    spread: float = Field(default=200.0, ge=0)

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "file" and not self.path:
            raise ValueError("kind 'file' requires path")
        x0, y0, x1, y1 = self.area
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"area {self.area} is empty")
        _check_range("speed_range", self.speed_range, positive=False)
        return self


class LoopSpec(_Strict):
    epoch_period: float = Field(default=10.0, gt=0)
    band_low: float = Field(default=600.0, gt=0)
    band_high: float = Field(default=1000.0, gt=0)
    sd_threshold: float = Field(default=0.2, gt=0)
    history_window: int = Field(default=10, ge=1)
    forecast_horizon: Optional[float] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _band(self):
        if self.band_low >= self.band_high:
            raise ValueError(f"loop.band_low ({self.band_low}) must be < loop.band_high ({self.band_high})")
        return self


class PsoSpec(_Strict):
    swarm_size: int = Field(default=30, ge=2)
    max_iterations: int = Field(default=100, ge=1)
    inertia: float = 0.7
    c1: float = 1.5
    c2: float = 1.5
    v_max: Optional[float] = Field(default=None, gt=0)


class ScenarioConfig(_Strict):
    name: str = "scenario"
    seed: int = Field(default=0, ge=0, lt=2**64)
    strategy: Literal["limo", "baseline"] = "limo"
    duration: float = Field(default=900.0, gt=0)
    time_step: float = Field(default=1.0, gt=0)
    nodes: Union[GridSpec, List[NodeSpec]] = Field(default_factory=GridSpec)
    cloud: CloudSpec = Field(default_factory=CloudSpec)
    workload: WorkloadSpec = Field(default_factory=WorkloadSpec)
    trace: TraceSpec = Field(default_factory=TraceSpec)
    loop: LoopSpec = Field(default_factory=LoopSpec)
    pso: PsoSpec = Field(default_factory=PsoSpec)

    @model_validator(mode="after")
    def _check(self):
        steps = self.duration / self.time_step
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"duration ({self.duration}) must be a multiple of time_step ({self.time_step})")
        if self.workload.release_window[1] > self.duration:
            raise ValueError("workload.release_window must end within duration")
        count = self.nodes.count if isinstance(self.nodes, GridSpec) else len(self.nodes)
        if self.trace.kind == "clustered":
            bad = [h for h in self.trace.hotspots if not 0 <= h < count]
            if bad:
                raise ValueError(f"trace.hotspots {bad} outside 0..{count - 1}")
        return self


class SweepConfig(_Strict):
    base: Union[ScenarioConfig, str]
    axis: Literal["task_count", "node_count"]
    values: List[int]
    strategies: List[Literal["limo", "baseline"]] = Field(default_factory=lambda: ["limo", "baseline"])
    seeds: List[int] = Field(default_factory=lambda: [0])
    workers: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if not self.values:
            raise ValueError("values must not be empty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("values must be strictly increasing")
        if any(v < 1 for v in self.values):
            raise ValueError("values must be >= 1")
        if not self.strategies or not self.seeds:
            raise ValueError("strategies and seeds must not be empty")
        return self


class TraceParams(_Strict):
    n_vehicles: int = Field(ge=1)
    duration: int = Field(ge=1)
    area: Tuple[float, float, float, float] = (0.0, 0.0, 3000.0, 1800.0)
    speed_range: Range = (5.0, 15.0)
    seed: int = 0
    hotspots: Optional[List[Tuple[float, float]]] = None
    hotspot_share: float = Field(default=0.7, ge=0, le=1)
    spread: float = Field(default=200.0, ge=0)
    output: str = "trace.csv"


def _wrap(exc: PydanticError) -> ConfigError:
    err = exc.errors()[0]
    path = ".".join(str(p) for p in err["loc"])
    msg = err["msg"]
    if len(exc.errors()) > 1:
        msg += f" (+{len(exc.errors()) - 1} more)"
    return ConfigError(path, msg)


def _read_json(path) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}", f"invalid JSON: {exc.msg}") from None


def parse_scenario(data: Dict[str, Any]) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except PydanticError as exc:
        raise _wrap(exc) from None


def parse_sweep(data: Dict[str, Any], base_dir: Optional[Path] = None) -> SweepConfig:
    try:
        sweep = SweepConfig.model_validate(data)
    except PydanticError as exc:
        raise _wrap(exc) from None
    if isinstance(sweep.base, str):
        base_path = Path(sweep.base)
        if base_dir is not None and not base_path.is_absolute():
            base_path = base_dir / base_path
        sweep = sweep.model_copy(update={"base": parse_scenario(_read_json(base_path))})
    return sweep


def parse_trace_params(data: Dict[str, Any]) -> TraceParams:
    try:
        return TraceParams.model_validate(data)
    except PydanticError as exc:
        raise _wrap(exc) from None


def config_echo(cfg: ScenarioConfig) -> Dict[str, Any]:
    return cfg.model_dump(mode="json", by_alias=True)


def config_hash(cfg: ScenarioConfig) -> str:
    canon = json.dumps(config_echo(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _grid_nodes(spec: GridSpec, area, rng: np.random.Generator) -> List[FogNode]:
    """Nodes at cell centers of a rows x cols partition of ``area``."""
    x0, y0, x1, y1 = area
    cols = math.ceil(spec.count / spec.rows)
    w, h = (x1 - x0) / cols, (y1 - y0) / spec.rows
    nodes = []
    for k in range(spec.count):
        r, c = divmod(k, cols)
        nodes.append(FogNode(
            id=k,
            position=(x0 + (c + 0.5) * w, y0 + (r + 0.5) * h),
            coverage_radius=spec.coverage_radius,
            cpu_capacity=float(rng.uniform(*spec.cpu_range)),
            mem_capacity=float(rng.uniform(*spec.mem_range)),
            bw_capacity=float(rng.uniform(*spec.bw_range)),
            uplink_propagation_delay=float(rng.uniform(*spec.delay_range)),
        ))
    return nodes


def _modules(spec: WorkloadSpec, count: int, rng: np.random.Generator) -> List[AppModule]:
    mods = []
    for i in range(count):
        cpu = float(rng.uniform(*spec.cpu_range))
        mods.append(AppModule(
            id=i,
            cpu_demand=cpu,
            mem_demand=float(rng.uniform(*spec.mem_range)),
            bw_demand=float(rng.uniform(*spec.bw_range)),
            image_size=float(rng.uniform(*spec.image_range)),
            work_length=cpu * float(rng.uniform(*spec.service_range)),
        ))
    return mods


def build_scenario(cfg: ScenarioConfig, base_dir: Optional[Path] = None) -> Scenario:
    """Materialize topology, traces and release times from a validated config."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    node_rng, trace_seed, work_rng, pso_seed = (
        np.random.default_rng(seeds[0]), int(seeds[1].generate_state(1)[0]),
        np.random.default_rng(seeds[2]), int(seeds[3].generate_state(1)[0]),
    )
    n_tasks = cfg.workload.tasks
    horizon = int(math.ceil(cfg.duration))

    trace_set = None
    area = cfg.trace.area
    if cfg.trace.kind == "file":
        path = Path(cfg.trace.path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            trace_set = traces.read_trace(path, cfg.trace.schema_, cfg.trace.delimiter)
        except (OSError, traces.SchemaError) as exc:
            raise ConfigError("trace.path", str(exc)) from None
        if not trace_set.tracks:
            raise ConfigError("trace.path", "trace holds no usable rows")
        bx0, by0, bx1, by1 = trace_set.bounding_box
        area = (bx0, by0, max(bx1, bx0 + 1.0), max(by1, by0 + 1.0))

    if isinstance(cfg.nodes, GridSpec):
        nodes = _grid_nodes(cfg.nodes, area, node_rng)
    else:
        nodes = [FogNode(n.id, (n.x, n.y), n.coverage_radius, n.cpu_capacity, n.mem_capacity,
                         n.bw_capacity, n.uplink_propagation_delay) for n in cfg.nodes]
    cloud = CloudNode(cfg.cloud.cpu_capacity, cfg.cloud.propagation_delay, cfg.cloud.bandwidth)
    worst = max(n.uplink_propagation_delay for n in nodes)
    if cloud.propagation_delay <= worst:
        raise ConfigError("cloud.propagation_delay", f"must exceed the largest fog uplink delay ({worst})")

    if cfg.trace.kind == "clustered":
        spots = [nodes[h].position for h in cfg.trace.hotspots]
        trace_set = traces.generate_clustered_trace(n_tasks, horizon, area, spots, cfg.trace.hotspot_share,
                                                    cfg.trace.spread, cfg.trace.speed_range, trace_seed)
    elif cfg.trace.kind == "waypoint":
        trace_set = traces.generate_synthetic_trace(n_tasks, horizon, area, cfg.trace.speed_range, trace_seed)

    vids = trace_set.vehicle_ids[:n_tasks]
    if len(vids) < n_tasks:
        raise ConfigError("workload.tasks", f"trace has only {len(vids)} vehicles for {n_tasks} tasks")
    modules = _modules(cfg.workload, n_tasks, work_rng)
    lo, hi = cfg.workload.release_window
    releases = []
    users = []
    for i, vid in enumerate(vids):
        track = trace_set.tracks[vid]
        first, last = float(track.times[0]), float(track.times[-1])
        r_lo = math.ceil(first)
        r_hi = max(r_lo, math.floor(min(last, cfg.duration)))
        r = min(max(float(np.floor(work_rng.uniform(lo, hi))), r_lo), r_hi)
        releases.append(r)
        history = tuple((float(t), (float(x), float(y))) for t, x, y in zip(track.times, track.xs, track.ys))
        users.append(MobileUser(i, history, modules[i].id))
    topology = Topology(tuple(nodes), cloud, tuple(users), tuple(modules))
    p = cfg.pso
    return Scenario(
        topology=topology,
        releases=releases,
        strategy=cfg.strategy,
        loop=LoopConfig(cfg.loop.epoch_period, cfg.loop.band_low, cfg.loop.band_high, cfg.loop.sd_threshold,
                        cfg.loop.history_window, cfg.loop.forecast_horizon),
        pso=PsoConfig(p.swarm_size, p.max_iterations, p.inertia, p.c1, p.c2, p.v_max, pso_seed),
        duration=cfg.duration,
        time_step=cfg.time_step,
        seed=cfg.seed,
        name=cfg.name,
        config=config_echo(cfg),
        config_hash=config_hash(cfg),
    )


def load_scenario(path, seed: Optional[int] = None, strategy: Optional[str] = None) -> Scenario:
    """Read, validate and materialize a scenario JSON file.

    Raises:
        ConfigError: unreadable file, bad JSON (with line) or invalid field
            (with dotted path). Unknown keys are rejected.
    """
    data = _read_json(path)
    if not isinstance(data, dict):
        raise ConfigError("", "scenario must be a JSON object")
    if seed is not None:
        data["seed"] = seed
    if strategy is not None:
        data["strategy"] = strategy
    cfg = parse_scenario(data)
    return build_scenario(cfg, Path(path).parent)
