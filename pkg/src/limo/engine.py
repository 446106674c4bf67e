"""Fixed-step simulation driver and the nearest-node comparison strategy."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import metrics
from .mape import LoopConfig, MapeLoop, MigrationDecision, MigrationEvent, attach_released, execute
from .model import CLOUD, Topology
from .pso import PsoConfig
from .world import DONE, PENDING, WorldState

log = logging.getLogger(__name__)

STRATEGIES = ("limo", "baseline")


class ScenarioInvalid(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class Scenario:
    topology: Topology
    releases: Sequence[float]
    strategy: str = "limo"
    loop: LoopConfig = field(default_factory=LoopConfig)
    pso: PsoConfig = field(default_factory=PsoConfig)
    duration: float = 900.0
    time_step: float = 1.0
    seed: int = 0
    name: str = "scenario"
    config: Dict[str, Any] = field(default_factory=dict)
    config_hash: str = ""

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ScenarioInvalid("strategy", f"must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.time_step <= 0:
            raise ScenarioInvalid("time_step", "must be > 0")
        steps = self.duration / self.time_step
        if self.duration <= 0 or abs(steps - round(steps)) > 1e-9:
            raise ScenarioInvalid("duration", f"must be a positive multiple of time_step ({self.time_step})")
        if len(self.releases) != len(self.topology.modules):
            raise ScenarioInvalid("releases", "need one release time per module")
        for k, r in enumerate(self.releases):
            if not 0 <= r <= self.duration:
                raise ScenarioInvalid(f"releases[{k}]", f"release {r} outside [0, duration]")
        if not self.topology.fog_nodes:
            raise ScenarioInvalid("topology.fog_nodes", "at least one fog node is required")
        users = {u.module_id for u in self.topology.users}
        for k, m in enumerate(self.topology.modules):
            if m.id not in users:
                raise ScenarioInvalid(f"topology.modules[{k}]", f"module {m.id} has no user")


@dataclass
class SimReport:
    name: str
    strategy: str
    seed: int
    config_hash: str
    config: Dict[str, Any]
    node_ids: List[int]
    epoch_times: List[float]
    utilization: List[List[float]]
    completion_times: List[float]
    makespan: float
    avg_utilization: float
    ttc: List[float]
    mean_ttc: float
    fog_offload_count: int
    cloud_offload_count: int
    events: List[Dict[str, Any]]
    balance_timeline: List[Dict[str, Any]]
    mean_sigma: float
    tasks_total: int
    tasks_completed: int

    @property
    def offload_total(self) -> int:
        return self.fog_offload_count + self.cloud_offload_count

    @property
    def cloud_offload_rate(self) -> float:
        return self.cloud_offload_count / self.offload_total if self.offload_total else 0.0

    @property
    def fog_offload_rate(self) -> float:
        return self.fog_offload_count / self.offload_total if self.offload_total else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SimReport":
        return cls(**data)


def completion_times(world: WorldState) -> List[Tuple[int, float]]:
    """(node id, seconds until the node has finished its assigned work)."""
    ct = world.completion_times()
    return [(world.nodes[j].id, float(ct[j])) for j in range(len(ct))]


def baseline_step(world: WorldState, t: float, cfg: LoopConfig) -> List[MigrationDecision]:
    """Mobility-triggered moves to the nearest covering node with room, or CLOUD."""
    loop = MapeLoop(cfg, use_pso=False)
    predictions = loop.analyze(loop.monitor(world, t))
    return loop.plan_mobility(world, predictions)


def _event_dict(ev: MigrationEvent) -> Dict[str, Any]:
    return {
        "time": ev.time,
        "module": ev.module,
        "source": ev.source,
        "destination": ev.destination,
        "reason": ev.reason.value,
        "migration_time": ev.ttc.migration_time,
        "propagation_delay": ev.ttc.propagation_delay,
        "processing_time": ev.ttc.processing_time,
        "ttc": ev.ttc.total,
    }


def build_report(events: Sequence[MigrationEvent], utilization: Sequence[Sequence[float]], scenario: Scenario,
                 world: Optional[WorldState] = None, epoch_times: Sequence[float] = (),
                 timeline: Sequence[Dict[str, Any]] = ()) -> SimReport:
    """Aggregate a finished run; ``utilization`` is one column per epoch."""
    node_ids = [n.id for n in scenario.topology.fog_nodes]
    m = len(node_ids)
    cloud = sum(1 for e in events if e.destination == CLOUD)
    fog = sum(1 for e in events if e.destination >= 0)
    if world is not None:
        ct = [float(x) for x in world.last_busy]
        done = world.host == DONE
        ttc = [float(world.completed_at[i] - world.release[i]) for i in np.nonzero(done)[0]]
    else:
        ct, ttc = [0.0] * m, []
    span = metrics.makespan(ct) if ct else 0.0
    utils = metrics.utilizations(ct) if ct else []
    sigmas = [row["sigma"] for row in timeline]
    return SimReport(
        name=scenario.name,
        strategy=scenario.strategy,
        seed=scenario.seed,
        config_hash=scenario.config_hash,
        config=scenario.config,
        node_ids=node_ids,
        epoch_times=[float(t) for t in epoch_times],
        utilization=[[float(col[j]) for col in utilization] for j in range(m)],
        completion_times=ct,
        makespan=span,
        avg_utilization=metrics.average_utilization(utils) if utils else 0.0,
        ttc=ttc,
        mean_ttc=math.fsum(ttc) / len(ttc) if ttc else 0.0,
        fog_offload_count=fog,
        cloud_offload_count=cloud,
        events=[_event_dict(e) for e in events],
        balance_timeline=list(timeline),
        mean_sigma=math.fsum(sigmas) / len(sigmas) if sigmas else 0.0,
        tasks_total=len(scenario.topology.modules),
        tasks_completed=len(ttc),
    )


def run(scenario: Scenario, capture: Optional[Dict[str, Any]] = None) -> SimReport:
    """Simulate from time 0 to ``scenario.duration``.

    Each step places newly released modules, runs the control loop on epoch
    boundaries, then advances processing.  Identical scenarios give
    identical reports.  ``capture``, if given, receives the final world
    and the control loop for inspection.
    """
    scenario.validate()
    world = WorldState(scenario.topology, scenario.releases)
    loop = MapeLoop(scenario.loop, scenario.pso, use_pso=scenario.strategy == "limo")
    dt = scenario.time_step
    steps = int(round(scenario.duration / dt))
    epoch_every = max(1, int(round(scenario.loop.epoch_period / dt)))
    events: List[MigrationEvent] = []
    util_cols, epoch_times, timeline = [], [], []
    for k in range(steps):
        t = k * dt
        world.t = t
        due = np.nonzero((world.host == PENDING) & (world.release <= t + 1e-9))[0]
        if len(due):
            events += execute(attach_released(world, due, t), world, t)
        if k % epoch_every == 0:
            snapshot, evs = loop.run_epoch(world, t)
            events += evs
            sigma = metrics.load_std_dev(snapshot.loads)
            util_cols.append(snapshot.utilization)
            epoch_times.append(t)
            timeline.append({"t": t, "sigma": sigma,
                             "state": metrics.classify_balance(sigma, scenario.loop.sd_threshold).value})
        world.step(dt)
    if capture is not None:
        capture.update(world=world, loop=loop)
    return build_report(events, util_cols, scenario, world, epoch_times, timeline)


def conservation_violations(world: WorldState) -> List[str]:
    """Every released module must be done, in transit, or resident exactly once."""
    problems = []
    for i in range(len(world.modules)):
        h = world.host[i]
        released = world.release[i] <= world.t
        if h == PENDING and released and world.t - world.release[i] > 1.0 + 1e-9:
            problems.append(f"module {i} released at {world.release[i]} but never placed")
        if h == DONE and np.isnan(world.completed_at[i]):
            problems.append(f"module {i} done without completion time")
        if h not in (PENDING, DONE, CLOUD) and not 0 <= h < len(world.nodes):
            problems.append(f"module {i} on unknown host {h}")
    return problems
