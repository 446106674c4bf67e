"""Monitor, Analyze, Plan and Execute phases of the migration controller."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import metrics
from .metrics import BalanceState, WeightPolicy
from .model import CLOUD, DEVICE, Point, distance
from .pso import PlacementProblem, PsoConfig, TtcBreakdown, compute_ttc, optimize
from .world import WorldState

log = logging.getLogger(__name__)


class EmptyHistory(ValueError):
    pass


class Reason(str, enum.Enum):
    RELEASE = "release"
    MOBILITY = "mobility_band"
    REBALANCE = "load_rebalance"


@dataclass(frozen=True)
class LoopConfig:
    epoch_period: float = 10.0
    band_low: float = 600.0
    band_high: float = 1000.0
    sd_threshold: float = metrics.DEFAULT_SD_THRESHOLD
    history_window: int = 10
    # Seconds ahead the analyzer predicts; None means one epoch.
    forecast_horizon: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.band_low < self.band_high:
            raise ValueError(f"need 0 < band_low ({self.band_low}) < band_high ({self.band_high})")
        if self.epoch_period <= 0:
            raise ValueError("epoch_period must be > 0")
        if self.sd_threshold <= 0:
            raise ValueError("sd_threshold must be > 0")
        if self.history_window < 1:
            raise ValueError("history_window must be >= 1")

    @property
    def horizon(self) -> float:
        return self.epoch_period if self.forecast_horizon is None else self.forecast_horizon


@dataclass(frozen=True)
class MonitoringSnapshot:
    t: float
    histories: Dict[int, Tuple[Tuple[float, Point], ...]]
    loads: Tuple[float, ...]
    completion_times: Tuple[float, ...]
    utilization: Tuple[float, ...]
    assignment: Tuple[int, ...]


@dataclass(frozen=True)
class MigrationDecision:
    module: int
    source: int
    destination: int
    reason: Reason

    def __post_init__(self):
        if self.source == self.destination:
            raise ValueError(f"module {self.module}: source and destination are both {self.source}")


@dataclass(frozen=True)
class MigrationEvent:
    time: float
    module: int
    source: int
    destination: int
    ttc: TtcBreakdown
    reason: Reason

    @property
    def ready_at(self) -> float:
        return self.time + self.ttc.migration_time + self.ttc.propagation_delay


class DestinationBecameInfeasible(RuntimeError):
    pass


def forecast_location(history: Sequence[Tuple[float, Point]], t_next: Optional[float] = None) -> Point:
    """Constant-velocity extrapolation from the last two samples.

    ``t_next`` defaults to one second after the last sample.  A single
    sample carries no motion information and is returned unchanged.
    """
    if not history:
        raise EmptyHistory("cannot forecast without samples")
    t_last, p_last = history[-1]
    if t_next is None:
        t_next = t_last + 1.0
    if len(history) == 1:
        return (float(p_last[0]), float(p_last[1]))
    t_prev, p_prev = history[-2]
    scale = (t_next - t_last) / (t_last - t_prev)
    return (p_last[0] + (p_last[0] - p_prev[0]) * scale, p_last[1] + (p_last[1] - p_prev[1]) * scale)


def candidate_nodes(point: Point, module: int, world: WorldState, usage=None) -> List[int]:
    """Fog nodes covering ``point`` that can take ``module``, nearest first."""
    use = world.usage() if usage is None else usage
    found = [int(j) for j in world.covering(point) if world.fits(int(j), module, use)]
    found.sort(key=lambda j: (distance(world.node_xy[j], point), j))
    return found


def attach_released(world: WorldState, modules: Sequence[int], t: float) -> List[MigrationDecision]:
    """Newly released modules land on the nearest node covering their user.

    Arrival is not a planned placement, so capacity is not checked: a busy
    node simply becomes overloaded until the control loop moves work away.
    Users outside every coverage circle send their module to CLOUD.
    """
    out = []
    for i in modules:
        pos = world.module_position(int(i), t)
        near = world.covering(pos) if pos is not None else []
        if len(near):
            dest = min((int(j) for j in near), key=lambda j: (distance(world.node_xy[j], pos), j))
        else:
            dest = CLOUD
        out.append(MigrationDecision(int(i), DEVICE, dest, Reason.RELEASE))
    return out


def _host_obj(world: WorldState, index: int):
    if index == DEVICE:
        return None
    if index == CLOUD:
        return world.cloud
    return world.nodes[index]


def execute(decisions: Sequence[MigrationDecision], world: WorldState, t: float) -> List[MigrationEvent]:
    """Start every planned transfer; a module is unusable until it lands.

    A decision whose destination no longer has room, or whose module has
    moved since planning, is skipped and left for the next epoch.
    """
    events = []
    for d in decisions:
        i = d.module
        current = int(world.host[i])
        if current != d.source and not (d.source == DEVICE and current < -1):
            log.info("module %d moved since planning; skipped", i)
            continue
        if d.destination >= 0 and d.reason is not Reason.RELEASE and not world.fits(d.destination, i):
            log.info("%s", DestinationBecameInfeasible(f"node {d.destination} is full for module {i}"))
            continue
        ttc = compute_ttc(world.modules[i], _host_obj(world, d.source), _host_obj(world, d.destination))
        ev = MigrationEvent(t, i, d.source, d.destination, ttc, d.reason)
        world.move(i, d.destination, ev.ready_at)
        events.append(ev)
    return events


@dataclass(frozen=True)
class EpochRecord:
    """What one epoch planned, kept for auditing a run."""

    t: float
    predictions: Dict[int, Point]
    mobility: Tuple[MigrationDecision, ...]
    rebalance: Tuple[MigrationDecision, ...]
    sigma_before_rebalance: float
    sigma_after_rebalance: float
    planned_usage: np.ndarray


@dataclass
class MapeLoop:
    """The load-balanced controller: PSO picks destinations among candidates.

    ``use_pso=False`` turns it into the nearest-node baseline, which never
    runs the load-balancing phase.
    """

    config: LoopConfig = field(default_factory=LoopConfig)
    pso: PsoConfig = field(default_factory=PsoConfig)
    use_pso: bool = True
    knowledge: List[MonitoringSnapshot] = field(default_factory=list)
    state: BalanceState = BalanceState.BALANCED
    epochs: List["EpochRecord"] = field(default_factory=list)
    _calls: int = 0

    # -- Monitor -----------------------------------------------------------

    def monitor(self, world: WorldState, t: float) -> MonitoringSnapshot:
        histories = {}
        for i in world.active():
            u = int(world.user_of[i])
            if u >= 0:
                histories[u] = tuple(world.user_history(u, t, self.config.history_window))
        ct = world.completion_times()
        snap = MonitoringSnapshot(
            t=t,
            histories=histories,
            loads=tuple(float(x) for x in world.loads()),
            completion_times=tuple(float(x) for x in ct),
            utilization=tuple(metrics.utilizations(ct)) if len(ct) else (),
            assignment=world.assignment(),
        )
        self.knowledge.append(snap)
        return snap

    # -- Analyze -----------------------------------------------------------

    def analyze(self, snapshot: MonitoringSnapshot) -> Dict[int, Point]:
        t_next = snapshot.t + self.config.horizon
        return {u: forecast_location(h, t_next) for u, h in snapshot.histories.items() if h}

    def classify(self, loads: Sequence[float]) -> metrics.BalanceReport:
        report = metrics.balance_report(loads, self.config.sd_threshold)
        self.state = report.state
        return report

    @property
    def weights(self) -> WeightPolicy:
        return metrics.select_weights(self.state)

    # -- Plan --------------------------------------------------------------

    def _next_seed(self) -> int:
        self._calls += 1
        return int(np.random.SeedSequence([self.pso.seed, self._calls]).generate_state(1)[0])

    def _choose(self, world: WorldState, jobs, weights: WeightPolicy, sources, exclude_from_base=()) -> List[int]:
        """Destination per job ``(module, candidates, anchor)``; CLOUD where nothing fits."""
        if not self.use_pso:
            return self._nearest(world, jobs)
        out = [CLOUD] * len(jobs)
        batch = [k for k, (_, cands, _) in enumerate(jobs) if cands]
        if not batch:
            return out
        mods = [jobs[k][0] for k in batch]
        leaving = set(mods) | set(exclude_from_base)
        base = world.usage()
        for i in leaving:
            if world.host[i] >= 0:
                base[world.host[i]] -= world.demand[i]
        problem = PlacementProblem(
            [world.modules[i] for i in mods], world.nodes, world.cloud,
            sources=[sources[k] for k in batch],
            candidates=[jobs[k][1] for k in batch],
            base_usage=base,
            base_completion=world.completion_times(exclude=leaving),
            anchors=[jobs[k][2] for k in batch],
            remaining=world.remaining[mods],
        )
        cfg = PsoConfig(self.pso.swarm_size, self.pso.max_iterations, self.pso.inertia,
                        self.pso.c1, self.pso.c2, self.pso.v_max, self._next_seed())
        result = optimize(problem, weights, cfg)
        for k, dest in zip(batch, result.assignment):
            out[k] = dest
        return out

    @staticmethod
    def _nearest(world: WorldState, jobs) -> List[int]:
        use = world.usage()
        out = []
        for i, cands, _ in jobs:
            dest = next((j for j in cands if world.fits(j, i, use)), CLOUD)
            if dest >= 0 and world.host[i] != dest:
                use[dest] += world.demand[i]
                if world.host[i] >= 0:
                    use[world.host[i]] -= world.demand[i]
            out.append(dest)
        return out

    def mobility_trigger(self, world: WorldState, i: int, predicted: Point) -> Optional[List[int]]:
        """Candidate list if module ``i`` must move, else None.

        A fog-hosted module moves once its user is predicted farther than
        ``band_low`` from the host; the upper band edge also triggers.  A
        cloud-hosted module is pulled back as soon as a fog node can take it.
        """
        host = int(world.host[i])
        if world.in_transit(i):
            return None
        cands = candidate_nodes(predicted, i, world)
        if host == CLOUD:
            return cands or None
        d = distance(world.node_xy[host], predicted)
        if d <= self.config.band_low:
            return None
        return [j for j in cands if j != host and distance(world.node_xy[j], predicted) < d]

    def plan_mobility(self, world: WorldState, predictions: Dict[int, Point]) -> List[MigrationDecision]:
        jobs, sources = [], []
        for i in world.active():
            u = int(world.user_of[i])
            if u not in predictions:
                continue
            cands = self.mobility_trigger(world, int(i), predictions[u])
            if cands is None:
                continue
            jobs.append((int(i), cands, predictions[u]))
            sources.append(int(world.host[i]))
        dests = self._choose(world, jobs, self.weights, sources)
        dests = self._cloud_last(world, jobs, dests)
        return [MigrationDecision(job[0], s, d, Reason.MOBILITY)
                for job, s, d in zip(jobs, sources, dests) if d != s]

    @staticmethod
    def _cloud_last(world: WorldState, jobs, dests: List[int]) -> List[int]:
        """Send a module to CLOUD only when none of its candidates has room.

        Repair inside the swarm can pad a plan with CLOUD even though a
        candidate would still fit once the rest of the plan is committed.
        """
        use = world.usage()
        for (i, _, _), d in zip(jobs, dests):
            h = world.host[i]
            if h >= 0:
                use[h] -= world.demand[i]
            if d >= 0:
                use[d] += world.demand[i]
        out = list(dests)
        for k, (i, cands, _) in enumerate(jobs):
            if out[k] != CLOUD:
                continue
            for j in cands:
                if (use[j] + world.demand[i] <= world.capacity[j] + 1e-9).all():
                    use[j] += world.demand[i]
                    out[k] = j
                    break
        return out

    def plan_load_balance(self, world: WorldState, predictions: Dict[int, Point],
                          busy: Sequence[int] = ()) -> List[MigrationDecision]:
        """One rebalance round when the load spread reaches the threshold.

        Modules on nodes loaded above the mean may move to covering nodes
        that are less loaded than their current one.  Moves are then kept
        one at a time only while they do not raise the load deviation.
        """
        loads = world.loads()
        report = self.classify(loads)
        if report.state is not BalanceState.UNBALANCED or not self.use_pso:
            return []
        weights = metrics.select_weights(report.state)
        skip = set(int(i) for i in busy)
        jobs, sources = [], []
        for j in np.argsort(-loads, kind="stable"):
            if loads[j] <= report.mean_load:
                break
            for i in world.residents(int(j)):
                u = int(world.user_of[i])
                if i in skip or world.in_transit(i) or u not in predictions:
                    continue
                p = predictions[u]
                near = [int(k) for k in world.covering(p)
                        if k != j and loads[k] < loads[j] and distance(world.node_xy[k], p) <= self.config.band_low]
                if not near:
                    continue
                near.sort(key=lambda k: (distance(world.node_xy[k], p), k))
                jobs.append((int(i), [int(j)] + near, p))
                sources.append(int(j))
        if not jobs:
            return []
        dests = self._choose(world, jobs, weights, sources, exclude_from_base=())
        return self._sigma_guard(world, jobs, sources, dests)

    def _sigma_guard(self, world, jobs, sources, dests) -> List[MigrationDecision]:
        use = world.usage()
        cap = world.capacity
        sigma = metrics.load_std_dev(use[:, 0] / cap[:, 0])
        kept = []
        for (i, _, _), s, d in zip(jobs, sources, dests):
            if d == s or d < 0:
                continue
            trial = use.copy()
            trial[s] -= world.demand[i]
            trial[d] += world.demand[i]
            if (trial[d] > cap[d] + 1e-9).any():
                continue
            new_sigma = metrics.load_std_dev(trial[:, 0] / cap[:, 0])
            if new_sigma <= sigma:
                use, sigma = trial, new_sigma
                kept.append(MigrationDecision(i, s, d, Reason.REBALANCE))
        return kept

    # -- one epoch ---------------------------------------------------------

    def run_epoch(self, world: WorldState, t: float):
        """Monitor, analyze, plan on a scratch copy, then execute for real."""
        snapshot = self.monitor(world, t)
        predictions = self.analyze(snapshot)
        scratch = world.clone()
        moves = self.plan_mobility(scratch, predictions)
        execute(moves, scratch, t)
        sigma_before = metrics.load_std_dev(scratch.loads())
        rebalance: List[MigrationDecision] = []
        if self.use_pso:
            rebalance = self.plan_load_balance(scratch, predictions, busy=[d.module for d in moves])
            execute(rebalance, scratch, t)
        else:
            self.classify(scratch.loads())
        self.epochs.append(EpochRecord(t, predictions, tuple(moves), tuple(rebalance), sigma_before,
                                       metrics.load_std_dev(scratch.loads()), scratch.usage()))
        events = execute(moves + rebalance, world, t)
        return snapshot, events
