"""Discrete particle swarm placement of application modules on fog nodes.

Each particle keeps a continuous shadow coordinate per task.  The coordinate
indexes that task's candidate list: rounding it and clamping to the list
yields the node the task runs on.  Assignments that break a capacity limit
are repaired before they are scored, so every scored particle is feasible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .metrics import WeightPolicy
from .model import CLOUD, DEVICE, AppModule, CloudNode, FogNode, distance

Assignment = Tuple[int, ...]
Host = Union[FogNode, CloudNode, None]

_TOL = 1e-9


class NoTasks(ValueError):
    pass


class NoNodes(ValueError):
    pass


class ZeroBandwidth(ValueError):
    pass


class ZeroCpu(ValueError):
    pass


@dataclass(frozen=True)
class PsoConfig:
    swarm_size: int = 30
    max_iterations: int = 100
    inertia: float = 0.7
    c1: float = 1.5
    c2: float = 1.5
    # None: per task, the number of candidate nodes minus one.
    v_max: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ValueError("swarm_size must be >= 2")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.v_max is not None and self.v_max <= 0:
            raise ValueError("v_max must be > 0")


class TtcBreakdown(NamedTuple):
    migration_time: float
    propagation_delay: float
    processing_time: float
    total: float


def _link(host: Host):
    if isinstance(host, CloudNode):
        return host.bandwidth, host.propagation_delay, host.cpu_capacity
    return host.bw_capacity, host.uplink_propagation_delay, host.cpu_capacity


def compute_ttc(module: AppModule, source: Host, dest: Union[FogNode, CloudNode]) -> TtcBreakdown:
    """Transfer, propagation and processing time of ``module`` at ``dest``.

    ``source`` is the current host, or None when the module still sits on the
    user device.  Staying put costs no transfer and no propagation delay.
    """
    bw, delay, cpu = _link(dest)
    if bw <= 0:
        raise ZeroBandwidth(f"destination bandwidth is {bw}")
    if cpu <= 0:
        raise ZeroCpu(f"destination cpu capacity is {cpu}")
    pt = module.work_length / cpu
    if source is not None and source == dest:
        return TtcBreakdown(0.0, 0.0, pt, pt)
    mt = module.image_size / bw
    return TtcBreakdown(mt, delay, pt, (mt + delay) + pt)


class NormContext(NamedTuple):
    ttc_min: float
    ttc_max: float
    util_min: float
    util_max: float

    @classmethod
    def from_values(cls, ttc, util) -> "NormContext":
        return cls(float(np.min(ttc)), float(np.max(ttc)), float(np.min(util)), float(np.max(util)))

    def normalize(self, ttc, util):
        ttc = np.asarray(ttc, dtype=float)
        util = np.asarray(util, dtype=float)
        t_span = self.ttc_max - self.ttc_min
        u_span = self.util_max - self.util_min
        t = (ttc - self.ttc_min) / t_span if t_span > 0 else np.zeros_like(ttc)
        u = (util - self.util_min) / u_span if u_span > 0 else np.zeros_like(util)
        return t, u


class PlacementProblem:
    """A batch of modules to place over a set of fog nodes (plus the cloud).

    Args:
        modules: modules being placed.
        nodes: fog nodes; assignment entries index this sequence.
        cloud: fallback host for modules no fog node can take.
        sources: current host of each module (node index, CLOUD or DEVICE).
        candidates: per module, the node indices it may use, preferred first.
            Defaults to every node.
        base_usage: (m, 3) cpu/mem/bw already committed on each node by
            modules outside this batch.
        base_completion: (m,) time each node needs for that outside work.
        anchors: (n, 2) user positions; repair sends displaced modules to
            the feasible candidate nearest to these.
        remaining: work left per module in MI; defaults to ``work_length``.
    """

    def __init__(self, modules: Sequence[AppModule], nodes: Sequence[FogNode], cloud: CloudNode = None,
                 sources: Optional[Sequence[int]] = None, candidates: Optional[Sequence[Sequence[int]]] = None,
                 base_usage=None, base_completion=None, anchors=None, remaining=None):
        if not modules:
            raise NoTasks("nothing to place")
        if not nodes:
            raise NoNodes("no fog nodes to place on")
        self.modules = list(modules)
        self.nodes = list(nodes)
        self.cloud = cloud if cloud is not None else CloudNode()
        n, m = len(self.modules), len(self.nodes)
        self.n, self.m = n, m
        self.sources = np.full(n, DEVICE, dtype=int) if sources is None else np.asarray(sources, dtype=int)
        if candidates is None:
            candidates = [list(range(m))] * n
        self.candidates = [list(c) for c in candidates]
        if len(self.candidates) != n or any(not c for c in self.candidates):
            raise ValueError("every module needs a non-empty candidate list")
        for c in self.candidates:
            if any(not 0 <= j < m for j in c):
                raise ValueError(f"candidate index out of range: {c}")
        self.n_choices = np.array([len(c) for c in self.candidates])
        kmax = int(self.n_choices.max())
        self.cand_table = np.array([c + [c[-1]] * (kmax - len(c)) for c in self.candidates], dtype=int)
        self.allowed = np.zeros((n, m), dtype=bool)
        for i, c in enumerate(self.candidates):
            self.allowed[i, c] = True

        self.demand = np.array([[a.cpu_demand, a.mem_demand, a.bw_demand] for a in self.modules], dtype=float)
        self.capacity = np.array([[f.cpu_capacity, f.mem_capacity, f.bw_capacity] for f in self.nodes], dtype=float)
        self.base_usage = np.zeros((m, 3)) if base_usage is None else np.asarray(base_usage, dtype=float).reshape(m, 3)
        self.base_completion = np.zeros(m) if base_completion is None else np.asarray(base_completion, dtype=float)
        self.positions = np.array([f.position for f in self.nodes], dtype=float)
        self.anchors = None if anchors is None else np.asarray(anchors, dtype=float).reshape(n, 2)
        self._order_cache: dict = {}
        self.remaining = (np.array([a.work_length for a in self.modules], dtype=float)
                          if remaining is None else np.asarray(remaining, dtype=float))

        # Column m of both tables stands for the cloud.
        self.ttc = np.empty((n, m + 1))
        self.finish = np.empty((n, m + 1))
        hosts = self.nodes + [self.cloud]
        for i, mod in enumerate(self.modules):
            src = self._host(self.sources[i])
            for j, dest in enumerate(hosts):
                b = compute_ttc(mod, src, dest)
                self.ttc[i, j] = b.total
                # Busy time seen by the node: arrival plus capped fair-share processing.
                self.finish[i, j] = b.migration_time + b.propagation_delay + self.remaining[i] / mod.cpu_demand

    def _host(self, index: int) -> Host:
        if index == DEVICE:
            return None
        if index == CLOUD:
            return self.cloud
        return self.nodes[index]

    def current_assignment(self) -> Assignment:
        return tuple(int(s) if s >= 0 or s == CLOUD else CLOUD for s in self.sources)

    # -- scoring -----------------------------------------------------------

    def usage(self, assignment) -> np.ndarray:
        a = np.asarray(assignment, dtype=int)
        use = self.base_usage.copy()
        fog = a >= 0
        np.add.at(use, a[fog], self.demand[fog])
        return use

    def is_feasible(self, assignment) -> bool:
        a = np.asarray(assignment, dtype=int)
        fog = a >= 0
        if not self.allowed[np.nonzero(fog)[0], a[fog]].all():
            return False
        return bool((self.usage(a) <= self.capacity + _TOL).all())

    def _feasible_rows(self, assign: np.ndarray) -> np.ndarray:
        P = assign.shape[0]
        m = self.m
        fog = assign >= 0
        flat = np.where(fog, assign + m * np.arange(P)[:, None], P * m)
        ok = np.ones(P, dtype=bool)
        for r in range(3):
            w = np.broadcast_to(self.demand[:, r], assign.shape)
            tot = np.bincount(flat.ravel(), weights=w.ravel(), minlength=P * m + 1)[: P * m].reshape(P, m)
            ok &= ((tot + self.base_usage[:, r]) <= self.capacity[:, r] + _TOL).all(axis=1)
        rows = np.arange(self.n)
        in_list = np.where(fog, self.allowed[rows, np.where(fog, assign, 0)], True)
        return ok & in_list.all(axis=1)

    def raw_scores(self, assignments) -> Tuple[np.ndarray, np.ndarray]:
        """Mean TTC and average node utilization for each assignment row."""
        assign = np.atleast_2d(np.asarray(assignments, dtype=int))
        P = assign.shape[0]
        m = self.m
        cols = np.where(assign >= 0, assign, m)
        rows = np.arange(self.n)
        ttc_mean = self.ttc[rows, cols].mean(axis=1)
        finish = self.finish[rows, cols]
        ct = np.tile(self.base_completion, (P, 1)).ravel()
        fog = assign >= 0
        flat = (assign + m * np.arange(P)[:, None])[fog]
        np.maximum.at(ct, flat, finish[fog])
        ct = ct.reshape(P, m)
        span = ct.max(axis=1)
        util = np.where(span > 0, ct.mean(axis=1) / np.where(span > 0, span, 1.0), 0.0)
        return ttc_mean, util

    # -- repair ------------------------------------------------------------

    def repair(self, assignment) -> Assignment:
        """Make ``assignment`` satisfy every capacity limit.

        Modules on nodes outside their candidate list are displaced first.
        Then, for each overloaded node in index order, its lowest-cpu-demand
        modules are displaced until the node fits.  Each displaced module
        goes to the nearest candidate that can still take it, else CLOUD.
        """
        a = np.array(assignment, dtype=int)
        use = self.usage(np.where((a >= 0) & self._allowed_entries(a), a, CLOUD))
        displaced: List[Tuple[int, int]] = []
        for i in range(self.n):
            if a[i] >= 0 and not self.allowed[i, a[i]]:
                displaced.append((i, int(a[i])))
                a[i] = CLOUD
        over = np.nonzero((use > self.capacity + _TOL).any(axis=1))[0]
        for j in over:
            residents = np.nonzero(a == j)[0]
            for i in residents[np.argsort(self.demand[residents, 0], kind="stable")]:
                if (use[j] <= self.capacity[j] + _TOL).all():
                    break
                use[j] -= self.demand[i]
                a[i] = CLOUD
                displaced.append((i, int(j)))
        for i, origin in displaced:
            for j in self._nearest_order(i, origin):
                if j == origin:
                    continue
                if (use[j] + self.demand[i] <= self.capacity[j] + _TOL).all():
                    use[j] += self.demand[i]
                    a[i] = j
                    break
        return tuple(int(x) for x in a)

    def _nearest_order(self, i: int, origin: int) -> List[int]:
        key = (i, origin if self.anchors is None else None)
        order = self._order_cache.get(key)
        if order is None:
            ref = self.anchors[i] if self.anchors is not None else self.positions[origin]
            order = sorted(self.candidates[i], key=lambda j: (distance(self.positions[j], ref), j))
            self._order_cache[key] = order
        return order

    def _allowed_entries(self, a: np.ndarray) -> np.ndarray:
        fog = a >= 0
        return np.where(fog, self.allowed[np.arange(self.n), np.where(fog, a, 0)], False)


def repair_or_penalize(assignment, problem: PlacementProblem) -> Assignment:
    if problem.is_feasible(assignment):
        return tuple(int(x) for x in assignment)
    return problem.repair(assignment)


def fitness(assignment, problem: PlacementProblem, weights: WeightPolicy, context: NormContext) -> float:
    """``w2 * util_norm - w1 * ttc_norm``; -inf for an infeasible assignment."""
    if not problem.is_feasible(assignment):
        return float("-inf")
    ttc, util = problem.raw_scores([assignment])
    t, u = context.normalize(ttc, util)
    return float(weights.w2 * u[0] - weights.w1 * t[0])


def update_velocity(velocity, position, pbest, gbest, cfg: PsoConfig, rng=None, v_max=None, r1=None, r2=None):
    """Inertia plus cognitive and social pulls, clamped to ``[-v_max, v_max]``.

    ``r1``/``r2`` default to fresh U(0, 1) draws per component from ``rng``.
    """
    velocity = np.asarray(velocity, dtype=float)
    position = np.asarray(position, dtype=float)
    if r1 is None:
        r1 = rng.random(velocity.shape)
    if r2 is None:
        r2 = rng.random(velocity.shape)
    if v_max is None:
        v_max = cfg.v_max
    new = (cfg.inertia * velocity
           + cfg.c1 * r1 * (np.asarray(pbest, dtype=float) - position)
           + cfg.c2 * r2 * (np.asarray(gbest, dtype=float) - position))
    if v_max is None:
        return new
    return np.clip(new, -np.asarray(v_max), np.asarray(v_max))


def update_position(position, velocity, n_choices):
    """Move the shadow coordinate and round it to a candidate index.

    Returns ``(shadow, index)``.  The shadow is held within half a step of
    the valid index range so particles cannot drift off it.
    """
    top = np.asarray(n_choices) - 1
    shadow = np.clip(np.asarray(position, dtype=float) + velocity, -0.5, top + 0.5)
    index = np.clip(np.floor(shadow + 0.5), 0, top).astype(int)
    return shadow, index


class PsoResult(NamedTuple):
    assignment: Assignment
    trace: List[float]
    fitness: float
    context: NormContext


def optimize(problem: PlacementProblem, weights: WeightPolicy, cfg: PsoConfig = PsoConfig()) -> PsoResult:
    """Run the swarm for exactly ``cfg.max_iterations`` iterations.

    Fitness normalization ranges are taken from the first iteration's swarm
    and held fixed, so scores stay comparable across iterations and the
    global-best trace never decreases.
    """
    rng = np.random.default_rng(cfg.seed)
    P, n = cfg.swarm_size, problem.n
    top = problem.n_choices - 1
    v_max = np.maximum(top, 1).astype(float) if cfg.v_max is None else np.full(n, float(cfg.v_max))
    rows = np.arange(n)

    x = rng.uniform(-0.5, top + 0.5, size=(P, n))
    v = rng.uniform(-v_max, v_max, size=(P, n))
    idx = np.clip(np.floor(x + 0.5), 0, top).astype(int)

    pbest_x = np.zeros((P, n))
    pbest_a = np.zeros((P, n), dtype=int)
    pbest_f = np.full(P, -np.inf)
    gbest_x = np.zeros(n)
    gbest_a = None
    gbest_f = -np.inf
    context = None
    trace: List[float] = []
    repaired: dict = {}

    for it in range(cfg.max_iterations):
        assign = problem.cand_table[rows, idx]
        ok = problem._feasible_rows(assign)
        for p in np.nonzero(~ok)[0]:
            key = assign[p].tobytes()
            if key not in repaired:
                repaired[key] = problem.repair(assign[p])
            assign[p] = repaired[key]
        ttc, util = problem.raw_scores(assign)
        if context is None:
            context = NormContext.from_values(ttc, util)
        t, u = context.normalize(ttc, util)
        f = weights.w2 * u - weights.w1 * t

        # Where repair moved a task to another candidate, attract toward that candidate.
        landed = idx.astype(float)
        moved = (assign != problem.cand_table[rows, idx]) & (assign >= 0)
        for p, i in zip(*np.nonzero(moved)):
            landed[p, i] = problem.candidates[i].index(assign[p, i])

        better = f > pbest_f
        pbest_f = np.where(better, f, pbest_f)
        pbest_x[better] = landed[better]
        pbest_a[better] = assign[better]

        best = int(np.argmax(pbest_f))
        if pbest_f[best] > gbest_f:
            gbest_f = float(pbest_f[best])
            gbest_x = pbest_x[best].copy()
            gbest_a = pbest_a[best].copy()
        trace.append(gbest_f)

        if it + 1 < cfg.max_iterations:
            v = update_velocity(v, x, pbest_x, gbest_x, cfg, rng, v_max=v_max)
            x, idx = update_position(x, v, problem.n_choices)

    return PsoResult(tuple(int(a) for a in gbest_a), trace, gbest_f, context)
