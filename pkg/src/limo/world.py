"""Mutable simulation state: where every module lives and how much work it has left."""

from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .model import CLOUD, DEVICE, AppModule, FogNode, Point, Topology, distance

# Extra host states, beside node indices and CLOUD.
PENDING = -3
DONE = -4

_EPS = 1e-9


def fair_rates(capacity: float, demands) -> np.ndarray:
    """Max-min fair split of ``capacity``; no module runs faster than its demand."""
    d = np.asarray(demands, dtype=float)
    rates = np.zeros_like(d)
    left = float(capacity)
    order = np.argsort(d, kind="stable")
    k = len(d)
    for pos, i in enumerate(order):
        r = min(d[i], left / (k - pos))
        rates[i] = r
        left -= r
    return rates


def advance(capacity: float, remaining, demands, arrivals=None, horizon: float = math.inf):
    """Process work under fair sharing for ``horizon`` seconds.

    ``arrivals`` are offsets before which a module is not yet on the node.
    Returns ``(remaining, finish, busy_until)``: work left, per-module finish
    offsets (nan if unfinished) and the last offset at which any work ran.
    """
    rem = np.array(remaining, dtype=float)
    d = np.asarray(demands, dtype=float)
    arr = np.zeros_like(rem) if arrivals is None else np.maximum(np.asarray(arrivals, dtype=float), 0.0)
    finish = np.full(len(rem), np.nan)
    done = rem <= _EPS
    finish[done] = 0.0
    t = 0.0
    busy_until = 0.0
    while t < horizon:
        pending = ~done
        if not pending.any():
            break
        active = pending & (arr <= t + _EPS)
        waiting = pending & ~active
        next_arrival = arr[waiting].min() if waiting.any() else math.inf
        if not active.any():
            if next_arrival >= horizon:
                break
            t = next_arrival
            continue
        idx = np.nonzero(active)[0]
        rates = fair_rates(capacity, d[idx])
        to_finish = rem[idx] / rates
        step = min(to_finish.min(), next_arrival - t, horizon - t)
        rem[idx] -= rates * step
        t += step
        busy_until = t
        fin = idx[(to_finish - step) <= _EPS]
        rem[fin] = 0.0
        finish[fin] = t
        done[fin] = True
    return rem, finish, busy_until


class WorldState:
    """Hosts, transfers and remaining work for every module of a topology.

    ``host[i]`` is a fog node index, CLOUD, PENDING (not yet released) or
    DONE.  A module whose ``available_at`` lies in the future is in transit
    to ``host[i]``; its resources are already reserved there.
    """

    def __init__(self, topology: Topology, releases: Optional[Sequence[float]] = None):
        self.topology = topology
        self.nodes: List[FogNode] = list(topology.fog_nodes)
        self.cloud = topology.cloud
        self.modules: List[AppModule] = list(topology.modules)
        self.module_index = {m.id: i for i, m in enumerate(self.modules)}
        n, m = len(self.modules), len(self.nodes)
        self.t = 0.0
        self.host = np.full(n, PENDING, dtype=int)
        self.available_at = np.zeros(n)
        self.remaining = np.array([a.work_length for a in self.modules], dtype=float)
        self.release = np.zeros(n) if releases is None else np.asarray(releases, dtype=float)
        self.completed_at = np.full(n, np.nan)
        self.demand = np.array([[a.cpu_demand, a.mem_demand, a.bw_demand] for a in self.modules], dtype=float).reshape(n, 3)
        self.capacity = np.array([[f.cpu_capacity, f.mem_capacity, f.bw_capacity] for f in self.nodes], dtype=float).reshape(m, 3)
        self.node_xy = np.array([f.position for f in self.nodes], dtype=float).reshape(m, 2)
        self.radius = np.array([f.coverage_radius for f in self.nodes], dtype=float)
        self.last_busy = np.zeros(m)

        self.user_of = np.full(n, -1, dtype=int)
        self._times: List[np.ndarray] = []
        self._xy: List[np.ndarray] = []
        for u_idx, user in enumerate(topology.users):
            self.user_of[self.module_index[user.module_id]] = u_idx
            self._times.append(np.array([s[0] for s in user.history], dtype=float))
            self._xy.append(np.array([s[1] for s in user.history], dtype=float).reshape(-1, 2))
            if user.home_node != DEVICE:
                i = self.module_index[user.module_id]
                self.host[i] = user.home_node

    # -- copies ------------------------------------------------------------

    def clone(self) -> "WorldState":
        other = object.__new__(WorldState)
        other.__dict__.update(self.__dict__)
        for name in ("host", "available_at", "remaining", "completed_at", "last_busy"):
            setattr(other, name, getattr(self, name).copy())
        return other

    # -- positions ---------------------------------------------------------

    def user_history(self, user_idx: int, t: float, window: int) -> List[Tuple[float, Point]]:
        times = self._times[user_idx]
        k = int(np.searchsorted(times, t, side="right"))
        lo = max(0, k - window)
        xy = self._xy[user_idx]
        return [(float(times[j]), (float(xy[j, 0]), float(xy[j, 1]))) for j in range(lo, k)]

    def user_position(self, user_idx: int, t: float) -> Optional[Point]:
        times = self._times[user_idx]
        if len(times) == 0 or t < times[0] or t > times[-1]:
            return None
        xy = self._xy[user_idx]
        return (float(np.interp(t, times, xy[:, 0])), float(np.interp(t, times, xy[:, 1])))

    def module_position(self, i: int, t: float) -> Optional[Point]:
        u = self.user_of[i]
        return None if u < 0 else self.user_position(u, t)

    # -- occupancy ---------------------------------------------------------

    def active(self) -> np.ndarray:
        """Indices of released, unfinished modules."""
        return np.nonzero((self.host >= 0) | (self.host == CLOUD))[0]

    def in_transit(self, i: int) -> bool:
        return self.available_at[i] > self.t + _EPS

    def residents(self, j: int) -> np.ndarray:
        return np.nonzero(self.host == j)[0]

    def usage(self) -> np.ndarray:
        use = np.zeros_like(self.capacity)
        on_fog = self.host >= 0
        np.add.at(use, self.host[on_fog], self.demand[on_fog])
        return use

    def loads(self) -> np.ndarray:
        """CPU fraction committed on each fog node."""
        return self.usage()[:, 0] / self.capacity[:, 0]

    def fits(self, j: int, i: int, usage: Optional[np.ndarray] = None) -> bool:
        use = self.usage() if usage is None else usage
        extra = use[j] + (self.demand[i] if self.host[i] != j else 0.0)
        return bool((extra <= self.capacity[j] + _EPS).all())

    def covering(self, point: Point) -> np.ndarray:
        d = np.hypot(self.node_xy[:, 0] - point[0], self.node_xy[:, 1] - point[1])
        return np.nonzero(d <= self.radius)[0]

    def completion_times(self, exclude: Sequence[int] = ()) -> np.ndarray:
        """Seconds from now until each fog node finishes its assigned work."""
        skip = set(int(i) for i in exclude)
        ct = np.zeros(len(self.nodes))
        for j in range(len(self.nodes)):
            res = [i for i in self.residents(j) if i not in skip]
            if not res:
                continue
            _, finish, _ = advance(self.nodes[j].cpu_capacity, self.remaining[res], self.demand[res, 0],
                                   self.available_at[res] - self.t)
            ct[j] = float(np.nanmax(finish)) if len(finish) else 0.0
        return ct

    def assignment(self) -> Tuple[int, ...]:
        return tuple(int(h) for h in self.host)

    # -- moves -------------------------------------------------------------

    def move(self, i: int, dest: int, ready_at: float) -> None:
        self.host[i] = dest
        self.available_at[i] = ready_at

    def step(self, dt: float) -> List[int]:
        """Process all hosts over ``[t, t + dt]``; returns modules that finished."""
        finished = []
        hosts = [(j, self.nodes[j].cpu_capacity) for j in range(len(self.nodes))]
        hosts.append((CLOUD, self.cloud.cpu_capacity))
        for j, cap in hosts:
            res = self.residents(j)
            if len(res) == 0:
                continue
            arrivals = self.available_at[res] - self.t
            if arrivals.min() >= dt:
                continue
            rem, finish, busy = advance(cap, self.remaining[res], self.demand[res, 0], arrivals, dt)
            self.remaining[res] = rem
            if j >= 0 and busy > 0:
                self.last_busy[j] = self.t + busy
            for k in np.nonzero(~np.isnan(finish))[0]:
                i = res[k]
                self.host[i] = DONE
                self.completed_at[i] = self.t + finish[k]
                finished.append(int(i))
        self.t += dt
        return finished

    def distance_to_host(self, i: int, point: Point) -> float:
        h = self.host[i]
        return distance(self.node_xy[h], point) if h >= 0 else math.inf
