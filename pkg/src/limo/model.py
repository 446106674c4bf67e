"""Core entities of a mobile fog network and the capacity feasibility check."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple

Point = Tuple[float, float]

# Host sentinels used wherever a node index is expected.
CLOUD = -1
DEVICE = -2


@dataclass(frozen=True)
class FogNode:
    id: int
    position: Point
    coverage_radius: float
    cpu_capacity: float
    mem_capacity: float
    bw_capacity: float
    uplink_propagation_delay: float = 0.0

    def __post_init__(self):
        if self.id < 0:
            raise ValueError(f"fog node id must be >= 0, got {self.id}")
        if self.coverage_radius <= 0:
            raise ValueError(f"fog node {self.id}: coverage_radius must be > 0")
        for name in ("cpu_capacity", "mem_capacity", "bw_capacity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"fog node {self.id}: {name} must be > 0")
        if self.uplink_propagation_delay < 0:
            raise ValueError(f"fog node {self.id}: negative propagation delay")

    def covers(self, point: Point) -> bool:
        return distance(self.position, point) <= self.coverage_radius


@dataclass(frozen=True)
class CloudNode:
    """Single always-available fallback host with a long network path."""

    cpu_capacity: float = 1e7
    propagation_delay: float = 0.5
    bandwidth: float = 10.0


@dataclass(frozen=True)
class AppModule:
    id: int
    cpu_demand: float
    mem_demand: float
    bw_demand: float
    image_size: float
    work_length: float

    def __post_init__(self):
        for name in ("cpu_demand", "mem_demand", "bw_demand", "image_size", "work_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"module {self.id}: {name} must be > 0")


@dataclass(frozen=True)
class MobileUser:
    id: int
    history: Tuple[Tuple[float, Point], ...]
    module_id: int
    home_node: int = DEVICE

    def __post_init__(self):
        times = [t for t, _ in self.history]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"user {self.id}: history times must be strictly increasing")


@dataclass(frozen=True)
class Topology:
    fog_nodes: Tuple[FogNode, ...]
    cloud: CloudNode = field(default_factory=CloudNode)
    users: Tuple[MobileUser, ...] = ()
    modules: Tuple[AppModule, ...] = ()

    def __post_init__(self):
        ids = [n.id for n in self.fog_nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("fog node ids must be unique")
        if self.fog_nodes:
            worst = max(n.uplink_propagation_delay for n in self.fog_nodes)
            if self.cloud.propagation_delay <= worst:
                raise ValueError("cloud propagation delay must exceed every fog uplink delay")
        module_ids = {m.id for m in self.modules}
        for u in self.users:
            if u.module_id not in module_ids:
                raise ValueError(f"user {u.id} references unknown module {u.module_id}")
            if u.home_node not in (CLOUD, DEVICE) and not 0 <= u.home_node < len(self.fog_nodes):
                raise ValueError(f"user {u.id} references unknown home node {u.home_node}")


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Euclidean distance in the plane, in meters."""
    return math.hypot(a[0] - b[0], a[1] - b[1])


def can_host(node: FogNode, resident_modules: Iterable[AppModule], candidate: AppModule) -> bool:
    """True iff ``candidate`` fits next to ``resident_modules`` on ``node``.

    CPU, memory and bandwidth sums must each stay within capacity; the bound
    is inclusive so an exact fit is accepted.
    """
    cpu = candidate.cpu_demand
    mem = candidate.mem_demand
    bw = candidate.bw_demand
    for m in resident_modules:
        cpu += m.cpu_demand
        mem += m.mem_demand
        bw += m.bw_demand
    return cpu <= node.cpu_capacity and mem <= node.mem_capacity and bw <= node.bw_capacity
