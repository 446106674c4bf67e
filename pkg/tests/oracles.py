"""Independent reference computations used by the tests.

Nothing here calls into the planner's scoring code: TTC, completion times,
feasibility and fitness are recomputed from the raw module/node fields.
"""

import itertools
import math
import random

from limo.metrics import SPLIT, TTC_ONLY
from limo.model import CLOUD, AppModule, CloudNode, FogNode
from limo.pso import PlacementProblem


def ttc_from_device(mod, node):
    if isinstance(node, CloudNode):
        return (mod.image_size / node.bandwidth + node.propagation_delay) + mod.work_length / node.cpu_capacity
    return (mod.image_size / node.bw_capacity + node.uplink_propagation_delay) + mod.work_length / node.cpu_capacity


def node_finish(mod, node):
    # Arrival after transfer, then processing at the module's own rate.
    return mod.image_size / node.bw_capacity + node.uplink_propagation_delay + mod.work_length / mod.cpu_demand


def feasible(assignment, modules, nodes):
    for j, node in enumerate(nodes):
        on = [modules[i] for i, a in enumerate(assignment) if a == j]
        if sum(m.cpu_demand for m in on) > node.cpu_capacity:
            return False
        if sum(m.mem_demand for m in on) > node.mem_capacity:
            return False
        if sum(m.bw_demand for m in on) > node.bw_capacity:
            return False
    return True


def raw_objectives(assignment, modules, nodes, cloud=None):
    ttc, ct = [], [0.0] * len(nodes)
    for i, j in enumerate(assignment):
        if j == CLOUD:
            ttc.append(ttc_from_device(modules[i], cloud))
            continue
        ttc.append(ttc_from_device(modules[i], nodes[j]))
        ct[j] = max(ct[j], node_finish(modules[i], nodes[j]))
    span = max(ct)
    util = sum(c / span for c in ct) / len(ct) if span > 0 else 0.0
    return sum(ttc) / len(ttc), util


def fitness_under(context, weights, assignment, modules, nodes, cloud=None):
    if not feasible(assignment, modules, nodes):
        return -math.inf
    t, u = raw_objectives(assignment, modules, nodes, cloud)
    tn = (t - context.ttc_min) / (context.ttc_max - context.ttc_min) if context.ttc_max > context.ttc_min else 0.0
    un = (u - context.util_min) / (context.util_max - context.util_min) if context.util_max > context.util_min else 0.0
    return weights.w2 * un - weights.w1 * tn


def greedy_repair(assignment, modules, nodes):
    """Reference repair: shed lowest-cpu modules from overloaded nodes, then
    re-home each on the nearest other node with room, else CLOUD."""
    a = list(assignment)
    used = [[0.0, 0.0, 0.0] for _ in nodes]
    for i, j in enumerate(a):
        if j != CLOUD:
            d = modules[i]
            used[j][0] += d.cpu_demand
            used[j][1] += d.mem_demand
            used[j][2] += d.bw_demand

    def fits(j, extra=None):
        caps = (nodes[j].cpu_capacity, nodes[j].mem_capacity, nodes[j].bw_capacity)
        add = (0, 0, 0) if extra is None else (extra.cpu_demand, extra.mem_demand, extra.bw_demand)
        return all(used[j][r] + add[r] <= caps[r] + 1e-9 for r in range(3))

    displaced = []
    for j in range(len(nodes)):
        here = sorted((i for i, x in enumerate(a) if x == j), key=lambda i: (modules[i].cpu_demand, i))
        for i in here:
            if fits(j):
                break
            d = modules[i]
            used[j][0] -= d.cpu_demand
            used[j][1] -= d.mem_demand
            used[j][2] -= d.bw_demand
            a[i] = CLOUD
            displaced.append((i, j))
    for i, origin in displaced:
        ox, oy = nodes[origin].position
        order = sorted(range(len(nodes)),
                       key=lambda j: (math.hypot(nodes[j].position[0] - ox, nodes[j].position[1] - oy), j))
        for j in order:
            if j != origin and fits(j, modules[i]):
                d = modules[i]
                used[j][0] += d.cpu_demand
                used[j][1] += d.mem_demand
                used[j][2] += d.bw_demand
                a[i] = j
                break
    return tuple(a)


def brute_force(context, weights, modules, nodes, cloud):
    """Best fitness over all m**n particle positions, each decoded by repair.

    Returns ``(best, position, decoded)``; the first position wins ties.
    """
    best, arg, dec = -math.inf, None, None
    for a in itertools.product(range(len(nodes)), repeat=len(modules)):
        fixed = greedy_repair(a, modules, nodes)
        f = fitness_under(context, weights, fixed, modules, nodes, cloud)
        if f > best:
            best, arg, dec = f, a, fixed
    return best, arg, dec


def random_instance(seed, n=None, m=None):
    """Small heterogeneous instance; capacities usually but not always loose."""
    rng = random.Random(seed)
    n = n or rng.randint(2, 6)
    m = m or rng.randint(2, 3)
    modules = [AppModule(i, rng.uniform(100, 400), rng.uniform(100, 500), rng.uniform(1, 5),
                         rng.uniform(20, 300), rng.uniform(500, 20000)) for i in range(n)]
    nodes = [FogNode(j, (600.0 * j, 0.0), 600.0, rng.uniform(600, 1500), rng.uniform(800, 2000),
                     rng.uniform(8, 20) if rng.random() < 0.8 else rng.uniform(40, 100),
                     rng.uniform(0.0, 0.05)) for j in range(m)]
    weights = SPLIT if seed % 2 else TTC_ONLY
    cloud = CloudNode(1e7, 2.0, 1.0)
    problem = PlacementProblem(modules, nodes, cloud)
    return problem, modules, nodes, cloud, weights
