"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see ``conftest.verdict``) before it
asserts, so the summary lists every criterion even when some fail.
"""

import io
import math
import random
import time

import numpy as np
import pytest

from limo import engine, metrics, traces
from limo.cli import run_sweep
from limo.config import build_scenario, parse_scenario, parse_sweep
from limo.mape import Reason
from limo.model import CLOUD, DEVICE, distance
from limo.pso import PsoConfig, optimize

from oracles import brute_force, fitness_under, random_instance
from scenarios import small_config


def test_c1_metric_exactness(verdict):
    t0 = time.perf_counter()
    tol = 1e-12
    checks = [
        (metrics.makespan([3, 5, 2]), 5.0),
        (metrics.node_utilization(5, 5), 1.0),
        (metrics.node_utilization(2.5, 5), 0.5),
        (metrics.node_utilization(0, 5), 0.0),
        (metrics.average_utilization([1.0, 0.5]), 0.75),
        (metrics.average_utilization([0.4] * 9), 0.4),
        (metrics.load_std_dev([4, 4, 4]), 0.0),
        (metrics.load_std_dev([0, 4]), 2.0),
        (metrics.load_std_dev([1.0, 0.0]), 0.5),
        (metrics.load_std_dev([0.2, 0.4, 0.9]), math.sqrt(((0.2 - 0.5) ** 2 + 0.01 + 0.16) / 3)),
    ]
    checks += list(zip(metrics.min_max_normalize([2, 4, 6]), [0.0, 0.5, 1.0]))
    checks += list(zip(metrics.min_max_normalize([5, 5, 5]), [0.0, 0.0, 0.0]))
    numeric_ok = all(abs(got - want) <= tol for got, want in checks)
    states_ok = (metrics.classify_balance(0.0, 0.2) is metrics.BalanceState.BALANCED
                 and metrics.classify_balance(0.1, 0.2) is metrics.BalanceState.ALMOST_BALANCED
                 and metrics.classify_balance(0.2, 0.2) is metrics.BalanceState.UNBALANCED)
    weights_ok = (metrics.select_weights(metrics.BalanceState.BALANCED) == (1.0, 0.0)
                  and metrics.select_weights(metrics.BalanceState.ALMOST_BALANCED) == (1.0, 0.0)
                  and metrics.select_weights(metrics.BalanceState.UNBALANCED) == (0.5, 0.5))
    elapsed = time.perf_counter() - t0
    ok = numeric_ok and states_ok and weights_ok and elapsed < 1.0
    verdict("C1 metric exactness", ok,
            f"{len(checks)} values within {tol:g}={numeric_ok}, states={states_ok}, weights={weights_ok}, "
            f"{elapsed * 1000:.1f} ms")
    assert ok


@pytest.fixture(scope="module")
def pso_runs():
    """100 seeded desk-scale instances with their exhaustive optimum."""
    t0 = time.perf_counter()
    runs = []
    for seed in range(100):
        problem, mods, nodes, cloud, weights = random_instance(seed)
        res = optimize(problem, weights, PsoConfig(seed=seed))
        best, _, _ = brute_force(res.context, weights, mods, nodes, cloud)
        mine = fitness_under(res.context, weights, res.assignment, mods, nodes, cloud)
        runs.append((seed, res, mine, best))
    return runs, time.perf_counter() - t0


def test_c2_pso_near_exhaustive_optimum(pso_runs, verdict):
    runs, elapsed = pso_runs
    within = sum(abs(mine - best) <= 0.05 * abs(best) for _, _, mine, best in runs)
    exact = sum(abs(mine - best) <= 1e-12 for _, _, mine, best in runs)
    consistent = all(abs(mine - res.fitness) <= 1e-9 for _, res, mine, _ in runs)
    ok = within >= 90 and exact >= 60 and consistent and elapsed < 30
    verdict("C2 PSO optimality", ok,
            f"within 5%: {within}/100 (need 90), exact: {exact}/100 (need 60), "
            f"reported fitness matches oracle: {consistent}, {elapsed:.1f} s")
    assert ok


def test_c3_gbest_trace_monotone(pso_runs, verdict):
    runs, _ = pso_runs
    violations = sum(sum(1 for a, b in zip(res.trace, res.trace[1:]) if b < a) for _, res, _, _ in runs)
    ok = violations == 0 and all(res.trace[-1] == res.fitness for _, res, _, _ in runs)
    verdict("C3 monotone elitism", ok, f"{violations} decreases across {len(runs)} traces")
    assert ok


@pytest.fixture(scope="module")
def comparison():
    """Default clustered scenario, 10 seeds, both strategies."""
    t0 = time.perf_counter()
    out = {"limo": [], "baseline": []}
    for seed in range(10):
        for strategy in out:
            out[strategy].append(engine.run(build_scenario(parse_scenario({"seed": seed, "strategy": strategy}))))
    return out, time.perf_counter() - t0


def _means(reports):
    return {
        "cloud": float(np.mean([r.cloud_offload_count for r in reports])),
        "ttc": float(np.mean([r.mean_ttc for r in reports])),
        "sigma": float(np.mean([r.mean_sigma for r in reports])),
        "util": float(np.mean([r.avg_utilization for r in reports])),
    }


@pytest.mark.slow
@pytest.mark.parametrize("key, bound, label", [
    ("cloud", 0.90, "C4a cloud offloads"),
    ("ttc", 0.92, "C4b mean TTC"),
    ("sigma", 0.80, "C4c mean load sigma"),
    ("util", 1.00, "C4d average utilization"),
])
def test_c4_comparative_trends(comparison, verdict, key, bound, label):
    runs, elapsed = comparison
    limo, base = _means(runs["limo"]), _means(runs["baseline"])
    ratio = limo[key] / base[key] if base[key] else math.inf
    ok = limo[key] <= bound * base[key] and elapsed < 300
    verdict(label, ok, f"limo {limo[key]:.4g} vs baseline {base[key]:.4g}, ratio {ratio:.3f} "
                       f"(need <= {bound}), 20 runs in {elapsed:.0f} s")
    assert ok


def test_c5_determinism(verdict):
    t0 = time.perf_counter()
    same = True
    for seed, strategy in [(0, "limo"), (1, "baseline"), (2, "limo")]:
        cfg = parse_scenario(small_config(seed, tasks=20, nodes=6, strategy=strategy))
        same &= engine.run(build_scenario(cfg)).to_json() == engine.run(build_scenario(cfg)).to_json()
    sweep = parse_sweep({"base": small_config(tasks=8, duration=80.0), "axis": "task_count",
                         "values": [4, 8], "seeds": [0, 1]})
    parallel = run_sweep(sweep, workers=1).to_json() == run_sweep(sweep, workers=4).to_json()
    elapsed = time.perf_counter() - t0
    ok = same and parallel and elapsed < 60
    verdict("C5 determinism", ok, f"repeat runs identical={same}, parallel sweep == serial={parallel}, "
                                  f"{elapsed:.1f} s")
    assert ok


def _audit(scenario, world, loop, events):
    """Problems found in one finished run; empty means all properties held."""
    problems = list(engine.conservation_violations(world))
    band = scenario.loop.band_low
    host = {}
    for ev in events:
        before = host.get(ev["module"], DEVICE)
        if ev["source"] != before:
            problems.append(f"module {ev['module']} left {ev['source']} but was on {before}")
        host[ev["module"]] = ev["destination"]
    for i, h in host.items():
        final = int(world.host[i])
        if final >= 0 or final == CLOUD:
            if final != h:
                problems.append(f"module {i} is on {final}, log says {h}")
    for rec in loop.epochs:
        for d in rec.mobility:
            if d.source >= 0:
                user = int(world.user_of[d.module])
                if distance(world.node_xy[d.source], rec.predictions[user]) <= band:
                    problems.append(f"t={rec.t}: module {d.module} moved although its user stays in band")
        for d in rec.mobility + rec.rebalance:
            if d.destination >= 0 and (rec.planned_usage[d.destination] > world.capacity[d.destination] + 1e-9).any():
                problems.append(f"t={rec.t}: node {d.destination} over capacity after planning")
        if rec.rebalance and rec.sigma_after_rebalance > rec.sigma_before_rebalance + 1e-12:
            problems.append(f"t={rec.t}: rebalance raised sigma")
    return problems


def test_c6_conservation_and_feasibility(verdict):
    t0 = time.perf_counter()
    rng = random.Random(2024)
    problems, rebalances, migrations = [], 0, 0
    for k in range(50):
        nodes = rng.randint(2, 8)
        cfg = small_config(rng.randrange(2**32), tasks=rng.randint(5, 30), nodes=nodes,
                           strategy=rng.choice(["limo", "baseline"]),
                           trace={"kind": rng.choice(["clustered", "waypoint"]),
                                  "hotspots": [rng.randrange(nodes)]})
        scenario = build_scenario(parse_scenario(cfg))
        cap = {}
        report = engine.run(scenario, capture=cap)
        found = _audit(scenario, cap["world"], cap["loop"], report.events)
        problems += [f"scenario {k}: {p}" for p in found]
        rebalances += sum(1 for r in cap["loop"].epochs if r.rebalance)
        migrations += sum(1 for e in report.events if e["reason"] != Reason.RELEASE.value)
    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 120
    verdict("C6 conservation & feasibility", ok,
            f"{len(problems)} violations over 50 scenarios ({migrations} migrations, "
            f"{rebalances} rebalance epochs), {elapsed:.1f} s" + (f"; first: {problems[0]}" if problems else ""))
    assert ok


def test_c7_trace_handling(verdict):
    ts = traces.generate_synthetic_trace(100, 99, seed=11)
    buf = io.StringIO()
    traces.serialize(ts, buf)
    again = traces.parse_trace(io.StringIO(buf.getvalue()))
    round_trip = ts.record_count == 10_000 and again == ts

    header = "time,id,x,y,speed,angle,lane,type\n"
    two = traces.parse_trace(io.StringIO(header + "0,v,0,0,1,0,L,vehicle\n2,v,2,0,1,0,L,vehicle\n"))
    diag = traces.parse_trace(io.StringIO(header + "10,w,4,-6,1,0,L,vehicle\n14,w,8,2,1,0,L,vehicle\n"))
    midpoint = (traces.sample_position(two, "v", 1.0) == (1.0, 0.0)
                and traces.sample_position(diag, "w", 12.0) == (6.0, -2.0)
                and traces.sample_position(two, "v", 3.0) is None)

    worst = 0.0
    for seed in range(20):
        for gen in ("waypoint", "clustered"):
            if gen == "waypoint":
                t = traces.generate_synthetic_trace(10, 120, (0, 0, 2000, 1000), (3.0, 12.0), seed)
            else:
                t = traces.generate_clustered_trace(10, 120, (0, 0, 2000, 1000), [(500, 500), (1500, 200)],
                                                    0.7, 150.0, (3.0, 12.0), seed)
            for tr in t.tracks.values():
                step = np.hypot(np.diff(tr.xs), np.diff(tr.ys)) / np.diff(tr.times)
                worst = max(worst, float(step.max()) if len(step) else 0.0)
    bounded = worst <= 12.0 + 1e-9
    ok = round_trip and midpoint and bounded
    verdict("C7 trace handling", ok, f"10,000-row round trip identical={round_trip}, midpoints exact={midpoint}, "
                                     f"max speed {worst:.3f} m/s (bound 12)")
    assert ok
