import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from limo import engine, metrics
from limo.config import build_scenario, parse_scenario
from limo.engine import Scenario, ScenarioInvalid, SimReport, build_report
from limo.mape import LoopConfig, MapeLoop, MigrationEvent, Reason
from limo.model import CLOUD, DEVICE, AppModule, CloudNode, FogNode, MobileUser, Topology
from limo.pso import PsoConfig, TtcBreakdown
from limo.world import WorldState, advance, fair_rates

from scenarios import small_config


def fog(j, x, cpu=500.0, bw=50.0):
    return FogNode(j, (x, 0.0), 600.0, cpu, 10_000.0, bw, 0.1)


def parked(i, at, home=DEVICE, until=60):
    return MobileUser(i, tuple((float(t), at) for t in range(until + 1)), i, home)


def resident_world(work_and_cpu, cap=500.0):
    mods = [AppModule(i, c, 1.0, 1.0, 10.0, w) for i, (w, c) in enumerate(work_and_cpu)]
    users = [parked(i, (0.0, 0.0), home=0) for i in range(len(mods))]
    return WorldState(Topology((fog(0, 0, cpu=cap), fog(1, 400)), CloudNode(), tuple(users), tuple(mods)))


class TestCompletionTimes:
    def test_single_module(self):
        assert engine.completion_times(resident_world([(1000, 500)])) == [(0, 2.0), (1, 0.0)]

    def test_fair_share(self):
        assert engine.completion_times(resident_world([(1000, 500), (1000, 500)]))[0] == (0, 4.0)

    def test_rate_capped_at_demand(self):
        # A lone module never runs faster than it asks for.
        assert engine.completion_times(resident_world([(1000, 100)]))[0] == (0, 10.0)

    def test_idle(self):
        assert engine.completion_times(resident_world([]))[0] == (0, 0.0)

    @given(st.floats(1, 1000), st.lists(st.floats(1, 800), min_size=1, max_size=10))
    def test_fair_rates_respect_capacity_and_demand(self, cap, demands):
        r = fair_rates(cap, demands)
        assert r.sum() <= cap * (1 + 1e-9)
        assert (r <= np.array(demands) + 1e-9).all()
        if sum(demands) <= cap:
            assert r.tolist() == pytest.approx(demands)

    @given(st.lists(st.tuples(st.floats(1, 1e4), st.floats(1, 800)), min_size=1, max_size=8), st.floats(50, 1000))
    def test_work_conserved(self, jobs, cap):
        rem = [w for w, _ in jobs]
        left, finish, busy = advance(cap, rem, [c for _, c in jobs])
        assert (left == 0).all() and not np.isnan(finish).any()
        assert busy == pytest.approx(finish.max())
        assert busy >= sum(rem) / cap * (1 - 1e-9)


def static_scenario(strategy="limo"):
    mod = AppModule(0, 100.0, 10.0, 1.0, 100.0, 1000.0)
    topo = Topology((fog(0, 0), fog(1, 1000)), CloudNode(), (parked(0, (100.0, 0.0), home=0),), (mod,))
    return Scenario(topo, [0.0], strategy, duration=30.0, pso=PsoConfig(swarm_size=4, max_iterations=5))


class TestRun:
    @pytest.mark.parametrize("strategy", ["limo", "baseline"])
    def test_static_user_never_migrates(self, strategy):
        r = engine.run(static_scenario(strategy))
        assert r.events == [] and r.fog_offload_count == r.cloud_offload_count == 0
        assert r.ttc == [10.0]

    def test_released_module_is_uploaded_first(self):
        sc = static_scenario()
        user = parked(0, (100.0, 0.0))
        sc.topology = Topology(sc.topology.fog_nodes, sc.topology.cloud, (user,), sc.topology.modules)
        r = engine.run(sc)
        (ev,) = r.events
        assert (ev["source"], ev["destination"], ev["reason"]) == (DEVICE, 0, "release")
        assert r.ttc == [pytest.approx(2.0 + 0.1 + 10.0)]

    def test_same_seed_same_bytes(self):
        cfg = parse_scenario(small_config(3))
        assert engine.run(build_scenario(cfg)).to_json() == engine.run(build_scenario(cfg)).to_json()

    @settings(max_examples=6, deadline=None)
    @given(st.integers(0, 2**32), st.sampled_from(["limo", "baseline"]))
    def test_report_invariants(self, seed, strategy):
        sc = build_scenario(parse_scenario(small_config(seed, strategy=strategy)))
        cap = {}
        r = engine.run(sc, capture=cap)
        assert r.fog_offload_count + r.cloud_offload_count == len(r.events)
        assert all(0.0 <= u <= 1.0 for row in r.utilization for u in row)
        assert all(0.0 <= e["time"] <= sc.duration for e in r.events)
        assert r.makespan == metrics.makespan(r.completion_times)
        assert len(r.utilization) == len(sc.topology.fog_nodes)
        assert all(len(row) == len(r.epoch_times) for row in r.utilization)
        assert engine.conservation_violations(cap["world"]) == []

    def test_report_json_round_trip(self):
        r = engine.run(build_scenario(parse_scenario(small_config(1))))
        again = SimReport.from_dict(json.loads(r.to_json()))
        assert again.to_json() == r.to_json()


class TestBuildReport:
    sc = static_scenario()

    def _event(self, dest):
        return MigrationEvent(1.0, 0, 0, dest, TtcBreakdown(1.0, 0.1, 2.0, 3.1), Reason.MOBILITY)

    def test_empty_log(self):
        r = build_report([], [], self.sc)
        assert (r.fog_offload_count, r.cloud_offload_count) == (0, 0)
        assert r.cloud_offload_rate == 0.0

    def test_counts(self):
        r = build_report([self._event(1)] * 3 + [self._event(CLOUD)], [], self.sc)
        assert (r.fog_offload_count, r.cloud_offload_count) == (3, 1)
        assert r.cloud_offload_rate == 0.25 and r.fog_offload_rate == 0.75


class TestBaseline:
    def test_matches_limo_when_nearest_is_fastest(self):
        nodes = (fog(0, 0), fog(1, 1000, bw=100.0), FogNode(2, (1000.0, 500.0), 600.0, 500.0, 1e4, 50.0, 0.1))
        mod = AppModule(0, 100.0, 10.0, 1.0, 100.0, 1000.0)
        topo = Topology(nodes, CloudNode(), (parked(0, (700.0, 0.0), home=0),), (mod,))
        w = WorldState(topo)
        w.t = 10.0
        base = engine.baseline_step(w, 10.0, LoopConfig())
        loop = MapeLoop(pso=PsoConfig(swarm_size=6, max_iterations=10))
        limo = loop.plan_mobility(w, loop.analyze(loop.monitor(w, 10.0)))
        assert loop.weights == (1.0, 0.0)
        assert base == limo and base[0].destination == 1


class TestScenarioInvalid:
    @pytest.mark.parametrize("change, path", [
        ({"strategy": "magic"}, "strategy"),
        ({"duration": 10.5}, "duration"),
        ({"time_step": 0.0}, "time_step"),
        ({"releases": [0.0, 1.0]}, "releases"),
        ({"releases": [99.0]}, "releases[0]"),
    ])
    def test_field_paths(self, change, path):
        sc = static_scenario()
        for k, v in change.items():
            setattr(sc, k, v)
        with pytest.raises(ScenarioInvalid) as info:
            engine.run(sc)
        assert info.value.path == path

    def test_module_without_user(self):
        sc = static_scenario()
        extra = AppModule(1, 1.0, 1.0, 1.0, 1.0, 1.0)
        sc.topology = Topology(sc.topology.fog_nodes, sc.topology.cloud, sc.topology.users,
                               sc.topology.modules + (extra,))
        sc.releases = [0.0, 0.0]
        with pytest.raises(ScenarioInvalid, match="no user"):
            engine.run(sc)
