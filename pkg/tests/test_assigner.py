import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import device, edge, make_topology
from hflsim.allocator import allocate_all
from hflsim.assigner import (
    AssignmentStrategy,
    EdgeCostCache,
    assign_exhaustive,
    assign_geographic,
    assign_hfel,
    assign_with,
    write_outcomes_csv,
)
from hflsim.cost import CostParams
from hflsim.errors import ConfigurationError, ContractViolation
from hflsim.topology import generate_topology

P = CostParams()


def test_geographic_nearest_and_ties():
    devs = [device(0, pos=(0.0, 0.0)), device(1, pos=(10.0, 0.0)), device(2, pos=(5.0, 0.0))]
    edges = [edge(0, pos=(0.0, 1.0)), edge(1, pos=(10.0, 1.0))]
    topo = make_topology(devs, edges, np.full((3, 2), 1e-10), [1e-10, 1e-10])
    pat = assign_geographic(range(3), topo)
    # device 2 is equidistant and goes to the lower edge id
    assert pat.groups[0] == frozenset({0, 2}) and pat.groups[1] == frozenset({1})


def test_geographic_empty_schedule():
    with pytest.raises(ContractViolation):
        assign_geographic([], generate_topology(3, 2, seed=0))


def test_strategy_parse_and_labels():
    assert AssignmentStrategy.parse("hfel-300") == AssignmentStrategy("hfel", 300, 300)
    assert AssignmentStrategy.parse("hfel").label == "hfel-100"
    assert AssignmentStrategy.parse("DRL").kind == "drl-policy"
    assert AssignmentStrategy("hfel", 5, 7).label == "hfel-5-7"
    with pytest.raises(ConfigurationError):
        AssignmentStrategy.parse("annealing")
    with pytest.raises(ConfigurationError):
        AssignmentStrategy("hfel", -1, 0)


def test_exhaustive_symmetric_tie_goes_to_first_pattern():
    devs = [device(0)]
    edges = [edge(0), edge(1)]
    topo = make_topology(devs, edges, [[1e-10, 1e-10]], [1e-10, 1e-10])
    out = assign_exhaustive([0], topo, P)
    assert out.pattern.groups[0] == frozenset({0})
    assert not out.pattern.groups.get(1)


def test_exhaustive_limit():
    topo = generate_topology(14, 3, seed=0)
    with pytest.raises(ConfigurationError):
        assign_exhaustive(range(14), topo, P)


def test_cache_memoizes():
    topo = generate_topology(4, 2, seed=1)
    cache = EdgeCostCache(topo, P)
    g = [frozenset({0, 1}), frozenset({2, 3})]
    a = cache.objective(g)
    calls = cache.calls
    assert cache.objective(g) == a and cache.calls == calls == 2
    assert cache.edge(0, frozenset()) == (0.0, 0.0)


def test_zero_budget_is_geographic():
    topo = generate_topology(8, 3, seed=3)
    out = assign_hfel(range(8), topo, P, AssignmentStrategy("hfel", 0, 0))
    assert out.pattern.labels() == assign_geographic(range(8), topo).labels()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 100_000))
def test_dominance_ordering(seed):
    topo = generate_topology(6, 2, seed=seed)
    geo = assign_with(AssignmentStrategy("geographic"), range(6), topo, P)
    hfel = assign_with(AssignmentStrategy("hfel"), range(6), topo, P)
    ex = assign_with(AssignmentStrategy("exhaustive"), range(6), topo, P)
    assert ex.objective <= hfel.objective * (1 + 1e-9)
    assert hfel.objective <= geo.objective * (1 + 1e-9)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 60))
def test_larger_budget_never_worse(seed, small):
    topo = generate_topology(12, 3, seed=seed)
    lo = assign_hfel(range(12), topo, P, AssignmentStrategy("hfel", small, small))
    hi = assign_hfel(range(12), topo, P, AssignmentStrategy("hfel", 3 * small, 3 * small))
    assert hi.objective <= lo.objective * (1 + 1e-12)
    assert hi.candidates >= lo.candidates


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from(["geographic", "hfel-20", "exhaustive"]))
def test_pattern_covers_schedule(seed, name):
    topo = generate_topology(9, 2, seed=seed)
    sched = sorted(np.random.default_rng(seed).choice(9, size=6, replace=False).tolist())
    out = assign_with(AssignmentStrategy.parse(name), sched, topo, P)
    assert out.pattern.covers(sched)
    assert all(0 <= m < topo.n_edges for m in out.pattern.groups)
    _, rep = allocate_all(out.pattern, topo, P)
    assert out.objective == pytest.approx(rep.objective, rel=1e-12)


def test_hfel_deterministic():
    topo = generate_topology(15, 3, seed=8)
    a = assign_hfel(range(15), topo, P)
    b = assign_hfel(range(15), topo, P)
    assert a.pattern == b.pattern and a.objective == b.objective


def test_drl_needs_agent():
    with pytest.raises(ConfigurationError):
        assign_with(AssignmentStrategy("drl-policy"), range(3), generate_topology(3, 2, seed=0), P)


def test_outcomes_csv(tmp_path):
    topo = generate_topology(5, 2, seed=0)
    outs = [("geographic", 0, assign_with(AssignmentStrategy("geographic"), range(5), topo, P))]
    path = tmp_path / "o.csv"
    write_outcomes_csv(path, outs)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["strategy", "instance", "objective", "wall_time", "evaluations"]
    assert float(rows[1][2]) == outs[0][2].objective
