"""Assigning scheduled devices to edge servers.

Three strategies: nearest edge, HFEL local search (single-device transfers,
then pairwise exchanges, each kept only if it lowers the round objective),
and exhaustive enumeration for small instances.
"""

from __future__ import annotations

import csv
import itertools
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .allocator import DEFAULT_TOL, allocate_all, edge_request, solve_edge
from .cost import AssignmentPattern, CostParams, CostReport
from .errors import ConfigurationError, ContractViolation, InfeasibleError
from .topology import Topology

EXHAUSTIVE_LIMIT = 1_000_000


@dataclass(frozen=True)
class AssignmentStrategy:
    kind: str  # geographic | hfel | exhaustive | drl-policy
    hfel_transfer_budget: int = 100
    hfel_exchange_budget: int = 100
    shuffle_seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("geographic", "hfel", "exhaustive", "drl-policy"):
            raise ConfigurationError(f"unknown assignment strategy {self.kind!r}")
        if self.hfel_transfer_budget < 0 or self.hfel_exchange_budget < 0:
            raise ConfigurationError("HFEL budgets must be >= 0")

    @classmethod
    def parse(cls, name: str) -> "AssignmentStrategy":
        """``geographic``, ``exhaustive``, ``drl``, ``hfel`` or ``hfel-<budget>``."""
        name = name.lower()
        if name.startswith("hfel"):
            budget = int(name.split("-", 1)[1]) if "-" in name else 100
            return cls("hfel", budget, budget)
        if name in ("drl", "d3qn", "drl-policy"):
            return cls("drl-policy")
        return cls(name)

    @property
    def label(self) -> str:
        if self.kind == "hfel":
            if self.hfel_transfer_budget == self.hfel_exchange_budget:
                return f"hfel-{self.hfel_transfer_budget}"
            return f"hfel-{self.hfel_transfer_budget}-{self.hfel_exchange_budget}"
        return self.kind


@dataclass(frozen=True)
class AssignmentOutcome:
    pattern: AssignmentPattern
    objective: float
    wall_time: float
    evaluations: int  # allocator calls
    report: CostReport | None = None
    candidates: int = 0  # HFEL adjustment attempts


def assign_geographic(schedule: Iterable[int], topology: Topology) -> AssignmentPattern:
    members = sorted(schedule)
    if not members:
        raise ContractViolation("empty schedule")
    dist = topology.distances()[members]
    # argmin keeps the first (lowest-id) edge on ties
    labels = {n: int(m) for n, m in zip(members, np.argmin(dist, axis=1))}
    return AssignmentPattern.from_labels(labels, topology.n_edges)


class EdgeCostCache:
    """Memoized per-edge (time, energy) keyed by (edge id, member set)."""

    def __init__(self, topology: Topology, params: CostParams, tolerance: float = DEFAULT_TOL):
        self.topology = topology
        self.params = params
        self.tolerance = tolerance
        self.calls = 0
        self._cache: dict[tuple[int, frozenset], tuple[float, float] | None] = {}

    def edge(self, m: int, members: frozenset[int]) -> tuple[float, float] | None:
        """(T_m, E_m), (0, 0) for an empty edge, None if infeasible."""
        if not members:
            return 0.0, 0.0
        key = (m, members)
        if key not in self._cache:
            self.calls += 1
            try:
                res = solve_edge(edge_request(self.topology, m, members, self.params, self.tolerance))
                self._cache[key] = (res.time, res.energy)
            except InfeasibleError:
                self._cache[key] = None
        return self._cache[key]

    def objective(self, groups: Sequence[frozenset[int]]) -> float:
        worst, energy = 0.0, 0.0
        for m, g in enumerate(groups):
            te = self.edge(m, g)
            if te is None:
                return float("inf")
            worst = max(worst, te[0])
            energy += te[1]
        return energy + self.params.lam * worst


def _groups(pattern: AssignmentPattern, n_edges: int) -> list[frozenset[int]]:
    return [frozenset(pattern.groups.get(m, frozenset())) for m in range(n_edges)]


def _finish(groups, topology, params, tolerance, started, calls, candidates=0) -> AssignmentOutcome:
    pattern = AssignmentPattern({m: g for m, g in enumerate(groups)})
    wall = time.perf_counter() - started
    _, report = allocate_all(pattern, topology, params, tolerance)
    return AssignmentOutcome(pattern, report.objective, wall, calls, report, candidates)


def hfel_search(
    groups: list[frozenset[int]],
    cache: EdgeCostCache,
    transfer_budget: int,
    exchange_budget: int,
    shuffle_seed: int | None = None,
) -> tuple[list[frozenset[int]], int]:
    """Greedy transfer-then-exchange search starting from ``groups``.

    Each budget caps the attempted candidates of its move type; the search
    stops the first time a candidate of an exhausted type comes up.  A phase
    ends after a full sweep that accepts nothing, and the search ends when a
    transfer phase and the following exchange phase both accept nothing.
    Returns (groups, attempts).
    """
    groups = list(groups)
    M = len(groups)
    rng = np.random.default_rng(shuffle_seed) if shuffle_seed is not None else None
    current = cache.objective(groups)
    attempts = 0

    def where(n):
        for m, g in enumerate(groups):
            if n in g:
                return m
        raise ContractViolation(f"device {n} lost during search")

    def order(cands):
        if rng is not None:
            cands = [cands[i] for i in rng.permutation(len(cands))]
        return cands

    devices = sorted(set().union(*groups))
    budgets = [transfer_budget, exchange_budget]

    def transfers():
        for n, target in order([(n, t) for n in devices for t in range(M)]):
            src = where(n)
            if target != src:
                yield src, target, n, None

    def exchanges():
        for i, j in order(list(itertools.combinations(devices, 2))):
            mi, mj = where(i), where(j)
            if mi != mj:
                yield mi, mj, i, j

    exhausted = False

    def phase(kind):
        # Sweeps until one accepts nothing.  Running out of budget ends the
        # whole search, so a smaller budget always yields a prefix of the
        # trajectory of a larger one.
        nonlocal groups, current, attempts, exhausted
        any_accepted = False
        while True:
            accepted = False
            for a, b, i, j in (transfers() if kind == 0 else exchanges()):
                if budgets[kind] == 0:
                    exhausted = True
                    return any_accepted
                budgets[kind] -= 1
                attempts += 1
                trial = list(groups)
                if j is None:
                    trial[a] = groups[a] - {i}
                    trial[b] = groups[b] | {i}
                else:
                    trial[a] = (groups[a] - {i}) | {j}
                    trial[b] = (groups[b] - {j}) | {i}
                val = cache.objective(trial)
                if val < current:
                    groups, current, accepted = trial, val, True
            any_accepted |= accepted
            if not accepted:
                return any_accepted

    # Transfers first, then exchanges; repeat while either phase still
    # finds an improving move.
    while M > 1:
        moved = phase(0)
        if exhausted:
            break
        moved = phase(1) or moved
        if exhausted or not moved:
            break
    return groups, attempts


def assign_hfel(
    schedule: Iterable[int],
    topology: Topology,
    params: CostParams,
    strategy: AssignmentStrategy | None = None,
    tolerance: float = DEFAULT_TOL,
    cache: EdgeCostCache | None = None,
) -> AssignmentOutcome:
    strategy = strategy or AssignmentStrategy("hfel")
    started = time.perf_counter()
    cache = cache or EdgeCostCache(topology, params, tolerance)
    calls0 = cache.calls
    groups = _groups(assign_geographic(schedule, topology), topology.n_edges)
    groups, attempts = hfel_search(
        groups, cache, strategy.hfel_transfer_budget, strategy.hfel_exchange_budget, strategy.shuffle_seed
    )
    return _finish(groups, topology, params, tolerance, started, cache.calls - calls0, attempts)


def assign_exhaustive(
    schedule: Iterable[int],
    topology: Topology,
    params: CostParams,
    tolerance: float = DEFAULT_TOL,
) -> AssignmentOutcome:
    """Best of all ``M^H`` patterns; ties go to the lexicographically
    smallest label vector (devices in ascending id order)."""
    members = sorted(schedule)
    M = topology.n_edges
    if not members:
        raise ContractViolation("empty schedule")
    if M ** len(members) > EXHAUSTIVE_LIMIT:
        raise ConfigurationError(f"exhaustive search over {M}^{len(members)} patterns refused (limit {EXHAUSTIVE_LIMIT})")
    started = time.perf_counter()
    cache = EdgeCostCache(topology, params, tolerance)
    best, best_groups = float("inf"), None
    for labels in itertools.product(range(M), repeat=len(members)):
        groups = [set() for _ in range(M)]
        for n, m in zip(members, labels):
            groups[m].add(n)
        groups = [frozenset(g) for g in groups]
        val = cache.objective(groups)
        if val < best:
            best, best_groups = val, groups
    if best_groups is None:
        raise InfeasibleError("no feasible assignment pattern")
    return _finish(best_groups, topology, params, tolerance, started, cache.calls)


def assign_with(
    strategy: AssignmentStrategy,
    schedule: Iterable[int],
    topology: Topology,
    params: CostParams,
    tolerance: float = DEFAULT_TOL,
    agent=None,
) -> AssignmentOutcome:
    """Dispatch on ``strategy.kind``."""
    if strategy.kind == "geographic":
        started = time.perf_counter()
        pattern = assign_geographic(schedule, topology)
        wall = time.perf_counter() - started
        _, report = allocate_all(pattern, topology, params, tolerance)
        return AssignmentOutcome(pattern, report.objective, wall, 0, report)
    if strategy.kind == "hfel":
        return assign_hfel(schedule, topology, params, strategy, tolerance)
    if strategy.kind == "exhaustive":
        return assign_exhaustive(schedule, topology, params, tolerance)
    if agent is None:
        raise ConfigurationError("drl-policy assignment needs a trained agent")
    from .d3qn.agent import assign_drl

    started = time.perf_counter()
    pattern = assign_drl(agent, schedule, topology)
    wall = time.perf_counter() - started
    _, report = allocate_all(pattern, topology, params, tolerance)
    return AssignmentOutcome(pattern, report.objective, wall, 0, report)


OUTCOME_COLUMNS = ["strategy", "instance", "objective", "wall_time", "evaluations"]


def write_outcomes_csv(path, rows: Iterable[tuple[str, int, AssignmentOutcome]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(OUTCOME_COLUMNS)
        for name, inst, out in rows:
            w.writerow([name, inst, repr(float(out.objective)), repr(float(out.wall_time)), out.evaluations])
