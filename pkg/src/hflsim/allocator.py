"""Per-edge bandwidth and CPU-frequency allocation.

Each edge server independently minimizes ``E_m + lam * T_m`` over the
bandwidth ``b_n`` and frequency ``f_n`` of its members, subject to
``sum b_n <= B_m`` and ``f_min <= f_n <= f_max``.  The problem is convex;
the compiled kernel in ``_alloc_kernel`` solves its epigraph form.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _alloc_kernel as K
from .cost import (
    Allocation,
    AssignmentPattern,
    CostParams,
    CostReport,
    cloud_cost,
    comm_time_energy,
    compute_energy,
    compute_time,
    round_report,
)
from .errors import ContractViolation, InfeasibleError
from .topology import Device, EdgeServer, Topology

log = logging.getLogger(__name__)

F_MIN = 1e6  # Hz; f = 0 would make compute time infinite
DEFAULT_TOL = 1e-4
MAX_INNER = 10_000


@dataclass(frozen=True)
class AllocRequest:
    edge: EdgeServer
    members: Sequence[tuple[Device, float]]  # (device, gain to this edge)
    params: CostParams
    cloud_gain: float
    tolerance: float = DEFAULT_TOL

    def __post_init__(self):
        if not self.members:
            raise ContractViolation("allocation request needs at least one member")
        if self.tolerance <= 0:
            raise ContractViolation("tolerance must be > 0")


@dataclass(frozen=True)
class AllocResult:
    allocation: Allocation
    objective: float  # E_m + lam * T_m, cloud upload included
    time: float  # T_m
    energy: float  # E_m
    iterations: int
    converged: bool


def _arrays(req: AllocRequest):
    P = req.params
    devs = [d for d, _ in req.members]
    gains = np.array([g for _, g in req.members], dtype=float)
    u = np.array([d.u for d in devs])
    D = np.array([d.num_samples for d in devs], dtype=float)
    p = np.array([d.tx_power for d in devs])
    fmax = np.array([d.f_max for d in devs])
    c = P.local_iters * u * D
    a = 0.5 * P.alpha * c
    Y = gains * p / P.noise_psd
    return c, a, Y, p, fmax


def _edge_cost(req: AllocRequest, alloc: Allocation) -> tuple[float, float]:
    t_edge, e_edge = _members_cost(req, alloc)
    t_cloud, e_cloud = _cloud(req)
    return t_cloud + t_edge, e_cloud + e_edge


def _members_cost(req: AllocRequest, alloc: Allocation) -> tuple[float, float]:
    P = req.params
    worst = 0.0
    energy = 0.0
    for dev, g in req.members:
        b, f = alloc.bandwidth[dev.id], alloc.frequency[dev.id]
        t_com, e_com = comm_time_energy(dev, req.edge, b, P, g)
        worst = max(worst, compute_time(dev, f, P.local_iters) + t_com)
        energy += compute_energy(dev, f, P.local_iters, P.alpha) + e_com
    return P.edge_iters * worst, P.edge_iters * energy


class _CloudGain:
    def __init__(self, g):
        self._g = g

    def cloud_gain(self, edge_id):
        return self._g


def _cloud(req: AllocRequest) -> tuple[float, float]:
    return cloud_cost(req.edge, req.params, _CloudGain(req.cloud_gain))


def solve_edge(req: AllocRequest) -> AllocResult:
    """Optimal allocation for one edge server.

    Members are solved in ascending device-id order so the result depends
    only on the member set.
    """
    members = sorted(req.members, key=lambda m: m[0].id)
    if members != list(req.members):
        req = AllocRequest(req.edge, members, req.params, req.cloud_gain, req.tolerance)
    c, a, Y, p, fmax = _arrays(req)
    bad = [d.id for (d, _), y in zip(members, Y) if not y > 0]
    if bad:
        raise InfeasibleError(f"edge {req.edge.id}: zero-rate uplink for device(s) {bad}")
    P = req.params
    # Brent's x-tolerance of sqrt(tol) keeps the objective error near tol.
    xtol = min(1e-6, float(np.sqrt(req.tolerance)) * 1e-2)
    b, f, _t, _G, iters, converged = K.solve_kernel(
        c, a, Y, p, fmax, P.model_size, req.edge.bandwidth, P.lam, F_MIN, xtol, MAX_INNER
    )
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(f))):
        raise InfeasibleError(f"edge {req.edge.id}: no finite-time allocation")
    alloc = Allocation(
        bandwidth={d.id: float(bi) for (d, _), bi in zip(members, b)},
        frequency={d.id: float(fi) for (d, _), fi in zip(members, f)},
    )
    T, E = _edge_cost(req, alloc)
    if not converged:
        log.warning("edge %d: allocator hit the iteration cap (%d steps)", req.edge.id, iters)
    return AllocResult(alloc, E + P.lam * T, T, E, iters, bool(converged))


def edge_request(topology: Topology, edge_id: int, members, params: CostParams, tolerance: float = DEFAULT_TOL) -> AllocRequest:
    ch = topology.channel
    return AllocRequest(
        edge=topology.edges[edge_id],
        members=[(topology.devices[n], ch.gain(n, edge_id)) for n in sorted(members)],
        params=params,
        cloud_gain=ch.cloud_gain(edge_id),
        tolerance=tolerance,
    )


def allocate_all(
    pattern: AssignmentPattern,
    topology: Topology,
    params: CostParams,
    tolerance: float = DEFAULT_TOL,
) -> tuple[Allocation, CostReport]:
    alloc = Allocation()
    for m in sorted(pattern.groups):
        members = pattern.groups[m]
        if not members:
            continue
        try:
            res = solve_edge(edge_request(topology, m, members, params, tolerance))
        except InfeasibleError as exc:
            raise InfeasibleError(f"edge {m}: {exc}") from exc
        alloc.merge(res.allocation)
    return alloc, round_report(pattern, alloc, topology, params)


def dump_trace(req: AllocRequest, path, n_points: int = 200) -> None:
    """Write (deadline, objective) samples of the outer search as CSV.

    ``deadline`` is the per-edge-iteration deadline ``t``; ``objective`` is
    the full edge objective (Q iterations plus the cloud upload) at the best
    allocation meeting that deadline, ``inf`` where none exists.
    """
    c, a, Y, p, fmax = _arrays(req)
    P = req.params
    n = len(c)
    b = np.full(n, req.edge.bandwidth / n)
    bmin = np.full(n, np.nan)
    f = np.empty(n)
    state = np.zeros(2)
    res = solve_edge(req)
    t_cloud, e_cloud = _cloud(req)
    t_star = max(res.time - t_cloud, 1e-12) / P.edge_iters
    ts = np.geomspace(t_star / 4, t_star * 4, n_points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["deadline", "objective"])
        for t in ts:
            val = K.deadline_cost(t, c, a, Y, p, F_MIN, fmax, P.model_size, req.edge.bandwidth, P.lam, b, bmin, f, state)
            full = P.edge_iters * val + e_cloud + P.lam * t_cloud
            w.writerow([repr(float(t)), repr(float(full))])
