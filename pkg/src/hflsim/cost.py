"""Latency and energy model for one HFL round.

All functions are pure.  Units: seconds, joules, hertz, watts, bits.
Download cost is zero; only uplinks (device -> edge, edge -> cloud) are
charged.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

from .errors import ContractViolation, DomainError, InfeasibleError
from .topology import Device, EdgeServer, Topology, dbm_to_watts

BITS_PER_KB = 8192  # 1 KB = 1024 bytes


def kb_to_bits(kb: float) -> float:
    return kb * BITS_PER_KB


@dataclass(frozen=True)
class CostParams:
    alpha: float = 2e-28  # alpha/2 is the effective capacitance coefficient
    lam: float = 1.0  # J per second of latency
    noise_psd: float = float(dbm_to_watts(-174.0))  # W/Hz
    model_size: float = kb_to_bits(448)  # bits
    local_iters: int = 5
    edge_iters: int = 5
    cloud_bandwidth: float = 10e6  # Hz, per edge server

    def __post_init__(self):
        for name in ("alpha", "noise_psd", "model_size", "local_iters", "edge_iters", "cloud_bandwidth"):
            if getattr(self, name) <= 0:
                raise DomainError(f"CostParams.{name} must be > 0")
        if self.lam < 0:
            raise DomainError("CostParams.lam must be >= 0")

    def with_(self, **kw) -> "CostParams":
        return CostParams(**{**asdict(self), **kw})

    @classmethod
    def from_dict(cls, d: Mapping) -> "CostParams":
        d = dict(d)
        # Sizes may be given in KB in config files.
        if "model_size_kb" in d:
            d["model_size"] = kb_to_bits(d.pop("model_size_kb"))
        if "noise_psd_dbm_hz" in d:
            d["noise_psd"] = float(dbm_to_watts(d.pop("noise_psd_dbm_hz")))
        return cls(**d)


@dataclass
class Allocation:
    bandwidth: dict[int, float] = field(default_factory=dict)
    frequency: dict[int, float] = field(default_factory=dict)

    def merge(self, other: "Allocation") -> None:
        self.bandwidth.update(other.bandwidth)
        self.frequency.update(other.frequency)

    def check(self, pattern: "AssignmentPattern", topology: Topology, rtol: float = 1e-9) -> None:
        for m, members in pattern.groups.items():
            total = 0.0
            for n in members:
                b, f = self.bandwidth[n], self.frequency[n]
                if not b > 0:
                    raise ContractViolation(f"device {n}: bandwidth {b} <= 0")
                if not 0 < f <= topology.devices[n].f_max * (1 + rtol):
                    raise ContractViolation(f"device {n}: frequency {f} outside (0, f_max]")
                total += b
            if total > topology.edges[m].bandwidth * (1 + rtol):
                raise ContractViolation(f"edge {m}: bandwidth {total} exceeds {topology.edges[m].bandwidth}")


@dataclass(frozen=True)
class AssignmentPattern:
    """Disjoint device groups per edge server; missing edges are empty."""

    groups: dict[int, frozenset[int]]

    def __post_init__(self):
        seen: set[int] = set()
        for m, g in self.groups.items():
            if seen & g:
                raise ContractViolation(f"device(s) {sorted(seen & g)} assigned to more than one edge")
            seen |= g

    @classmethod
    def from_labels(cls, labels: Mapping[int, int], n_edges: int) -> "AssignmentPattern":
        groups: dict[int, set[int]] = {m: set() for m in range(n_edges)}
        for n, m in labels.items():
            groups[int(m)].add(int(n))
        return cls({m: frozenset(g) for m, g in groups.items()})

    @property
    def members(self) -> frozenset[int]:
        return frozenset().union(*self.groups.values()) if self.groups else frozenset()

    def labels(self) -> dict[int, int]:
        return {n: m for m, g in self.groups.items() for n in g}

    def edge_of(self, device: int) -> int:
        for m, g in self.groups.items():
            if device in g:
                return m
        raise ContractViolation(f"device {device} not in pattern")

    def covers(self, scheduled: Iterable[int]) -> bool:
        return self.members == frozenset(scheduled)

    def key(self, n_edges: int) -> tuple:
        return tuple(tuple(sorted(self.groups.get(m, ()))) for m in range(n_edges))


@dataclass(frozen=True)
class CostReport:
    per_edge_time: dict[int, float]
    per_edge_energy: dict[int, float]
    round_time: float
    round_energy: float
    objective: float

    @staticmethod
    def csv_header(n_edges: int) -> list[str]:
        cols = ["round", "T_i", "E_i", "objective"]
        cols += [f"T_edge{m}" for m in range(n_edges)]
        cols += [f"E_edge{m}" for m in range(n_edges)]
        return cols

    def csv_row(self, round_index: int, n_edges: int) -> list[str]:
        vals = [self.round_time, self.round_energy, self.objective]
        vals += [self.per_edge_time.get(m, 0.0) for m in range(n_edges)]
        vals += [self.per_edge_energy.get(m, 0.0) for m in range(n_edges)]
        return [str(round_index)] + [repr(float(v)) for v in vals]


# -- per-device terms ---------------------------------------------------------


def compute_time(device: Device, f: float, L: int) -> float:
    if f <= 0:
        raise DomainError(f"CPU frequency must be > 0, got {f}")
    return L * device.u * device.num_samples / f


def compute_energy(device: Device, f: float, L: int, alpha: float) -> float:
    if f < 0:
        raise DomainError(f"CPU frequency must be >= 0, got {f}")
    return (alpha / 2.0) * L * f * f * device.u * device.num_samples


def tx_rate(b: float, gain: float, p: float, noise_psd: float) -> float:
    """Shannon rate ``b * log2(1 + gain * p / (noise_psd * b))`` in bit/s."""
    if b <= 0:
        raise DomainError(f"bandwidth must be > 0, got {b}")
    if p < 0:
        raise DomainError(f"transmit power must be >= 0, got {p}")
    return b * math.log2(1.0 + gain * p / (noise_psd * b))


def comm_time_energy(device: Device, edge: EdgeServer, b: float, params: CostParams, gain: float) -> tuple[float, float]:
    rate = tx_rate(b, gain, device.tx_power, params.noise_psd)
    if rate <= 0:
        raise InfeasibleError(f"device {device.id} -> edge {edge.id}: zero uplink rate")
    t = params.model_size / rate
    return t, device.tx_power * t


def edge_round_cost(
    edge: EdgeServer,
    members: Iterable[int],
    alloc: Allocation,
    params: CostParams,
    topology: Topology,
) -> tuple[float, float]:
    """(T_edge, E_edge) for ``Q`` edge iterations; (0, 0) for no members."""
    worst = 0.0
    energy = 0.0
    for n in sorted(members):
        try:
            b, f = alloc.bandwidth[n], alloc.frequency[n]
        except KeyError:
            raise ContractViolation(f"allocation missing device {n}") from None
        dev = topology.devices[n]
        t_com, e_com = comm_time_energy(dev, edge, b, params, topology.channel.gain(n, edge.id))
        t = compute_time(dev, f, params.local_iters) + t_com
        worst = max(worst, t)
        energy += compute_energy(dev, f, params.local_iters, params.alpha) + e_com
    return params.edge_iters * worst, params.edge_iters * energy


def cloud_cost(edge: EdgeServer, params: CostParams, channel) -> tuple[float, float]:
    """Edge -> cloud upload of one edge model over the fixed cloud bandwidth."""
    B = params.cloud_bandwidth
    rate = tx_rate(B, channel.cloud_gain(edge.id), edge.tx_power, params.noise_psd)
    if rate <= 0:
        raise InfeasibleError(f"edge {edge.id} -> cloud: zero uplink rate")
    t = params.model_size / rate
    return t, edge.tx_power * t


def round_report(pattern: AssignmentPattern, alloc: Allocation, topology: Topology, params: CostParams) -> CostReport:
    per_t: dict[int, float] = {}
    per_e: dict[int, float] = {}
    for m, edge in enumerate(topology.edges):
        members = pattern.groups.get(m, frozenset())
        if not members:
            per_t[m], per_e[m] = 0.0, 0.0
            continue
        t_edge, e_edge = edge_round_cost(edge, members, alloc, params, topology)
        t_cloud, e_cloud = cloud_cost(edge, params, topology.channel)
        per_t[m] = t_cloud + t_edge
        per_e[m] = e_cloud + e_edge
    t_round = max(per_t.values(), default=0.0)
    e_round = sum(per_e[m] for m in sorted(per_e))
    return CostReport(per_t, per_e, t_round, e_round, e_round + params.lam * t_round)
