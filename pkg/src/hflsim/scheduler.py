"""Device clustering and per-round scheduling (random, VKC, IKC).

Devices are clustered by the weights of a model each one trains locally
from a shared starting point; devices with similar label skew end up with
similar weights.  The K-center policies then pick ``h`` devices from each
cluster per round.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .allocator import edge_request, solve_edge
from .cost import CostParams, cloud_cost
from .errors import ConfigurationError, ContractViolation
from .topology import Topology

POLICIES = ("random", "vkc", "ikc")


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[frozenset[int], ...]
    labels: dict[int, int]

    @classmethod
    def from_labels(cls, labels: Mapping[int, int], k: int | None = None) -> "ClusterSet":
        k = (max(labels.values()) + 1) if k is None else k
        groups: list[set[int]] = [set() for _ in range(k)]
        for n, c in labels.items():
            groups[c].add(n)
        return cls(tuple(frozenset(g) for g in groups), dict(labels))

    @property
    def k(self) -> int:
        return len(self.clusters)

    @property
    def devices(self) -> frozenset[int]:
        return frozenset(self.labels)


@dataclass(frozen=True)
class Schedule:
    round: int
    members: frozenset[int]
    policy: str = ""


# -- k-means ------------------------------------------------------------------


def _sq_dists(X, C):
    return np.maximum((X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :], 0.0)


def _kmeans_pp(X, k, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = _sq_dists(X, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        # all points coincide with chosen centers: pick uniformly
        i = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(X[i])
        d2 = np.minimum(d2, _sq_dists(X, X[i][None, :])[:, 0])
    return np.array(centers)


def kmeans(X: np.ndarray, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300, tol: float = 1e-6):
    """Lloyd's algorithm with k-means++ seeding; best of ``n_init`` restarts.

    Returns (labels, centers, inertia).  Converges when no center moves by
    more than ``tol``.
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    if not 1 <= k <= n:
        raise ConfigurationError(f"k-means needs 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        C = _kmeans_pp(X, k, rng)
        for _it in range(max_iter):
            d = _sq_dists(X, C)
            lab = np.argmin(d, axis=1)
            newC = C.copy()
            for j in range(k):
                pts = X[lab == j]
                if len(pts):
                    newC[j] = pts.mean(0)
                else:
                    # re-seed an empty cluster at the worst-served point
                    far = int(np.argmax(d[np.arange(n), lab]))
                    newC[j] = X[far]
                    lab[far] = j
            shift = np.sqrt(((newC - C) ** 2).sum(1)).max()
            C = newC
            if shift < tol:
                break
        lab = np.argmin(_sq_dists(X, C), axis=1)
        inertia = float(_sq_dists(X, C)[np.arange(n), lab].sum())
        if best is None or inertia < best[2] - 1e-12 * max(1.0, abs(best[2])):
            best = (lab, C, inertia)
    return best


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters in order of first appearance."""
    mapping: dict[int, int] = {}
    out = np.empty_like(labels)
    for i, c in enumerate(labels):
        out[i] = mapping.setdefault(int(c), len(mapping))
    return out


def cluster_devices(
    devices: Topology | Sequence[int],
    trainer: Callable[[int], np.ndarray],
    K: int,
    seed: int = 0,
    n_init: int = 10,
) -> ClusterSet:
    """Cluster devices by the weight vector ``trainer(device_id)`` returns."""
    ids = list(range(devices.n_devices)) if isinstance(devices, Topology) else sorted(devices)
    if K < 1 or K > len(ids):
        raise ConfigurationError(f"cluster count K={K} must lie in [1, {len(ids)}]")
    W = np.stack([np.asarray(trainer(n), dtype=float).ravel() for n in ids])
    lab, _, _ = kmeans(W, K, seed=seed, n_init=n_init)
    lab = _canonical(lab)
    return ClusterSet.from_labels({n: int(c) for n, c in zip(ids, lab)}, K)


def weight_trainer(learner, partition, init: np.ndarray, L: int, beta: float) -> Callable[[int], np.ndarray]:
    """Trainer closure for ``cluster_devices``: L local steps from ``init``."""
    from .fl import local_train

    return lambda n: local_train(init, partition.datasets[n], L, beta, learner)


# -- ARI ----------------------------------------------------------------------


def pair_counts(predicted: Mapping[int, int], truth: Mapping[int, int]) -> tuple[int, int, int, int]:
    """(s00, s01, s10, s11): pairs split in both, together only in truth,
    together only in predicted, together in both."""
    if set(predicted) != set(truth):
        raise ContractViolation("labelings cover different device sets")
    ids = sorted(predicted)
    p = np.array([predicted[i] for i in ids])
    t = np.array([truth[i] for i in ids])
    _, p = np.unique(p, return_inverse=True)
    _, t = np.unique(t, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)

    def c2(x):
        return int((x * (x - 1) // 2).sum())

    n = len(ids)
    s11 = c2(table)
    same_p = c2(table.sum(1))
    same_t = c2(table.sum(0))
    s10 = same_p - s11
    s01 = same_t - s11
    s00 = n * (n - 1) // 2 - s11 - s10 - s01
    return s00, s01, s10, s11


def adjusted_rand_index(predicted: ClusterSet | Mapping[int, int], truth: ClusterSet | Mapping[int, int]) -> float:
    """Pair-counting ARI; 1.0 when both labelings agree on every pair."""
    pl = predicted.labels if isinstance(predicted, ClusterSet) else predicted
    tl = truth.labels if isinstance(truth, ClusterSet) else truth
    s00, s01, s10, s11 = pair_counts(pl, tl)
    den = (s00 + s01) * (s01 + s11) + (s00 + s10) * (s10 + s11)
    if den == 0:
        # only possible when every pair is classified the same way by both
        return 1.0
    return 2.0 * (s00 * s11 - s01 * s10) / den


# -- scheduling ---------------------------------------------------------------


@dataclass
class SchedulerState:
    policy: str
    H: int
    h: int = 0
    K: int = 0
    rng_seed: int = 0
    working: list[set[int]] = field(default_factory=list)
    record: list[set[int]] = field(default_factory=list)
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigurationError(f"unknown scheduling policy {self.policy!r}")
        if self.policy != "random" and self.H != self.K * self.h:
            raise ConfigurationError(f"H={self.H} must equal K*h={self.K}*{self.h} for {self.policy}")
        if self.rng is None:
            self.rng = np.random.default_rng(self.rng_seed)

    @classmethod
    def create(cls, policy: str, clusters: ClusterSet | None, H: int, h: int = 0, seed: int = 0) -> "SchedulerState":
        K = clusters.k if clusters is not None else 0
        st = cls(policy, H, h, K, seed)
        if policy == "ikc":
            st.working = [set(c) for c in clusters.clusters]
            st.record = [set() for _ in clusters.clusters]
        return st


def _pick(rng, pool: Iterable[int], k: int) -> set[int]:
    pool = sorted(pool)
    if k >= len(pool):
        return set(pool)
    return {pool[i] for i in rng.choice(len(pool), size=k, replace=False)}


def _ikc_cluster(state: SchedulerState, k: int) -> set[int]:
    h, rng = state.h, state.rng
    C, G = state.working[k], state.record[k]
    if len(C) >= h:
        picks = _pick(rng, C, h)
        C -= picks
        G |= picks
        return picks
    if len(C) + len(G) >= h:
        from_g = _pick(rng, G, h - len(C))
        picks = C | from_g
        state.working[k] = G - from_g
        state.record[k] = set(picks)
        return picks
    # cluster smaller than h: everyone, every round
    return set(C)


def schedule_round(state: SchedulerState, clusters: ClusterSet | None, all_devices: Sequence[int], round: int) -> Schedule:
    everyone = sorted(all_devices)
    H = min(state.H, len(everyone))
    if state.policy == "random":
        return Schedule(round, frozenset(_pick(state.rng, everyone, H)), "random")
    if clusters is None or clusters.k != state.K:
        raise ContractViolation("scheduler state and cluster set disagree")
    chosen: set[int] = set()
    for k, members in enumerate(clusters.clusters):
        if state.policy == "vkc":
            chosen |= _pick(state.rng, members, state.h)
        else:
            chosen |= _ikc_cluster(state, k)
    if len(chosen) < H:
        chosen |= _pick(state.rng, set(everyone) - chosen, H - len(chosen))
    return Schedule(round, frozenset(chosen), state.policy)


def write_schedule_csv(path, schedules: Iterable[Schedule]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "policy", "members"])
        for s in schedules:
            w.writerow([s.round, s.policy, " ".join(str(n) for n in sorted(s.members))])


# -- clustering-phase cost ----------------------------------------------------


@dataclass(frozen=True)
class ClusteringCost:
    bytes: float
    energy: float
    time: float


def nearest_edge(topology: Topology) -> np.ndarray:
    """Nearest edge per device; ties go to the lower edge id."""
    return np.argmin(topology.distances(), axis=1)


def clustering_cost(topology: Topology, params: CostParams, model_size_bits: float, full_model_bits: float | None = None) -> ClusteringCost:
    """Cost of one clustering pass: every device trains the auxiliary model
    for L local steps, uploads it to its nearest edge, and each edge relays
    its members' models to the cloud.

    Compute load scales with ``model_size_bits / full_model_bits`` (a smaller
    model needs proportionally fewer cycles per sample).
    """
    full = params.model_size if full_model_bits is None else full_model_bits
    ratio = model_size_bits / full
    p = params.with_(model_size=model_size_bits, edge_iters=1)
    devices = [replace(d, u=d.u * ratio) for d in topology.devices]
    topo = replace(topology, devices=tuple(devices))
    near = nearest_edge(topology)
    energy, worst = 0.0, 0.0
    for m in range(topology.n_edges):
        members = np.flatnonzero(near == m)
        if len(members) == 0:
            continue
        res = solve_edge(edge_request(topo, m, members, p))
        t_c, e_c = cloud_cost(topology.edges[m], p, topology.channel)
        energy += res.energy - e_c + len(members) * e_c
        worst = max(worst, res.time - t_c + len(members) * t_c)
    n_bytes = 2 * topology.n_devices * model_size_bits / 8
    return ClusteringCost(n_bytes, energy, worst)
