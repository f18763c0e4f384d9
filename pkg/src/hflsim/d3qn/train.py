"""Training loop (imitation of HFEL labels) and held-out evaluation."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..assigner import AssignmentStrategy, assign_geographic, assign_hfel
from ..allocator import allocate_all
from ..cost import AssignmentPattern, CostParams
from ..errors import ConfigurationError
from ..topology import Topology, generate_topology, resample_devices
from . import network as net
from .agent import Agent, AgentConfig, assign_drl, episode_features, q_values, reward, select_action, train_step
from .replay import ReplayBuffer, Transition

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    n_edges: int = 3
    horizon: int = 20
    episodes: int = 2000
    batch_size: int = 128
    buffer_capacity: int = 50_000
    gamma: float = 0.99
    lr: float = 1e-3
    optimizer: str = "adam"
    grad_clip: float = 10.0
    target_interval: int = 200
    hidden: int = 32
    head_hidden: int = 0
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.3
    greedy_only: bool = False  # pure argmax actions, no exploration
    hfel_budget: int = 100
    normalization: str = "db"
    shuffle_order: bool = False  # visit devices in a seeded random order
    side: float = 1000.0
    topology_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 1 or self.horizon < 1 or self.batch_size < 1:
            raise ConfigurationError("episodes, horizon and batch_size must be >= 1")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ConfigurationError("need 0 <= eps_end <= eps_start <= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def agent_config(self, init_seed: int) -> AgentConfig:
        return AgentConfig(
            n_actions=self.n_edges,
            horizon=self.horizon,
            hidden=self.hidden,
            head_hidden=self.head_hidden,
            gamma=self.gamma,
            lr=self.lr,
            optimizer=self.optimizer,
            grad_clip=self.grad_clip,
            target_interval=self.target_interval,
            normalization=self.normalization,
            seed=init_seed,
        )

    def epsilon(self, episode: int) -> float:
        if self.greedy_only:
            return 0.0
        span = max(1, int(round(self.eps_fraction * self.episodes)))
        frac = min(1.0, episode / span)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


@dataclass
class EpisodeLog:
    episode: int
    ret: float
    loss: float
    epsilon: float
    agreement: float


@dataclass
class TrainResult:
    agent: Agent
    base: Topology
    curve: list[EpisodeLog] = field(default_factory=list)
    wall_time: float = 0.0

    def smoothed_returns(self, window: int = 50) -> np.ndarray:
        r = np.array([e.ret for e in self.curve])
        if len(r) < window:
            return np.array([r.mean()]) if len(r) else r
        return np.convolve(r, np.ones(window) / window, mode="valid")


CURVE_COLUMNS = ["episode", "return", "loss", "epsilon", "agreement"]


def write_curve_csv(path, curve: list[EpisodeLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for e in curve:
            w.writerow([e.episode, repr(float(e.ret)), repr(float(e.loss)), repr(float(e.epsilon)), repr(float(e.agreement))])


def _streams(seed: int):
    env, explore, batch, init = np.random.SeedSequence(seed).spawn(4)
    return (
        np.random.default_rng(env),
        np.random.default_rng(explore),
        np.random.default_rng(batch),
        int(np.random.default_rng(init).integers(2**31)),
    )


def label_episode(topology: Topology, params: CostParams, budget: int) -> AssignmentPattern:
    ids = range(topology.n_devices)
    return assign_hfel(ids, topology, params, AssignmentStrategy("hfel", budget, budget)).pattern


def train_agent(cfg: TrainConfig, params: CostParams | None = None, base: Topology | None = None, progress_every: int = 0) -> TrainResult:
    """Imitation training against HFEL labels.

    Edge servers stay fixed; each episode draws ``horizon`` fresh devices.
    """
    params = params or CostParams()
    base = base or generate_topology(cfg.horizon, cfg.n_edges, cfg.side, cfg.topology_seed)
    if base.n_edges != cfg.n_edges:
        raise ConfigurationError("base topology edge count differs from n_edges")
    env_rng, eps_rng, batch_rng, init_seed = _streams(cfg.seed)
    agent = Agent(cfg.agent_config(init_seed))
    H, M = cfg.horizon, cfg.n_edges
    buffer = ReplayBuffer(cfg.buffer_capacity, H, agent.config.n_features)
    result = TrainResult(agent, base)
    started = time.perf_counter()
    for ep in range(cfg.episodes):
        topo = resample_devices(base, H, env_rng)
        hfel = label_episode(topo, params, cfg.hfel_budget)
        order = list(env_rng.permutation(H)) if cfg.shuffle_order else list(range(H))
        X = episode_features(topo, order, cfg.normalization)
        eps = cfg.epsilon(ep)
        ret, losses, hits = 0.0, [], 0
        for t, n in enumerate(order):
            a = select_action(agent, (X, t), eps, eps_rng) if M > 1 else 0
            r = reward(a, hfel, n)
            ret += r
            hits += r > 0
            buffer.push(Transition(X, t, a, r, t == H - 1))
            if len(buffer) > cfg.batch_size:
                losses.append(train_step(agent, buffer, cfg.batch_size, batch_rng))
            agent.observe_step()
        result.curve.append(EpisodeLog(ep, ret, float(np.mean(losses)) if losses else float("nan"), eps, hits / H))
        if progress_every and (ep + 1) % progress_every == 0:
            recent = result.curve[-progress_every:]
            log.info(
                "episode %d: mean return %.2f, agreement %.3f, eps %.3f, loss %.4f",
                ep + 1,
                np.mean([e.ret for e in recent]),
                np.mean([e.agreement for e in recent]),
                eps,
                np.nanmean([e.loss for e in recent]),
            )
    result.wall_time = time.perf_counter() - started
    return result


@dataclass(frozen=True)
class EvalReport:
    agreement: float
    drl_objective: float
    geo_objective: float
    hfel_objective: float
    hfel300_objective: float
    drl_time: float
    hfel300_time: float
    instances: int

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate_agent(agent: Agent, base: Topology, params: CostParams | None = None, instances: int = 100, seed: int = 12345, hfel_budget: int = 100) -> EvalReport:
    """Agreement with HFEL and objective/latency comparisons on fresh
    device draws over the same edges."""
    params = params or CostParams()
    rng = np.random.default_rng(seed)
    H = agent.config.horizon
    agree = []
    obj = {"drl": [], "geo": [], "hfel": [], "hfel300": []}
    t_drl, t_h300 = [], []
    for _ in range(instances):
        topo = resample_devices(base, H, rng)
        ids = range(H)
        hfel = assign_hfel(ids, topo, params, AssignmentStrategy("hfel", hfel_budget, hfel_budget))
        h300 = assign_hfel(ids, topo, params, AssignmentStrategy("hfel", 300, 300))
        t0 = time.perf_counter()
        drl = assign_drl(agent, ids, topo)
        t_drl.append(time.perf_counter() - t0)
        t_h300.append(h300.wall_time)
        lab_h, lab_d = hfel.pattern.labels(), drl.labels()
        agree.append(np.mean([lab_h[n] == lab_d[n] for n in ids]))
        obj["drl"].append(allocate_all(drl, topo, params)[1].objective)
        obj["geo"].append(allocate_all(assign_geographic(ids, topo), topo, params)[1].objective)
        obj["hfel"].append(hfel.objective)
        obj["hfel300"].append(h300.objective)
    return EvalReport(
        float(np.mean(agree)),
        float(np.mean(obj["drl"])),
        float(np.mean(obj["geo"])),
        float(np.mean(obj["hfel"])),
        float(np.mean(obj["hfel300"])),
        float(np.mean(t_drl)),
        float(np.mean(t_h300)),
        instances,
    )


__all__ = ["TrainConfig", "TrainResult", "EvalReport", "train_agent", "evaluate_agent", "write_curve_csv", "net", "q_values"]
