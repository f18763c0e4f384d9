"""D3QN agent: online and target dueling networks, action selection,
TD targets and the gradient step."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ..cost import AssignmentPattern
from ..errors import ConfigurationError, ContractViolation
from ..topology import Topology
from . import network as net
from .replay import Batch, ReplayBuffer

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AgentConfig:
    n_actions: int
    horizon: int
    hidden: int = 32
    head_hidden: int = 0
    gamma: float = 0.99
    lr: float = 1e-3
    optimizer: str = "adam"
    grad_clip: float = 10.0
    target_interval: int = 200
    normalization: str = "db"  # gains min-max scaled in dB ("db") or linear ("linear")
    seed: int = 0

    @property
    def n_features(self) -> int:
        return self.n_actions + 3

    def __post_init__(self):
        if self.n_actions < 1 or self.horizon < 1 or self.hidden < 1:
            raise ConfigurationError("n_actions, horizon and hidden must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in [0, 1]")
        if self.normalization not in ("db", "linear"):
            raise ConfigurationError(f"unknown normalization {self.normalization!r}")


class Agent:
    def __init__(self, config: AgentConfig, params: net.Params | None = None):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.online = params or net.init_params(rng, config.n_features, config.n_actions, config.hidden, config.head_hidden)
        self.target = {k: v.copy() for k, v in self.online.items()}
        self.optimizer = net.make_optimizer(config.optimizer, config.lr)
        self.steps = 0  # environment steps, drives target syncs
        self.updates = 0  # gradient steps

    def sync_target(self) -> None:
        self.target = {k: v.copy() for k, v in self.online.items()}

    def observe_step(self) -> bool:
        """Count one environment step; sync the target every J steps."""
        self.steps += 1
        if self.steps % self.config.target_interval == 0:
            self.sync_target()
            return True
        return False

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        arrays = {"format_version": np.array(CHECKPOINT_VERSION), "config": np.array(json.dumps(asdict(self.config)))}
        arrays["counters"] = np.array([self.steps, self.updates])
        for k, v in self.online.items():
            arrays[f"online.{k}"] = v
        for k, v in self.target.items():
            arrays[f"target.{k}"] = v
        for k, v in self.optimizer.state().items():
            arrays[f"opt.{k}"] = v
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "Agent":
        with np.load(path, allow_pickle=False) as z:
            version = int(z["format_version"])
            if version != CHECKPOINT_VERSION:
                raise ConfigurationError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
            cfg = AgentConfig(**json.loads(str(z["config"])))
            online = {k[7:]: z[k].copy() for k in z.files if k.startswith("online.")}
            agent = cls(cfg, online)
            agent.target = {k[7:]: z[k].copy() for k in z.files if k.startswith("target.")}
            agent.optimizer.load({k[4:]: z[k] for k in z.files if k.startswith("opt.")})
            agent.steps, agent.updates = (int(x) for x in z["counters"])
        for k, v in agent.online.items():
            if agent.target[k].shape != v.shape:
                raise ConfigurationError(f"{path}: target/online shape mismatch for {k}")
        return agent


# -- features -----------------------------------------------------------------


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def episode_features(topology: Topology, devices: Iterable[int], normalization: str = "db") -> np.ndarray:
    """Rows ``(g^1..g^M, u, D, p)`` per device, min-max scaled over the
    episode.  The gain block shares one scale so gains stay comparable
    across edges."""
    ids = list(devices)
    g = topology.channel.device_edge_gain[ids]
    if normalization == "db":
        g = 10.0 * np.log10(g)
    devs = [topology.devices[n] for n in ids]
    cols = [_minmax(g)]
    for attr in ("u", "num_samples", "tx_power"):
        cols.append(_minmax(np.array([float(getattr(d, attr)) for d in devs]))[:, None])
    return np.concatenate(cols, axis=1)


# -- policy -------------------------------------------------------------------


def q_values(agent: Agent, state: tuple[np.ndarray, int]) -> np.ndarray:
    X, t = state
    Q, _, _, _ = net.forward(agent.online, X[None], np.array([t]))
    return Q[0]


def greedy(Q: np.ndarray) -> int:
    return int(np.argmax(Q))  # first maximum, i.e. lowest edge id on ties


def select_action(agent: Agent, state, epsilon: float, rng: np.random.Generator, Q: np.ndarray | None = None) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ContractViolation(f"epsilon must lie in [0, 1], got {epsilon}")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(agent.config.n_actions))
    return greedy(q_values(agent, state) if Q is None else Q)


def reward(action: int, hfel_pattern: AssignmentPattern, device: int) -> float:
    """+1 if HFEL put ``device`` on edge ``action``, else -1."""
    if device not in hfel_pattern.members:
        raise ContractViolation(f"device {device} missing from the HFEL pattern")
    return 1.0 if device in hfel_pattern.groups.get(action, frozenset()) else -1.0


def td_targets(agent: Agent, batch: Batch) -> np.ndarray:
    """r for terminal transitions, else r + gamma * max_a' Q_target(s', a')."""
    y = batch.reward.astype(float).copy()
    live = ~batch.done
    if agent.config.gamma > 0 and live.any():
        Qn, _, _, _ = net.forward(agent.target, batch.features[live], batch.t[live] + 1)
        y[live] += agent.config.gamma * Qn.max(axis=1)
    return y


def loss_and_grads(params: net.Params, batch: Batch, targets: np.ndarray):
    Q, _, _, cache = net.forward(params, batch.features, batch.t)
    rows = np.arange(len(targets))
    err = Q[rows, batch.action] - targets
    loss = float(np.mean(err * err))
    dQ = np.zeros_like(Q)
    dQ[rows, batch.action] = 2.0 * err / len(targets)
    return loss, net.backward(params, cache, dQ)


def train_step(agent: Agent, buffer: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> float:
    """One minibatch gradient step on the mean squared TD error."""
    if len(buffer) <= batch_size:
        raise ContractViolation(f"replay holds {len(buffer)} transitions; need more than {batch_size}")
    batch = buffer.sample(rng, batch_size)
    targets = td_targets(agent, batch)
    loss, grads = loss_and_grads(agent.online, batch, targets)
    net.clip_grads(grads, agent.config.grad_clip)
    agent.optimizer.step(agent.online, grads)
    agent.updates += 1
    return loss


def assign_drl(agent: Agent, schedule: Iterable[int], topology: Topology) -> AssignmentPattern:
    """Greedy rollout over the scheduled devices in ascending id order."""
    ids = sorted(schedule)
    cfg = agent.config
    if len(ids) != cfg.horizon:
        raise ConfigurationError(f"agent trained for H={cfg.horizon}, schedule has {len(ids)} devices")
    if topology.n_edges != cfg.n_actions:
        raise ConfigurationError(f"agent trained for M={cfg.n_actions}, topology has {topology.n_edges} edges")
    X = episode_features(topology, ids, cfg.normalization)
    Q = net.forward_all(agent.online, X)
    labels = {n: greedy(Q[t]) for t, n in enumerate(ids)}
    return AssignmentPattern.from_labels(labels, cfg.n_actions)
