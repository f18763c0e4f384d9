"""Dueling double DQN that imitates HFEL device assignment."""

from .agent import (
    Agent,
    AgentConfig,
    assign_drl,
    episode_features,
    q_values,
    reward,
    select_action,
    td_targets,
    train_step,
)
from .replay import ReplayBuffer, Transition

__all__ = [
    "Agent",
    "AgentConfig",
    "ReplayBuffer",
    "Transition",
    "assign_drl",
    "episode_features",
    "q_values",
    "reward",
    "select_action",
    "td_targets",
    "train_step",
]
