from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from tools.gridworld import Action

DECENTRALIZED = "decentralized"
CENTRAL = "central"


@dataclass
class EpisodeRecord:
    """One episode of ``T`` transitions.

    ``obs`` and ``state`` hold ``T + 1`` decision points (the last one follows the final
    transition); the per-transition arrays hold ``T`` entries.
    """

    obs: np.ndarray          # [T+1, n, obs_dim]
    state: np.ndarray        # [T+1, S]
    actions: np.ndarray      # [T, n]
    rewards: np.ndarray      # [T]
    bonus: np.ndarray        # [T]
    terminated: np.ndarray   # [T] bool
    truncated: np.ndarray    # [T] bool
    controller: str = DECENTRALIZED
    clamps: int = 0

    def __post_init__(self) -> None:
        T = len(self.actions)
        if len(self.obs) != T + 1 or len(self.state) != T + 1:
            raise ValueError("obs/state need one more entry than actions")
        flags = self.terminated | self.truncated
        if (self.terminated & self.truncated).any():
            raise ValueError("a step cannot be both terminated and truncated")
        if T and flags[:-1].any():
            raise ValueError("termination flags may only be set on the final step")
        if (self.bonus < 0).any():
            raise ValueError("intrinsic bonus must be non-negative")
        if self.controller not in (DECENTRALIZED, CENTRAL):
            raise ValueError(f"unknown controller tag {self.controller!r}")

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


class ReplayBuffer:
    """FIFO store of the most recent episodes; uniform sampling with replacement."""

    def __init__(self, capacity: int = 200):
        self.capacity = capacity
        self._episodes: deque[EpisodeRecord] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._episodes)

    def __getitem__(self, index: int) -> EpisodeRecord:
        return self._episodes[index]

    def append(self, episode: EpisodeRecord) -> None:
        self._episodes.append(episode)

    def ready(self, batch_size: int) -> bool:
        return len(self._episodes) >= batch_size

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[EpisodeRecord]:
        idx = rng.integers(len(self._episodes), size=batch_size)
        return [self._episodes[i] for i in idx]


@dataclass
class BatchView:
    """Episodes padded to the longest one; ``mask`` marks real transitions."""

    obs: torch.Tensor         # [B, T+1, n, obs_dim]
    state: torch.Tensor       # [B, T+1, S]
    actions: torch.Tensor     # [B, T, n] long
    rewards: torch.Tensor     # [B, T]
    bonus: torch.Tensor       # [B, T]
    terminal: torch.Tensor    # [B, T]  terminated or truncated
    mask: torch.Tensor        # [B, T]

    @property
    def prev_actions(self) -> torch.Tensor:
        """Action executed one step earlier, ``STAY`` before the first step."""
        stay = torch.full_like(self.actions[:, :1], int(Action.STAY))
        return torch.cat([stay, self.actions[:, :-1]], dim=1)

    def rho(self, reward_mode: str) -> torch.Tensor:
        if reward_mode == "env_plus_intrinsic":
            return self.rewards + self.bonus
        if reward_mode == "env_only":
            return self.rewards
        raise ValueError(f"unknown reward mode {reward_mode!r}")


def make_batch(episodes: Sequence[EpisodeRecord], dtype: torch.dtype = torch.float32,
               pad_to: int | None = None) -> BatchView:
    T = max(max(e.length for e in episodes), pad_to or 0)
    B = len(episodes)
    n, obs_dim = episodes[0].obs.shape[1:]
    S = episodes[0].state.shape[1]

    obs = np.zeros((B, T + 1, n, obs_dim), dtype=np.float64)
    state = np.zeros((B, T + 1, S), dtype=np.float64)
    actions = np.full((B, T, n), int(Action.STAY), dtype=np.int64)
    rewards = np.zeros((B, T))
    bonus = np.zeros((B, T))
    terminal = np.zeros((B, T))
    mask = np.zeros((B, T))
    for i, e in enumerate(episodes):
        L = e.length
        obs[i, :L + 1] = e.obs
        state[i, :L + 1] = e.state
        actions[i, :L] = e.actions
        rewards[i, :L] = e.rewards
        bonus[i, :L] = e.bonus
        terminal[i, :L] = e.terminated | e.truncated
        mask[i, :L] = 1.0

    def t(a: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(a, dtype=dtype)

    return BatchView(obs=t(obs), state=t(state), actions=torch.as_tensor(actions), rewards=t(rewards),
                     bonus=t(bonus), terminal=t(terminal), mask=t(mask))
