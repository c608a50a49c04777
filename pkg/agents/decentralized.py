"""Decentralized epsilon-greedy control over the shared recurrent Q-network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from tools.config import ExplorationConfig
from tools.gridworld import N_ACTIONS
from tools.networks import AgentNet, agent_forward


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.05
    horizon: int = 20000

    @classmethod
    def from_config(cls, config: ExplorationConfig) -> "EpsilonSchedule":
        return cls(config.eps_start, config.eps_end, config.eps_horizon)

    def value(self, steps: int) -> float:
        return max(self.end, self.start - (self.start - self.end) * steps / self.horizon)


@dataclass
class AgentRuntime:
    agent_id: int
    hidden: torch.Tensor
    last_action: int | None = None


@dataclass(frozen=True)
class Decision:
    actions: list[int]       # epsilon-greedy choice
    greedy: list[int]        # argmax of the Q-heads
    features: np.ndarray     # [n, hidden] new hidden states, detached
    q: np.ndarray            # [n, |U|]


def epsilon_greedy(greedy: list[int], epsilon: float, rng: np.random.Generator) -> list[int]:
    """Replace each action independently by a uniform one with probability ``epsilon``."""
    out = []
    for g in greedy:
        if epsilon > 0 and rng.random() < epsilon:
            out.append(int(rng.integers(N_ACTIONS)))
        else:
            out.append(g)
    return out


def init_runtimes(net: AgentNet, n_agents: int) -> list[AgentRuntime]:
    return [AgentRuntime(a, net.init_hidden()) for a in range(n_agents)]


@torch.no_grad()
def decentralized_act(net: AgentNet, runtimes: list[AgentRuntime], observations: np.ndarray,
                      epsilon: float, rng: np.random.Generator) -> tuple[Decision, list[AgentRuntime]]:
    """Advance every agent's GRU on its observation and pick epsilon-greedy actions.

    The runtimes' ``last_action`` must hold the executed action of the previous step.
    """
    h = torch.stack([r.hidden for r in runtimes])
    obs = torch.as_tensor(observations, dtype=h.dtype)
    if runtimes[0].last_action is None:
        last = None
    else:
        last = torch.tensor([r.last_action for r in runtimes])
    q, h_next, phi = agent_forward(net, h, obs, last)
    q_np = q.double().numpy()
    greedy = [int(a) for a in np.argmax(q_np, axis=-1)]
    actions = epsilon_greedy(greedy, epsilon, rng)
    updated = [AgentRuntime(r.agent_id, h_next[i], r.last_action) for i, r in enumerate(runtimes)]
    return Decision(actions, greedy, phi.double().numpy(), q_np), updated


class DecentralizedController:
    """Per-episode runtimes of all agents; executed actions are committed back."""

    def __init__(self, net: AgentNet, n_agents: int):
        self.net = net
        self.n_agents = n_agents
        self.runtimes = init_runtimes(net, n_agents)

    def reset(self) -> None:
        self.runtimes = init_runtimes(self.net, self.n_agents)

    def decide(self, observations: np.ndarray, epsilon: float, rng: np.random.Generator) -> Decision:
        decision, self.runtimes = decentralized_act(self.net, self.runtimes, observations, epsilon, rng)
        return decision

    def commit(self, executed: list[int]) -> None:
        for r, a in zip(self.runtimes, executed):
            r.last_action = int(a)
