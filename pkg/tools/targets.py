"""Bootstrapped targets and squared-error losses for both learners.

Decentralized (IQL): ``y_t = rho_t + gamma (1 - terminal_t) q'(argmax_u q(u | tau_{t+1}) | tau_{t+1})``.

Central, computed backwards with ``G_T = 0``::

    G_t = rho_t + gamma (1 - terminal_t) [(1 - lambda) q'^a(u_bar^a | s_{t+1}, u_bar^-a, u^a_t) + lambda G_{t+1}]

where ``u_bar`` is the localmax joint action of the online critic started from the
decentralized greedy actions at ``t + 1``. Timeouts count as terminal.
"""
from __future__ import annotations

import torch

from agents.central import localmax_batch
from tools.networks import AgentNet, CentralNet, unroll_agents
from tools.replay import BatchView


@torch.no_grad()
def iql_targets(batch: BatchView, net: AgentNet, target_net: AgentNet, gamma: float,
                reward_mode: str = "env_only", double_q: bool = True) -> torch.Tensor:
    """Per-step, per-agent targets ``[B, T, n]``."""
    q_target = unroll_agents(target_net, batch.obs, batch.actions)[:, 1:]
    if double_q:
        q_online = unroll_agents(net, batch.obs, batch.actions)[:, 1:]
        best = q_online.argmax(dim=-1, keepdim=True)
        next_value = q_target.gather(-1, best).squeeze(-1)
    else:
        next_value = q_target.max(dim=-1).values
    rho = batch.rho(reward_mode).unsqueeze(-1)
    alive = (1.0 - batch.terminal).unsqueeze(-1)
    return rho + gamma * alive * next_value


@torch.no_grad()
def decentralized_greedy(net: AgentNet, batch: BatchView) -> torch.Tensor:
    """Greedy actions of the online decentralized agents at every decision point ``[B, T+1, n]``."""
    return unroll_agents(net, batch.obs, batch.actions).argmax(dim=-1)


@torch.no_grad()
def lambda_targets(batch: BatchView, net: CentralNet, target_net: CentralNet, greedy: torch.Tensor,
                   gamma: float, td_lambda: float, iterations: int = 1,
                   reward_mode: str = "env_plus_intrinsic", double_q: bool = True) -> torch.Tensor:
    """Q(lambda) targets ``[B, T, n]`` for the central critic; padded steps are zero."""
    next_state = batch.state[:, 1:]
    executed = batch.actions
    selector = net if double_q else target_net
    u_bar = localmax_batch(selector, next_state, greedy[:, 1:], executed, iterations)
    q_next, _ = target_net(next_state, u_bar, executed)
    bootstrap = q_next.gather(-1, u_bar.unsqueeze(-1)).squeeze(-1)

    rho = batch.rho(reward_mode)
    alive = 1.0 - batch.terminal
    B, T, n = bootstrap.shape
    G = torch.zeros_like(bootstrap)
    following = torch.zeros(B, n, dtype=bootstrap.dtype)
    for t in reversed(range(T)):
        mixed = (1.0 - td_lambda) * bootstrap[:, t] + td_lambda * following
        G[:, t] = (rho[:, t].unsqueeze(-1) + gamma * alive[:, t].unsqueeze(-1) * mixed) \
            * batch.mask[:, t].unsqueeze(-1)
        following = G[:, t]
    return G


def _masked_mean(sq_error: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    weights = mask.unsqueeze(-1).expand_as(sq_error)
    return (sq_error * weights).sum() / weights.sum().clamp(min=1.0)


def iql_loss(net: AgentNet, batch: BatchView, targets: torch.Tensor) -> torch.Tensor:
    q = unroll_agents(net, batch.obs, batch.actions)[:, :-1]
    taken = q.gather(-1, batch.actions.unsqueeze(-1)).squeeze(-1)
    return _masked_mean((targets.detach() - taken) ** 2, batch.mask)


def central_loss(net: CentralNet, batch: BatchView, targets: torch.Tensor) -> torch.Tensor:
    q, _ = net(batch.state[:, :-1], batch.actions, batch.prev_actions)
    taken = q.gather(-1, batch.actions.unsqueeze(-1)).squeeze(-1)
    return _masked_mean((targets.detach() - taken) ** 2, batch.mask)
