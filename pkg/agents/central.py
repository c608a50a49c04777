"""Central controller: iterative local maximisation over the joint critic."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch

from agents.decentralized import epsilon_greedy

# critic(state [..., S], joint [..., n], prev_joint [..., n]) -> (q [..., n, |U|], phi)
Critic = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], tuple[torch.Tensor, torch.Tensor]]


def localmax_batch(critic: Critic, state: torch.Tensor, init_joint: torch.Tensor, prev_joint: torch.Tensor,
                   iterations: int = 1) -> torch.Tensor:
    """Coordinate ascent on the joint action, vectorised over leading dimensions.

    Each sweep visits agents ``0..n-1``; agent ``a`` takes the argmax of its own heads
    given the current actions of the others, and later agents see the replacement.
    Ties go to the lowest action index.
    """
    joint = init_joint.clone().long()
    n = joint.shape[-1]
    with torch.no_grad():
        for _ in range(iterations):
            for a in range(n):
                q, _ = critic(state, joint, prev_joint)
                joint[..., a] = _first_argmax(q[..., a, :])
    return joint


def _first_argmax(q: torch.Tensor) -> torch.Tensor:
    # torch.argmax does not document a tie rule on every backend
    k = q.shape[-1]
    best = q.max(dim=-1, keepdim=True).values
    rank = torch.arange(k, 0, -1, device=q.device)
    return ((q == best).to(torch.int64) * rank).argmax(dim=-1)


def localmax(critic: Critic, state_feats: np.ndarray | torch.Tensor, init_joint: Sequence[int],
             prev_joint: Sequence[int], iterations: int = 1, dtype: torch.dtype = torch.float32) -> list[int]:
    state = torch.as_tensor(np.asarray(state_feats), dtype=dtype)
    joint = localmax_batch(critic, state, torch.tensor(list(init_joint)), torch.tensor(list(prev_joint)),
                           iterations)
    return [int(a) for a in joint]


def central_act(critic: Critic, state_feats: np.ndarray, decentralized_greedy: Sequence[int],
                prev_joint: Sequence[int], epsilon: float, rng: np.random.Generator, iterations: int = 1,
                dtype: torch.dtype = torch.float32) -> list[int]:
    """localmax from the decentralized greedy actions, then an epsilon-greedy overlay."""
    greedy = localmax(critic, state_feats, decentralized_greedy, prev_joint, iterations, dtype)
    return epsilon_greedy(greedy, epsilon, rng)
