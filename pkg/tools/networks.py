"""Value networks, gradients, RMSprop and checkpoints.

Decentralized agents: dense(ReLU) -> GRU -> dense heads, parameters shared by all
agents, identity given as a one-hot input. Central critic: three dense layers, ReLU on
the first two, one head per own action, conditioned on the global state, the other
agents' actions, the agent's previous action and its id.

The GRU follows ``h' = z * h + (1 - z) * c`` with ``c = tanh(Wc x + Uc (r * h) + bc)``.
"""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Callable, Iterable, Mapping

import torch
from torch import nn

from tools.gridworld import N_ACTIONS, UsageError

logger = logging.getLogger(__name__)


def _init_linear(layer: nn.Linear, generator: torch.Generator | None) -> None:
    bound = 1.0 / math.sqrt(layer.in_features)
    with torch.no_grad():
        nn.init.uniform_(layer.weight, -bound, bound, generator=generator)
        if layer.bias is not None:
            layer.bias.zero_()


class GRUCell(nn.Module):
    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w_z = nn.Linear(input_dim, hidden_dim)
        self.u_z = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.w_r = nn.Linear(input_dim, hidden_dim)
        self.u_r = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.w_c = nn.Linear(input_dim, hidden_dim)
        self.u_c = nn.Linear(hidden_dim, hidden_dim, bias=False)
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        for layer in (self.w_z, self.u_z, self.w_r, self.u_r, self.w_c, self.u_c):
            _init_linear(layer, generator)

    def forward(self, h: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        if h.shape[-1] != self.hidden_dim or x.shape[-1] != self.input_dim:
            raise UsageError(
                f"gru_step expects h[..., {self.hidden_dim}] and x[..., {self.input_dim}], "
                f"got {tuple(h.shape)} and {tuple(x.shape)}"
            )
        z = torch.sigmoid(self.w_z(x) + self.u_z(h))
        r = torch.sigmoid(self.w_r(x) + self.u_r(h))
        c = torch.tanh(self.w_c(x) + self.u_c(r * h))
        return z * h + (1.0 - z) * c


def gru_step(cell: GRUCell, h: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    return cell(h, x)


class AgentNet(nn.Module):
    """Recurrent Q-network shared by all decentralized agents."""

    def __init__(self, obs_dim: int, n_agents: int, hidden_dim: int = 64, n_actions: int = N_ACTIONS):
        super().__init__()
        self.obs_dim = obs_dim
        self.n_agents = n_agents
        self.n_actions = n_actions
        self.hidden_dim = hidden_dim
        self.input_dim = obs_dim + n_actions + n_agents
        self.fc_in = nn.Linear(self.input_dim, hidden_dim)
        self.gru = GRUCell(hidden_dim, hidden_dim)
        self.fc_out = nn.Linear(hidden_dim, n_actions)
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        _init_linear(self.fc_in, generator)
        self.gru.reset_parameters(generator)
        _init_linear(self.fc_out, generator)

    def init_hidden(self, *batch: int) -> torch.Tensor:
        p = self.fc_out.weight
        return torch.zeros(*batch, self.hidden_dim, dtype=p.dtype, device=p.device)

    def forward(self, inputs: torch.Tensor, h: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns ``(q, h')``; ``h'`` doubles as the feature vector phi."""
        x = torch.relu(self.fc_in(inputs))
        h_next = self.gru(h, x)
        return self.fc_out(h_next), h_next


class CentralNet(nn.Module):
    """Agent-specific joint critic ``q^a(u^a | s, u^-a, u^a_prev)`` with shared weights."""

    def __init__(self, state_dim: int, n_agents: int, hidden_dim: int = 128, n_actions: int = N_ACTIONS):
        super().__init__()
        self.state_dim = state_dim
        self.n_agents = n_agents
        self.n_actions = n_actions
        self.hidden_dim = hidden_dim
        self.input_dim = state_dim + (n_agents - 1) * n_actions + n_actions + n_agents
        self.fc1 = nn.Linear(self.input_dim, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, hidden_dim)
        self.fc_out = nn.Linear(hidden_dim, n_actions)
        others = [[b for b in range(n_agents) if b != a] for a in range(n_agents)]
        self.register_buffer("others", torch.tensor(others, dtype=torch.long).reshape(n_agents, n_agents - 1),
                             persistent=False)
        self.reset_parameters()

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        for layer in (self.fc1, self.fc2, self.fc_out):
            _init_linear(layer, generator)

    def build_inputs(self, state: torch.Tensor, joint: torch.Tensor, prev_joint: torch.Tensor) -> torch.Tensor:
        """Per-agent inputs ``[..., n, input_dim]`` from ``state [..., S]`` and joint actions ``[..., n]``."""
        dtype = self.fc1.weight.dtype
        n, k = self.n_agents, self.n_actions
        lead = state.shape[:-1]
        acts = nn.functional.one_hot(joint.long(), k).to(dtype)
        others = acts[..., self.others, :].reshape(*lead, n, (n - 1) * k)
        prev = nn.functional.one_hot(prev_joint.long(), k).to(dtype)
        ids = torch.eye(n, dtype=dtype, device=state.device).expand(*lead, n, n)
        states = state.to(dtype).unsqueeze(-2).expand(*lead, n, state.shape[-1])
        return torch.cat([states, others, prev, ids], dim=-1)

    def forward(self, state: torch.Tensor, joint: torch.Tensor, prev_joint: torch.Tensor
                ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns ``(q [..., n, |U|], phi [..., n, hidden])``."""
        x = self.build_inputs(state, joint, prev_joint)
        phi = torch.relu(self.fc2(torch.relu(self.fc1(x))))
        return self.fc_out(phi), phi


def agent_inputs(obs: torch.Tensor, last_action: torch.Tensor | None, n_actions: int = N_ACTIONS) -> torch.Tensor:
    """Concatenate observation, one-hot last action and one-hot id for ``obs [..., n, obs_dim]``.

    ``last_action`` is ``[..., n]`` or ``None`` (start of episode: zero vector).
    """
    n = obs.shape[-2]
    lead = obs.shape[:-2]
    if last_action is None:
        last = torch.zeros(*lead, n, n_actions, dtype=obs.dtype, device=obs.device)
    else:
        last = nn.functional.one_hot(last_action.long(), n_actions).to(obs.dtype)
    ids = torch.eye(n, dtype=obs.dtype, device=obs.device).expand(*lead, n, n)
    return torch.cat([obs, last, ids], dim=-1)


def agent_forward(net: AgentNet, h: torch.Tensor, obs: torch.Tensor, last_action: torch.Tensor | None
                  ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """One decision step for all agents: ``(q, h', phi)`` with ``phi = h'``."""
    q, h_next = net(agent_inputs(obs.to(h.dtype), last_action, net.n_actions), h)
    return q, h_next, h_next


def central_forward(net: CentralNet, state: torch.Tensor, joint: torch.Tensor, prev_joint: torch.Tensor
                    ) -> tuple[torch.Tensor, torch.Tensor]:
    return net(state, joint, prev_joint)


def unroll_agents(net: AgentNet, obs: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
    """Q-values for every decision point of padded episodes.

    ``obs [B, T+1, n, obs_dim]``, ``actions [B, T, n]`` -> ``q [B, T+1, n, |U|]``. Hidden
    states start from zero; gradients flow through time.
    """
    batch, steps, n = obs.shape[:3]
    h = net.init_hidden(batch, n)
    qs = []
    for t in range(steps):
        last = actions[:, t - 1] if t > 0 else None
        q, h, _ = agent_forward(net, h, obs[:, t], last)
        qs.append(q)
    return torch.stack(qs, dim=1)


# Gradients -------------------------------------------------------------------

def backward(loss: torch.Tensor, params: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of ``loss`` for every named parameter (zeros when unused)."""
    names = list(params)
    grads = torch.autograd.grad(loss, [params[k] for k in names], allow_unused=True, retain_graph=True)
    return {k: torch.zeros_like(params[k]) if g is None else g for k, g in zip(names, grads)}


def grad_check(loss_fn: Callable[[], torch.Tensor], params: Mapping[str, torch.Tensor],
               eps: float = 1e-5, samples: int | None = None, generator: torch.Generator | None = None) -> float:
    """Max relative error between autograd and central finite differences.

    ``samples`` limits the number of checked entries per tensor (all when ``None``).
    Use 64-bit parameters for meaningful results.
    """
    analytic = backward(loss_fn(), params)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.view(-1)
        if samples is None or samples >= flat.numel():
            indices = range(flat.numel())
        else:
            indices = torch.randperm(flat.numel(), generator=generator)[:samples].tolist()
        grad = analytic[name].reshape(-1)
        for i in indices:
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + eps
                plus = loss_fn().item()
                flat[i] = original - eps
                minus = loss_fn().item()
                flat[i] = original
            numeric = (plus - minus) / (2 * eps)
            a = grad[i].item()
            worst = max(worst, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
    return worst


# Optimisation ----------------------------------------------------------------

def make_rmsprop(params: Iterable[torch.Tensor], lr: float, alpha: float = 0.99, eps: float = 1e-5
                 ) -> torch.optim.RMSprop:
    """``v <- alpha v + (1 - alpha) g^2``; ``p <- p - lr g / (sqrt(v) + eps)``."""
    return torch.optim.RMSprop(params, lr=lr, alpha=alpha, eps=eps)


def rmsprop_update(optimizer: torch.optim.Optimizer, params: Mapping[str, torch.Tensor],
                   grads: Mapping[str, torch.Tensor]) -> None:
    for name, p in params.items():
        p.grad = grads[name].detach().clone()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def copy_params(source: nn.Module, target: nn.Module) -> None:
    target.load_state_dict(source.state_dict())


# Checkpoints -----------------------------------------------------------------

def save_checkpoint(path: str | Path, modules: Mapping[str, nn.Module], meta: Mapping) -> Path:
    """``torch.save`` the named state dicts plus ``meta``; a JSON sidecar lists tensor shapes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"meta": dict(meta), **{name: m.state_dict() for name, m in modules.items()}}
    torch.save(payload, path)
    shapes = {name: {k: list(v.shape) for k, v in m.state_dict().items()} for name, m in modules.items()}
    path.with_suffix(".json").write_text(json.dumps({"meta": dict(meta), "tensors": shapes}, indent=2))
    logger.info("Saved checkpoint '%s'", path)
    return path


def load_checkpoint(path: str | Path) -> dict:
    return torch.load(Path(path), map_location="cpu", weights_only=False)
