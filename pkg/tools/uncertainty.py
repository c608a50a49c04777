"""Linear-regression variance as a collaborative intrinsic reward.

Keeps ``B = C_t^-1`` for the decayed correlation matrix
``C_t = (1 - alpha) C_{t-1} + sum_a phi_a phi_a^T`` with ``C_0 = reg * I``.
Decay scales ``B`` by ``1 / (1 - alpha)``; each feature is folded in with a
Sherman-Morrison rank-one step. The bonus is
``sigma * max(0, max_a sqrt(phi_a^T B phi_a) - b)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from tools.config import BIAS_MODES, ConfigError, IntrinsicConfig
from tools.gridworld import UsageError

logger = logging.getLogger(__name__)


@dataclass
class EstimatorState:
    dim: int
    inv_C: np.ndarray = field(repr=False)
    sigma: float
    alpha: float
    bias: float
    reg: float
    bias_mode: str = "constant"
    clamp_count: int = 0
    updates: int = 0


def init_estimator(dim: int, sigma: float = 1.0, alpha: float = 0.0002, bias: float = 0.01,
                   reg: float = 1e-4, bias_mode: str = "constant") -> EstimatorState:
    if reg <= 0:
        raise ConfigError(f"intrinsic.reg: must be > 0, got {reg}")
    if bias_mode not in BIAS_MODES:
        raise ConfigError(f"intrinsic.bias_mode: must be one of {BIAS_MODES}")
    return EstimatorState(dim=dim, inv_C=np.eye(dim) / reg, sigma=sigma, alpha=alpha, bias=bias,
                          reg=reg, bias_mode=bias_mode)


def _as_matrix(state: EstimatorState, features: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    phi = np.asarray(features, dtype=np.float64)
    if phi.ndim == 1:
        phi = phi[None, :]
    if phi.ndim != 2 or phi.shape[1] != state.dim:
        raise UsageError(f"features must have length {state.dim}, got shape {phi.shape}")
    return phi


def update(state: EstimatorState, features: Sequence[np.ndarray] | np.ndarray) -> EstimatorState:
    """Decay ``C`` once and add one rank-one term per agent feature (in place)."""
    phi = _as_matrix(state, features) if len(features) else np.zeros((0, state.dim))
    inv = state.inv_C / (1.0 - state.alpha)
    for f in phi:
        bf = inv @ f
        inv -= np.outer(bf, bf) / (1.0 + f @ bf)
    state.inv_C = 0.5 * (inv + inv.T)
    state.updates += 1
    return state


def uncertainties(state: EstimatorState, features: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """``sqrt(phi^T B phi)`` per feature; negative radicands are clamped to 0 and counted."""
    phi = _as_matrix(state, features)
    radicand = np.einsum("ai,ij,aj->a", phi, state.inv_C, phi)
    negative = radicand < 0
    if negative.any():
        state.clamp_count += int(negative.sum())
        radicand = np.where(negative, 0.0, radicand)
    return np.sqrt(radicand)


def bonus(state: EstimatorState, features: Sequence[np.ndarray] | np.ndarray) -> float:
    u_max = float(uncertainties(state, features).max())
    r_plus = state.sigma * max(0.0, u_max - state.bias)
    if state.bias_mode == "average":
        state.bias = (1.0 - state.alpha) * state.bias + state.alpha * u_max
    return r_plus


def exact_posterior_variance(features: np.ndarray, actions: np.ndarray, sigma_noise: float,
                             query: np.ndarray, query_action: int, reg: float = 1e-4) -> float:
    """Per-action regression variance ``sigma^2 phi^T (sum_{u_i = u} phi_i phi_i^T + reg I)^-1 phi``.

    Only used as a reference for the action-independent estimator.
    """
    features = np.asarray(features, dtype=np.float64).reshape(-1, len(query))
    selected = features[np.asarray(actions) == query_action]
    design = selected.T @ selected + reg * np.eye(len(query))
    q = np.asarray(query, dtype=np.float64)
    return float(sigma_noise ** 2 * q @ np.linalg.solve(design, q))


class UncertaintyEstimator:
    """Stateful wrapper used by the sampling loop; one per training run."""

    def __init__(self, dim: int, config: IntrinsicConfig):
        self.state = init_estimator(dim, config.sigma, config.alpha, config.bias, config.reg, config.bias_mode)
        self._episode_clamps = 0

    @property
    def dim(self) -> int:
        return self.state.dim

    def observe(self, features: np.ndarray) -> float:
        """Fold the next-step features into ``C`` and return the bonus for them."""
        before = self.state.clamp_count
        update(self.state, features)
        r_plus = bonus(self.state, features)
        self._episode_clamps += self.state.clamp_count - before
        return r_plus

    def end_episode(self) -> int:
        clamps, self._episode_clamps = self._episode_clamps, 0
        if clamps:
            logger.warning("Clamped %d negative radicands this episode", clamps)
        return clamps
