import numpy as np
import pytest
import torch

from tools.config import Config, EnvConfig
from tools.gridworld import GridState, MountainPreyEnv, Prey, PreyKind
from tools.replay import EpisodeRecord


class CorridorEnv(MountainPreyEnv):
    """One-row corridor: agents start at the left end, a stationary valley prey at the right end."""

    def _spawn(self, rng):
        end = (0, self.width - 1)
        agents = tuple((0, c) for c in range(self.n_agents))
        return GridState(agents, (Prey(end, PreyKind.VALLEY), Prey(end, PreyKind.MOUNTAIN, alive=False)))

    def _move_prey(self, prey, occupied, rng):
        return prey


@pytest.fixture
def corridor_env():
    def make(width=5, n_agents=1, episode_limit=20):
        cfg = EnvConfig(height=1, width=width, n_agents=n_agents, episode_limit=episode_limit, obs_radius=2)
        return CorridorEnv(cfg)

    return make


@pytest.fixture
def tiny_config():
    """A run small enough to train a few episodes in well under a second."""

    def make(algorithm="ICQL", **sections):
        config = Config(algorithm=algorithm)
        config.env = EnvConfig(height=5, width=4, n_agents=2, episode_limit=8, obs_radius=1)
        config.learning.batch_size = 4
        config.learning.buffer_size = 8
        config.learning.target_sync = 5
        config.learning.agent_hidden = 8
        config.learning.central_hidden = 16
        config.exploration.eps_horizon = 200
        config.run.total_episodes = 6
        config.run.eval_every = 3
        config.run.eval_episodes = 2
        config.run.checkpoint_every = 3
        for section, values in sections.items():
            for key, value in values.items():
                setattr(getattr(config, section), key, value)
        return config.validate()

    return make


@pytest.fixture
def make_episode():
    """Random but well-formed episode records."""

    def make(rng, length, n_agents=2, obs_dim=36, state_dim=11, terminated=True, reward=None, bonus=None):
        obs = (rng.random((length + 1, n_agents, obs_dim)) < 0.3).astype(np.float32)
        state = rng.random((length + 1, state_dim)).astype(np.float32)
        actions = rng.integers(5, size=(length, n_agents))
        rewards = np.zeros(length) if reward is None else np.full(length, float(reward))
        if reward is None and terminated:
            rewards[-1] = float(rng.choice([5.0, 10.0]))
        bonuses = rng.random(length) if bonus is None else np.full(length, float(bonus))
        term = np.zeros(length, dtype=bool)
        trunc = np.zeros(length, dtype=bool)
        if terminated:
            term[-1] = True
        else:
            trunc[-1] = True
        return EpisodeRecord(obs, state, actions, rewards, bonuses, term, trunc)

    return make


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)
