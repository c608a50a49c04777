"""Decentralized IQL agents plus an intrinsically rewarded central critic, sharing control and replay."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import torch

from agents.central import central_act
from agents.decentralized import DecentralizedController, EpsilonSchedule
from tools.config import Config
from tools.gridworld import Action, MountainPreyEnv
from tools.networks import AgentNet, CentralNet, backward, copy_params, make_rmsprop, rmsprop_update
from tools.replay import CENTRAL, DECENTRALIZED, EpisodeRecord, ReplayBuffer, make_batch
from tools.targets import central_loss, decentralized_greedy, iql_loss, iql_targets, lambda_targets
from tools.uncertainty import UncertaintyEstimator

logger = logging.getLogger(__name__)


@dataclass
class RandomStreams:
    env: np.random.Generator
    policy: np.random.Generator
    sampling: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RandomStreams":
        env, policy, sampling = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
        return cls(env, policy, sampling)


class ICQLTrainer:
    """Owns every mutable piece of a training run: networks, optimisers, buffer, streams."""

    def __init__(self, config: Config, seed: int = 0, env: MountainPreyEnv | None = None):
        self.config = config
        self.seed = seed
        self.env = env if env is not None else MountainPreyEnv(config.env)
        self.dtype = torch.float64 if config.run.float64 else torch.float32
        n = self.env.n_agents
        lc = config.learning

        obs_dim = self.env.observation_space.shape[0]
        state_dim = self.env.state_space.shape[0]
        n_actions = int(self.env.action_space.n)

        init = torch.Generator().manual_seed(seed)
        self.agent_net = AgentNet(obs_dim, n, lc.agent_hidden, n_actions).to(self.dtype)
        self.agent_net.reset_parameters(init)
        self.central_net = CentralNet(state_dim, n, lc.central_hidden, n_actions).to(self.dtype)
        self.central_net.reset_parameters(init)
        self.agent_target = copy.deepcopy(self.agent_net)
        self.central_target = copy.deepcopy(self.central_net)
        self.agent_opt = make_rmsprop(self.agent_net.parameters(), lc.lr, lc.rms_alpha, lc.rms_eps)
        self.central_opt = make_rmsprop(self.central_net.parameters(), lc.lr, lc.rms_alpha, lc.rms_eps)

        source = config.estimator_source
        if source == "agent":
            self.estimator: UncertaintyEstimator | None = UncertaintyEstimator(lc.agent_hidden, config.intrinsic)
        elif source == "central":
            self.estimator = UncertaintyEstimator(lc.central_hidden, config.intrinsic)
        else:
            self.estimator = None

        self.schedule = EpsilonSchedule.from_config(config.exploration)
        self.buffer = ReplayBuffer(lc.buffer_size)
        self.controller = DecentralizedController(self.agent_net, n)
        self.rng = RandomStreams.from_seed(seed)
        self.episode = 0
        self.env_steps = 0

    @property
    def epsilon(self) -> float:
        return self.schedule.value(self.env_steps)

    # Sampling --------------------------------------------------------------

    def _central_features(self, state_feats: np.ndarray, joint: list[int], prev_joint: list[int]) -> np.ndarray:
        with torch.no_grad():
            _, phi = self.central_net(torch.as_tensor(state_feats, dtype=self.dtype),
                                      torch.tensor(joint), torch.tensor(prev_joint))
        return phi.double().numpy()

    def _bonus(self, agent_features: np.ndarray, state_feats: np.ndarray, joint: list[int],
               prev_joint: list[int]) -> float:
        if self.estimator is None:
            return 0.0
        if self.config.estimator_source == "agent":
            return self.estimator.observe(agent_features)
        return self.estimator.observe(self._central_features(state_feats, joint, prev_joint))

    def sample_episode(self) -> EpisodeRecord:
        """Run one episode under a randomly chosen controller and store it in the buffer."""
        env, rng, cfg = self.env, self.rng, self.config
        n = env.n_agents
        use_central = rng.policy.random() < cfg.central_control_probability
        epsilon = self.epsilon
        central_eps = epsilon if cfg.exploration.central_epsilon else 0.0

        state, obs = env.reset(rng.env)
        self.controller.reset()
        prev_joint = [int(Action.STAY)] * n

        observations, states, actions, rewards, bonuses, terminated, truncated = [obs], [], [], [], [], [], []
        state_feats = env.global_features(state)
        states.append(state_feats)
        decision = self.controller.decide(obs, epsilon, rng.policy)
        while True:
            if use_central:
                joint = central_act(self.central_net, state_feats, decision.greedy, prev_joint, central_eps,
                                    rng.policy, cfg.learning.localmax_iterations, self.dtype)
            else:
                joint = decision.actions
            self.controller.commit(joint)
            if actions:
                # bonus of the previous transition, from the inputs at this decision point
                bonuses.append(self._bonus(decision.features, state_feats, joint, prev_joint))

            state, reward, term, trunc, obs = env.step(state, joint, rng.env)
            state_feats = env.global_features(state)
            observations.append(obs)
            states.append(state_feats)
            actions.append(joint)
            rewards.append(reward)
            terminated.append(term)
            truncated.append(trunc)
            prev_joint = joint
            if term or trunc:
                break
            decision = self.controller.decide(obs, epsilon, rng.policy)

        # no action follows the last transition: executed actions stand in for it
        final = self.controller.decide(obs, 0.0, rng.policy) if cfg.estimator_source == "agent" else decision
        bonuses.append(self._bonus(final.features, state_feats, joint, joint))
        clamps = self.estimator.end_episode() if self.estimator is not None else 0

        record = EpisodeRecord(
            obs=np.asarray(observations, dtype=np.float32),
            state=np.asarray(states, dtype=np.float32),
            actions=np.asarray(actions, dtype=np.int64),
            rewards=np.asarray(rewards, dtype=np.float64),
            bonus=np.asarray(bonuses, dtype=np.float64),
            terminated=np.asarray(terminated, dtype=bool),
            truncated=np.asarray(truncated, dtype=bool),
            controller=CENTRAL if use_central else DECENTRALIZED,
            clamps=clamps,
        )
        self.buffer.append(record)
        self.episode += 1
        self.env_steps += record.length
        return record

    # Learning --------------------------------------------------------------

    def _draw(self):
        lc = self.config.learning
        return make_batch(self.buffer.sample(lc.batch_size, self.rng.sampling), self.dtype)

    def train_iql_step(self, batch=None) -> float | None:
        lc = self.config.learning
        if batch is None:
            if not self.buffer.ready(lc.batch_size):
                logger.debug("IQL step skipped: %d/%d episodes buffered", len(self.buffer), lc.batch_size)
                return None
            batch = self._draw()
        y = iql_targets(batch, self.agent_net, self.agent_target, lc.gamma, self.config.iql_reward_mode, lc.double_q)
        loss = iql_loss(self.agent_net, batch, y)
        params = dict(self.agent_net.named_parameters())
        rmsprop_update(self.agent_opt, params, backward(loss, params))
        return float(loss.item())

    def train_central_step(self, batch=None) -> float | None:
        lc = self.config.learning
        if batch is None:
            if not self.buffer.ready(lc.batch_size):
                logger.debug("Central step skipped: %d/%d episodes buffered", len(self.buffer), lc.batch_size)
                return None
            batch = self._draw()
        greedy = decentralized_greedy(self.agent_net, batch)
        G = lambda_targets(batch, self.central_net, self.central_target, greedy, lc.gamma, lc.td_lambda,
                           lc.localmax_iterations, "env_plus_intrinsic", lc.double_q)
        loss = central_loss(self.central_net, batch, G)
        params = dict(self.central_net.named_parameters())
        rmsprop_update(self.central_opt, params, backward(loss, params))
        return float(loss.item())

    def sync_targets(self) -> bool:
        if self.episode % self.config.learning.target_sync != 0:
            return False
        copy_params(self.agent_net, self.agent_target)
        copy_params(self.central_net, self.central_target)
        logger.debug("Synced target networks at episode %d", self.episode)
        return True

    def training_iteration(self) -> dict[str, Any]:
        """Sample one episode, take one gradient step per learner, maybe sync targets."""
        epsilon = self.epsilon
        record = self.sample_episode()
        lc = self.config.learning
        iql, central = None, None
        if self.buffer.ready(lc.batch_size):
            iql_batch = self._draw()
            iql = self.train_iql_step(iql_batch)
            if self.config.trains_central:
                central = self.train_central_step(iql_batch if lc.shared_batches else self._draw())
        self.sync_targets()
        logger.debug("Episode %d: return %.1f, iql loss %s, central loss %s",
                     self.episode, record.episode_return, iql, central)
        return {
            "seed": self.seed,
            "episode": self.episode,
            "env_steps": self.env_steps,
            "controller": record.controller,
            "train_return": record.episode_return,
            "length": record.length,
            "iql_loss": math.nan if iql is None else iql,
            "central_loss": math.nan if central is None else central,
            "bonus_mean": float(record.bonus.mean()),
            "bonus_max": float(record.bonus.max()),
            "bonus_clamps": record.clamps,
            "epsilon": epsilon,
        }

    def snapshot(self) -> AgentNet:
        """Read-only copy of the decentralized network for evaluation."""
        net = copy.deepcopy(self.agent_net)
        net.requires_grad_(False)
        return net
