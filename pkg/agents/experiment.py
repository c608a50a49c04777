from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np
import torch
from tqdm import tqdm

from agents.decentralized import DecentralizedController
from agents.icql import ICQLTrainer
from tools.config import Config, config_from_dict
from tools.gridworld import MountainPreyEnv
from tools.metrics import MetricsWriter, seed_csv, write_manifest
from tools.networks import AgentNet, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)


def evaluate(net: AgentNet, config: Config, rng: np.random.Generator, episodes: int | None = None,
             env: MountainPreyEnv | None = None) -> tuple[float, float]:
    """Mean and standard error of the undiscounted return of greedy decentralized episodes."""
    env = env if env is not None else MountainPreyEnv(config.env)
    episodes = episodes if episodes is not None else config.run.eval_episodes
    controller = DecentralizedController(net, env.n_agents)
    returns = []
    for _ in range(episodes):
        state, obs = env.reset(rng)
        controller.reset()
        total = 0.0
        while True:
            decision = controller.decide(obs, 0.0, rng)
            controller.commit(decision.greedy)
            state, reward, terminated, truncated, obs = env.step(state, decision.greedy, rng)
            total += reward
            if terminated or truncated:
                break
        returns.append(total)
    values = np.asarray(returns)
    stderr = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return float(values.mean()), stderr


def _checkpoint(trainer: ICQLTrainer, output_dir: Path, tag: str) -> Path:
    path = output_dir / "checkpoints" / f"seed_{trainer.seed}_{tag}.pt"
    meta = {"config": trainer.config.to_dict(), "seed": trainer.seed, "episode": trainer.episode}
    return save_checkpoint(path, {"agent": trainer.agent_net, "central": trainer.central_net}, meta)


def run_seed(config: Config, seed: int, output_dir: str | Path, progress: bool = True) -> Path:
    """Train one seed to ``run.total_episodes`` and write its metrics CSV."""
    output_dir = Path(output_dir)
    rc = config.run
    trainer = ICQLTrainer(config, seed)
    writer = MetricsWriter(seed_csv(output_dir, seed))
    logger.info("Seed %d: %s for %d episodes", seed, config.algorithm, rc.total_episodes)

    bar = tqdm(range(rc.total_episodes), desc=f"{config.algorithm} seed {seed}", disable=not progress)
    for _ in bar:
        row = trainer.training_iteration()
        if trainer.episode % rc.eval_every == 0:
            eval_rng = np.random.default_rng([seed, trainer.episode])
            mean, stderr = evaluate(trainer.snapshot(), config, eval_rng)
            row["test_return_mean"] = mean
            row["test_return_stderr"] = stderr
            bar.set_postfix(test=f"{mean:.2f}", eps=f"{row['epsilon']:.2f}")
            logger.info("Seed %d episode %d: test return %.2f +- %.2f", seed, trainer.episode, mean, stderr)
        writer.append(row)
        if trainer.episode % rc.checkpoint_every == 0:
            _checkpoint(trainer, output_dir, f"ep{trainer.episode:06d}")
    if rc.total_episodes and trainer.episode % rc.checkpoint_every != 0:
        _checkpoint(trainer, output_dir, f"ep{trainer.episode:06d}")
    return writer.path


def _worker_init() -> None:
    torch.set_num_threads(1)


def run(config: Config, output_dir: str | Path | None = None, progress: bool = True) -> list[Path]:
    """Train every configured seed; one CSV per seed plus ``manifest.json``."""
    config.validate()
    output_dir = Path(output_dir if output_dir is not None else config.run.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(output_dir, config)
    seeds = list(config.run.seeds)
    if config.run.workers > 1 and len(seeds) > 1:
        job = partial(run_seed, config, output_dir=output_dir, progress=False)
        with ProcessPoolExecutor(max_workers=config.run.workers, initializer=_worker_init) as pool:
            paths = list(pool.map(job, seeds))
    else:
        paths = [run_seed(config, seed, output_dir, progress) for seed in seeds]
    logger.info("Finished %d seed(s) in '%s'", len(paths), output_dir)
    return paths


def eval_checkpoint(path: str | Path, episodes: int | None = None, seed: int = 0) -> tuple[float, float]:
    """Greedy decentralized evaluation of a saved agent network."""
    payload = load_checkpoint(path)
    config = config_from_dict(payload["meta"]["config"])
    env = MountainPreyEnv(config.env)
    net = AgentNet(env.observation_space.shape[0], env.n_agents, config.learning.agent_hidden,
                   int(env.action_space.n))
    net.load_state_dict(payload["agent"])
    net.requires_grad_(False)
    return evaluate(net, config, np.random.default_rng(seed), episodes, env)
