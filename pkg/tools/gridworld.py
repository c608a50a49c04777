"""Mountain/valley predator-prey grid world.

Row 0 is the valley (bottom), row ``height - 1`` the mountain (top). ``UP`` increases
the row index. Agents and the valley prey fail half of their ``UP`` moves, the
mountain prey half of its ``DOWN`` moves. A prey is caught when every orthogonal
neighbour is either outside the grid or holds an agent.

All randomness comes from the ``numpy.random.Generator`` handed to ``reset``/``step``;
the environment object itself is stateless apart from its geometry.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np
from gymnasium import spaces

from tools.config import ConfigError, EnvConfig

Coord = tuple[int, int]


class UsageError(RuntimeError):
    """An operation was called in a state where it is not defined."""


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    STAY = 4


N_ACTIONS = len(Action)

ACTION_DELTAS: dict[Action, Coord] = {
    Action.UP: (1, 0),
    Action.DOWN: (-1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
    Action.STAY: (0, 0),
}

NEIGHBOUR_DELTAS: tuple[Coord, ...] = ((1, 0), (-1, 0), (0, -1), (0, 1))


class PreyKind(IntEnum):
    VALLEY = 0
    MOUNTAIN = 1


# observation planes
OTHER_AGENTS, VALLEY_PREY, MOUNTAIN_PREY, OUT_OF_BOUNDS = range(4)
N_PLANES = 4


@dataclass(frozen=True)
class Prey:
    position: Coord
    kind: PreyKind
    alive: bool = True


@dataclass(frozen=True)
class GridState:
    agent_positions: tuple[Coord, ...]
    prey: tuple[Prey, ...]
    step_count: int = 0
    done: bool = False

    @property
    def n_agents(self) -> int:
        return len(self.agent_positions)


@dataclass(frozen=True)
class StepResult:
    state: GridState
    reward: float
    terminated: bool
    truncated: bool
    observations: np.ndarray = field(repr=False)

    def __iter__(self):
        return iter((self.state, self.reward, self.terminated, self.truncated, self.observations))


def one_hot(index: int, size: int) -> np.ndarray:
    v = np.zeros(size, dtype=np.float32)
    v[index] = 1.0
    return v


class MountainPreyEnv:
    """Simulator for ``n`` agents hunting one valley and one mountain prey."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.height = config.height
        self.width = config.width
        self.n_agents = config.n_agents
        self.episode_limit = config.episode_limit
        self.radius = config.obs_radius
        self.window = 2 * config.obs_radius + 1

        self.action_space = spaces.Discrete(N_ACTIONS)
        self.observation_space = spaces.Box(0.0, 1.0, shape=(self.obs_dim,), dtype=np.float32)
        self.state_space = spaces.Box(0.0, 1.0, shape=(self.state_dim,), dtype=np.float32)

    # Sizes -----------------------------------------------------------------

    @property
    def obs_dim(self) -> int:
        return N_PLANES * self.window * self.window

    @property
    def state_dim(self) -> int:
        return 2 * self.n_agents + 3 * 2 + 1

    # Geometry helpers ------------------------------------------------------

    def in_bounds(self, pos: Coord) -> bool:
        return 0 <= pos[0] < self.height and 0 <= pos[1] < self.width

    @staticmethod
    def _shift(pos: Coord, action: Action) -> Coord:
        dr, dc = ACTION_DELTAS[action]
        return pos[0] + dr, pos[1] + dc

    # Episode control -------------------------------------------------------

    def _spawn(self, rng: np.random.Generator) -> GridState:
        if self.height < 3:
            raise ConfigError(f"env.height: need at least 3 rows, got {self.height}")
        if self.width < self.n_agents:
            raise ConfigError(
                f"env.width: cannot place {self.n_agents} agents on distinct cells of a {self.width}-wide row"
            )
        valley = Prey((0, int(rng.integers(self.width))), PreyKind.VALLEY)
        mountain = Prey((self.height - 1, int(rng.integers(self.width))), PreyKind.MOUNTAIN)
        row = self.height // 2
        cols = rng.choice(self.width, size=self.n_agents, replace=False)
        agents = tuple((row, int(c)) for c in cols)
        return GridState(agent_positions=agents, prey=(valley, mountain))

    def reset(self, rng: np.random.Generator) -> tuple[GridState, np.ndarray]:
        state = self._spawn(rng)
        return state, self.observe_all(state)

    def _slipped(self, action: Action, slip_direction: Action, rng: np.random.Generator) -> Action:
        if action == slip_direction and rng.random() < self.config.slip:
            return Action.STAY
        return action

    def _move_prey(self, prey: Prey, occupied: set[Coord], rng: np.random.Generator) -> Prey:
        action = Action(int(rng.integers(N_ACTIONS)))
        slip_direction = Action.UP if prey.kind == PreyKind.VALLEY else Action.DOWN
        action = self._slipped(action, slip_direction, rng)
        dest = self._shift(prey.position, action)
        if not self.in_bounds(dest) or dest in occupied:
            return prey
        occupied.discard(prey.position)
        occupied.add(dest)
        return Prey(dest, prey.kind, prey.alive)

    def step(self, state: GridState, actions: Sequence[int], rng: np.random.Generator) -> StepResult:
        if state.done:
            raise UsageError("step called on a finished episode; call reset first")
        if state.step_count >= self.episode_limit:
            raise UsageError(f"step_count {state.step_count} already reached episode_limit {self.episode_limit}")
        if len(actions) != state.n_agents:
            raise UsageError(f"expected {state.n_agents} actions, got {len(actions)}")

        positions = list(state.agent_positions)
        living_prey = [p.position for p in state.prey if p.alive]
        occupied = set(positions) | set(living_prey)

        for a in rng.permutation(state.n_agents):
            action = self._slipped(Action(int(actions[a])), Action.UP, rng)
            dest = self._shift(positions[a], action)
            if self.in_bounds(dest) and dest not in occupied:
                occupied.discard(positions[a])
                occupied.add(dest)
                positions[a] = dest

        # valley prey first, then mountain prey
        prey = [self._move_prey(p, occupied, rng) if p.alive else p for p in state.prey]

        moved = GridState(tuple(positions), tuple(prey), state.step_count + 1)
        captured = [p.alive and self.capture_check(moved, i) for i, p in enumerate(prey)]

        reward = 0.0
        for p, caught in zip(prey, captured):
            if caught:
                value = self.config.mountain_reward if p.kind == PreyKind.MOUNTAIN else self.config.valley_reward
                reward = max(reward, value)
        terminated = any(captured)
        truncated = not terminated and moved.step_count >= self.episode_limit
        if terminated:
            prey = [Prey(p.position, p.kind, False) if caught else p for p, caught in zip(prey, captured)]

        next_state = GridState(tuple(positions), tuple(prey), moved.step_count, terminated or truncated)
        return StepResult(next_state, reward, terminated, truncated, self.observe_all(next_state))

    # Queries ---------------------------------------------------------------

    def capture_check(self, state: GridState, prey_index: int) -> bool:
        prey = state.prey[prey_index]
        agents = set(state.agent_positions)
        for dr, dc in NEIGHBOUR_DELTAS:
            cell = (prey.position[0] + dr, prey.position[1] + dc)
            if self.in_bounds(cell) and cell not in agents:
                return False
        return True

    def observe(self, state: GridState, agent_id: int) -> np.ndarray:
        """Four ``window x window`` planes centred on the agent, flattened."""
        if not 0 <= agent_id < state.n_agents:
            raise UsageError(f"invalid agent id {agent_id}")
        r, w = self.radius, self.window
        planes = np.zeros((N_PLANES, w, w), dtype=np.float32)
        row, col = state.agent_positions[agent_id]

        rows = np.arange(row - r, row + r + 1)[:, None]
        cols = np.arange(col - r, col + r + 1)[None, :]
        outside = (rows < 0) | (rows >= self.height) | (cols < 0) | (cols >= self.width)
        planes[OUT_OF_BOUNDS] = outside

        def mark(plane: int, pos: Coord) -> None:
            i, j = pos[0] - row + r, pos[1] - col + r
            if 0 <= i < w and 0 <= j < w:
                planes[plane, i, j] = 1.0

        for other, pos in enumerate(state.agent_positions):
            if other != agent_id:
                mark(OTHER_AGENTS, pos)
        for p in state.prey:
            if p.alive:
                mark(VALLEY_PREY if p.kind == PreyKind.VALLEY else MOUNTAIN_PREY, p.position)
        return planes.reshape(-1)

    def observe_all(self, state: GridState) -> np.ndarray:
        return np.stack([self.observe(state, a) for a in range(state.n_agents)])

    def global_features(self, state: GridState) -> np.ndarray:
        row_scale = max(1, self.height - 1)
        col_scale = max(1, self.width - 1)
        feats: list[float] = []
        for row, col in state.agent_positions:
            feats += [row / row_scale, col / col_scale]
        for p in state.prey:
            feats += [p.position[0] / row_scale, p.position[1] / col_scale, float(p.alive)]
        feats.append(state.step_count / self.episode_limit)
        return np.asarray(feats, dtype=np.float32)
