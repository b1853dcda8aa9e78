"""
HRL Environments
Episodic tabular environments: Corridor, Stochastic Corridor and Grid.

All three share one interface: ``reset`` returns the start state, ``step``
applies a primitive action and reports reward, termination, truncation and
tagged events. Observations are one-hot vectors over every state,
terminal included.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from hrl.errors import EnvironmentUsageError

logger = logging.getLogger(__name__)

CORRIDOR_STEP_LIMIT = 20
GRID_STEP_LIMIT = 60

Seed = Optional[Union[int, np.random.SeedSequence]]


class Move(Enum):
    """Primitive actions."""
    UP = "up"
    DOWN = "down"
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True, eq=False)
class EnvState:
    """A state symbol with its one-hot observation; equality is by id."""

    id: str
    observation: np.ndarray

    def __eq__(self, other) -> bool:
        return isinstance(other, EnvState) and other.id == self.id

    def __hash__(self) -> int:
        return hash(self.id)

    def __repr__(self) -> str:
        return f"EnvState({self.id!r})"


@dataclass(frozen=True)
class StepOutcome:
    previous_state: EnvState
    action: Move
    next_state: EnvState
    reward: float
    done: bool
    truncated: bool = False
    events: Tuple[str, ...] = ()


@dataclass(frozen=True)
class EnvSpec:
    """
    Static description of an environment.

    ``states`` lists every state including the terminal one, in encoding
    order. ``goal_targets`` maps each goal to the state where it is
    achieved; ``goal_predecessors`` names goals that additionally require
    arriving from one particular state.
    """

    name: str
    states: Tuple[str, ...]
    actions: Tuple[Move, ...]
    start_state: str
    terminal_state: str
    goal_targets: Dict[str, str]
    step_limit: int
    goal_predecessors: Dict[str, str] = field(default_factory=dict)
    stochastic: bool = False

    @property
    def goal_ids(self) -> Tuple[str, ...]:
        return tuple(self.goal_targets)

    @property
    def nonterminal_states(self) -> Tuple[str, ...]:
        return tuple(s for s in self.states if s != self.terminal_state)

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "states": list(self.states),
            "actions": [a.value for a in self.actions],
            "start_state": self.start_state,
            "terminal_state": self.terminal_state,
            "goal_targets": dict(self.goal_targets),
            "goal_predecessors": dict(self.goal_predecessors),
            "step_limit": self.step_limit,
            "stochastic": self.stochastic,
        }


class EpisodicEnvironment(ABC):
    """
    Base class for the tabular environments.

    Subclasses define the intended (most likely) transition, how a state
    arrival is recorded, and the reward paid on reaching the terminal.
    """

    def __init__(self, spec: EnvSpec, seed: Seed = None):
        self.spec = spec
        self._rng = np.random.default_rng(seed)
        self._index = {state: i for i, state in enumerate(spec.states)}
        self._state: Optional[EnvState] = None
        self._steps = 0
        self._done = False

    @property
    def state(self) -> EnvState:
        if self._state is None:
            raise EnvironmentUsageError(f"{self.spec.name}: reset() must be called first")
        return self._state

    @property
    def steps_taken(self) -> int:
        return self._steps

    @property
    def done(self) -> bool:
        return self._done

    @property
    def observation_size(self) -> int:
        return len(self.spec.states)

    def encode(self, state_id: str) -> EnvState:
        if state_id not in self._index:
            raise EnvironmentUsageError(f"{self.spec.name}: unknown state {state_id!r}")
        observation = np.zeros(len(self.spec.states))
        observation[self._index[state_id]] = 1.0
        return EnvState(state_id, observation)

    def reset(self, seed: Seed = None, start: Optional[str] = None) -> EnvState:
        """
        Start a new episode.

        Args:
            seed: Reseeds the random stream when given; otherwise the stream continues
            start: Alternative start state, used for controller analysis

        Returns:
            The start state
        """
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        start = start or self.spec.start_state
        if start == self.spec.terminal_state or start not in self._index:
            raise EnvironmentUsageError(f"{self.spec.name}: cannot start an episode in {start!r}")
        self._steps = 0
        self._done = False
        self._begin_episode(start)
        self._state = self.encode(start)
        return self._state

    def step(self, action: Move) -> StepOutcome:
        """Apply one primitive action."""
        if self._state is None:
            raise EnvironmentUsageError(f"{self.spec.name}: step() before reset()")
        if self._done:
            raise EnvironmentUsageError(f"{self.spec.name}: step() after the episode ended")
        if action not in self.spec.actions:
            raise EnvironmentUsageError(f"{self.spec.name}: action {action} is not available")

        previous = self._state
        next_id = self._sample_transition(previous.id, action)
        events = self._record_arrival(previous.id, next_id)
        self._steps += 1

        reward, done, truncated = 0.0, False, False
        if next_id == self.spec.terminal_state:
            reward = self._terminal_reward()
            done = True
            events.append("reached-terminal")
        elif self._steps >= self.spec.step_limit:
            done = truncated = True
            events.append("truncated")

        self._done = done
        self._state = self.encode(next_id)
        return StepOutcome(previous, action, self._state, reward, done, truncated, tuple(events))

    @abstractmethod
    def intended_transition(self, state_id: str, action: Move) -> str:
        """The deterministic (or most likely) successor of ``state_id`` under ``action``."""

    def _sample_transition(self, state_id: str, action: Move) -> str:
        return self.intended_transition(state_id, action)

    @abstractmethod
    def _begin_episode(self, start: str):
        pass

    @abstractmethod
    def _record_arrival(self, previous: str, current: str) -> List[str]:
        pass

    @abstractmethod
    def _terminal_reward(self) -> float:
        pass

    @abstractmethod
    def deterministic_model(self) -> "EpisodicEnvironment":
        """A fresh environment whose transitions are the intended ones."""


class CorridorEnv(EpisodicEnvironment):
    """
    Seven-state chain s0..s6 starting at s3.

    Reaching s0 ends the episode with +1 when the agent moved from s5 to s6
    at least ``required_visits`` times, +0.01 otherwise. Right at s6 does
    nothing.
    """

    LENGTH = 6

    def __init__(self, seed: Seed = None, step_limit: int = CORRIDOR_STEP_LIMIT,
                 required_visits: int = 2, name: str = "corridor", stochastic: bool = False):
        states = tuple(f"s{i}" for i in range(self.LENGTH + 1))
        spec = EnvSpec(
            name=name,
            states=states,
            actions=(Move.LEFT, Move.RIGHT),
            start_state="s3",
            terminal_state="s0",
            goal_targets={f"g{i}": f"s{i}" for i in range(self.LENGTH + 1)},
            goal_predecessors={f"g{self.LENGTH}": f"s{self.LENGTH - 1}"},
            step_limit=step_limit,
            stochastic=stochastic,
        )
        super().__init__(spec, seed)
        self.required_visits = required_visits
        self.visits = 0

    def intended_transition(self, state_id: str, action: Move) -> str:
        position = int(state_id[1:])
        if action is Move.LEFT:
            return f"s{position - 1}"
        if action is Move.RIGHT:
            return f"s{min(position + 1, self.LENGTH)}"
        raise EnvironmentUsageError(f"corridor has no action {action}")

    def _begin_episode(self, start: str):
        self.visits = 0

    def _record_arrival(self, previous: str, current: str) -> List[str]:
        if previous == f"s{self.LENGTH - 1}" and current == f"s{self.LENGTH}":
            self.visits += 1
            return [f"visited-s{self.LENGTH}"]
        return []

    def _terminal_reward(self) -> float:
        return 1.0 if self.visits >= self.required_visits else 0.01

    def deterministic_model(self) -> "CorridorEnv":
        return CorridorEnv(step_limit=self.spec.step_limit, required_visits=self.required_visits)


class StochasticCorridorEnv(CorridorEnv):
    """Corridor whose Right move goes right or left with equal probability."""

    RIGHT_SUCCESS = 0.5

    def __init__(self, seed: Seed = None, step_limit: int = CORRIDOR_STEP_LIMIT,
                 required_visits: int = 2):
        super().__init__(seed, step_limit, required_visits, name="stochastic-corridor", stochastic=True)

    def _sample_transition(self, state_id: str, action: Move) -> str:
        if action is Move.RIGHT and self._rng.random() >= self.RIGHT_SUCCESS:
            return self.intended_transition(state_id, Move.LEFT)
        return self.intended_transition(state_id, action)


GRID_START_TAG = "0"
GRID_TERMINAL_TAG = "τ"
GRID_REQUIRED_ORDER = ("1", "0", "2", "0", "3", "0")


def grid_reward_condition(visit_log: Sequence[str]) -> bool:
    """
    True iff landmark 1, start, landmark 2, start, landmark 3, start occur
    in this order within ``visit_log`` (other visits may interleave) and
    the terminal tag follows them.
    """
    required = GRID_REQUIRED_ORDER + (GRID_TERMINAL_TAG,)
    position = 0
    for tag in visit_log:
        if position < len(required) and tag == required[position]:
            position += 1
    return position == len(required)


class GridEnv(EpisodicEnvironment):
    """
    5x5 grid with landmarks in three corners.

    The agent starts top-left. The terminal sits above row 0, column 2 and
    is entered by moving Up from that cell; every other move into a wall
    is a no-op. The episode pays +1 only if the landmarks were visited in
    order with a return to the start after each.
    """

    SIZE = 5
    START = (0, 0)
    LANDMARKS = {"1": (0, 4), "2": (4, 0), "3": (4, 4)}
    EXIT = (0, 2)
    TERMINAL = "τ"

    def __init__(self, seed: Seed = None, step_limit: int = GRID_STEP_LIMIT):
        cells = tuple(self.cell_id(r, c) for r in range(self.SIZE) for c in range(self.SIZE))
        start = self.cell_id(*self.START)
        targets = {"g0": start}
        targets.update({f"g{tag}": self.cell_id(*cell) for tag, cell in self.LANDMARKS.items()})
        targets["gτ"] = self.TERMINAL
        spec = EnvSpec(
            name="grid",
            states=cells + (self.TERMINAL,),
            actions=(Move.UP, Move.DOWN, Move.LEFT, Move.RIGHT),
            start_state=start,
            terminal_state=self.TERMINAL,
            goal_targets=targets,
            step_limit=step_limit,
        )
        super().__init__(spec, seed)
        self._tags = {start: GRID_START_TAG, self.TERMINAL: GRID_TERMINAL_TAG}
        self._tags.update({self.cell_id(*cell): tag for tag, cell in self.LANDMARKS.items()})
        self.visit_log: List[str] = []

    @staticmethod
    def cell_id(row: int, col: int) -> str:
        return f"s{row}{col}"

    def intended_transition(self, state_id: str, action: Move) -> str:
        row, col = int(state_id[1]), int(state_id[2])
        if action is Move.UP:
            if row == 0:
                return self.TERMINAL if (row, col) == self.EXIT else state_id
            row -= 1
        elif action is Move.DOWN:
            row = min(row + 1, self.SIZE - 1)
        elif action is Move.LEFT:
            col = max(col - 1, 0)
        else:
            col = min(col + 1, self.SIZE - 1)
        return self.cell_id(row, col)

    def _begin_episode(self, start: str):
        self.visit_log = []
        if start in self._tags:
            self.visit_log.append(self._tags[start])

    def _record_arrival(self, previous: str, current: str) -> List[str]:
        if previous == current or current not in self._tags:
            return []
        tag = self._tags[current]
        self.visit_log.append(tag)
        if tag == GRID_START_TAG:
            return ["reached-start"]
        if tag == GRID_TERMINAL_TAG:
            return []
        return [f"visited-landmark-{tag}"]

    def _terminal_reward(self) -> float:
        return 1.0 if grid_reward_condition(self.visit_log) else 0.0

    def deterministic_model(self) -> "GridEnv":
        return GridEnv(step_limit=self.spec.step_limit)


ENVIRONMENTS = ("corridor", "stochastic-corridor", "grid")


def make_environment(name: str, seed: Seed = None, step_limit: Optional[int] = None,
                     required_visits: int = 2) -> EpisodicEnvironment:
    """Build an environment by its CLI name."""
    if name == "corridor":
        return CorridorEnv(seed, step_limit or CORRIDOR_STEP_LIMIT, required_visits)
    if name == "stochastic-corridor":
        return StochasticCorridorEnv(seed, step_limit or CORRIDOR_STEP_LIMIT, required_visits)
    if name == "grid":
        return GridEnv(seed, step_limit or GRID_STEP_LIMIT)
    raise ValueError(f"unknown environment {name!r}; choose from {', '.join(ENVIRONMENTS)}")


def random_policy_baseline(env: EpisodicEnvironment, episodes: int, seed: Seed = None) -> float:
    """
    Mean return of uniformly random primitive actions.

    Args:
        env: Environment to roll out in; it is reseeded with ``seed``
        episodes: Number of episodes, at least 1
        seed: Seed for both the action choice and the environment

    Returns:
        Mean episode return
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    env_seed, action_seed = np.random.SeedSequence(seed).spawn(2)
    action_rng = np.random.default_rng(action_seed)
    env.reset(seed=env_seed)
    actions = env.spec.actions
    total = 0.0
    for _ in range(episodes):
        env.reset()
        outcome = None
        while not env.done:
            outcome = env.step(actions[int(action_rng.integers(len(actions)))])
        total += outcome.reward if outcome is not None else 0.0
    mean = total / episodes
    logger.info("random baseline on %s over %d episodes: %.4f", env.spec.name, episodes, mean)
    return mean
