"""
HRL Meta Controllers
Goal-selecting policies that sit above the low-level controller.

Three learners are provided: a recurrent REINFORCE meta controller that
conditions on the whole history of visited states, a feedforward
REINFORCE baseline, and a feedforward deep Q-network baseline with
experience replay. A scripted meta controller replays a fixed goal list.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from grammar_core.extraction import ActOutcomeKind
from hrl.controllers import Goal, OptimalController
from hrl.environments import EnvSpec, EnvState, EpisodicEnvironment
from hrl.errors import HRLError, MemoryConflictError, PolicyLoopError
from hrl.neural import (
    Direction,
    EpisodeTape,
    FeedforwardNetwork,
    OptimizerKind,
    OptimizerState,
    Params,
    RecurrentPolicy,
    bptt_policy_gradient,
    feedforward_policy_gradient,
    huber_loss,
    optimizer_apply,
    softmax,
)

logger = logging.getLogger(__name__)

History = Tuple[str, ...]


@dataclass
class MetaDecision:
    """One goal choice and the external reward collected while pursuing it."""

    state: EnvState
    goal: Goal
    reward: float = 0.0


def returns_to_go(rewards: Sequence[float], gamma: float = 1.0) -> np.ndarray:
    """``G_t = sum_{j >= t} gamma^(j - t) R_j``."""
    returns = np.zeros(len(rewards))
    running = 0.0
    for t in reversed(range(len(rewards))):
        running = rewards[t] + gamma * running
        returns[t] = running
    return returns


class MetaController(ABC):
    """
    Common interface for meta controllers.

    ``memory_length`` is 0 for controllers that only see the current state
    and None for controllers that see the whole history.
    """

    system = ""
    memory_length: Optional[int] = 0

    def __init__(self, spec: EnvSpec, goals: Sequence[Goal], rng: Optional[np.random.Generator] = None):
        self.spec = spec
        self.goals = tuple(goals)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.input_size = len(spec.states)
        self.exploring = False

    def begin_episode(self):
        pass

    @abstractmethod
    def select_goal(self, state: EnvState) -> Goal:
        """Choose the next goal, sampling from the current policy."""

    def record(self, decision: MetaDecision, next_state: EnvState, done: bool):
        """Called once the controller finished pursuing ``decision.goal``."""

    def end_episode(self, decisions: Sequence[MetaDecision]):
        pass

    @abstractmethod
    def greedy_goal(self, observations: Sequence[np.ndarray]) -> Goal:
        """Most likely goal after the given chronological observations."""

    @property
    @abstractmethod
    def params(self) -> Params:
        pass

    def _sample(self, logits: np.ndarray) -> int:
        if self.exploring:
            return int(self.rng.integers(len(self.goals)))
        probs = softmax(logits)
        return int(self.rng.choice(len(probs), p=probs))


class RhReinforceMetaController(MetaController):
    """
    Recurrent REINFORCE meta controller.

    A GRU reads one state observation per decision; its hidden state
    carries the history, and a softmax head gives the goal distribution.
    The episode's decisions are replayed by back-propagation through time
    at the end of the episode.
    """

    system = "rh-reinforce"
    memory_length = None

    def __init__(self, spec: EnvSpec, goals: Sequence[Goal], rng: Optional[np.random.Generator] = None,
                 hidden_size: int = 64, learning_rate: float = 0.001, gamma: float = 1.0,
                 update_while_exploring: bool = False):
        super().__init__(spec, goals, rng)
        self.gamma = gamma
        self.update_while_exploring = update_while_exploring
        self.policy = RecurrentPolicy(self.input_size, hidden_size, len(self.goals), self.rng)
        self.optimizer = OptimizerState(OptimizerKind.ADAM, learning_rate)
        self.begin_episode()

    @property
    def params(self) -> Params:
        return self.policy.params

    def begin_episode(self):
        self._hidden = self.policy.initial_hidden()
        self.tape = EpisodeTape(self._hidden.copy())

    def select_goal(self, state: EnvState) -> Goal:
        self._hidden, logits = self.policy.step(state.observation, self._hidden)
        index = self._sample(logits)
        self.tape.record(state.observation, index)
        return self.goals[index]

    def end_episode(self, decisions: Sequence[MetaDecision]):
        self.rh_update(decisions)

    def rh_update(self, decisions: Sequence[MetaDecision]) -> Optional[Params]:
        """One ascent step on ``sum_t G_t ln pi(g_t | history_t)``; skipped while exploring."""
        if not decisions or (self.exploring and not self.update_while_exploring):
            return None
        returns = returns_to_go([d.reward for d in decisions], self.gamma)
        grads = bptt_policy_gradient(self.policy, self.tape, returns)
        optimizer_apply(self.optimizer, self.policy.params, grads, Direction.ASCEND)
        return grads

    def greedy_goal(self, observations: Sequence[np.ndarray]) -> Goal:
        return self.goals[int(np.argmax(self.policy.logits_for(observations)))]


class HReinforceMetaController(MetaController):
    """Feedforward REINFORCE meta controller: the goal depends on the current state only."""

    system = "h-reinforce"
    memory_length = 0

    def __init__(self, spec: EnvSpec, goals: Sequence[Goal], rng: Optional[np.random.Generator] = None,
                 hidden_sizes: Tuple[int, ...] = (16, 32), learning_rate: float = 0.001,
                 gamma: float = 1.0, update_while_exploring: bool = False):
        super().__init__(spec, goals, rng)
        self.gamma = gamma
        self.update_while_exploring = update_while_exploring
        sizes = (self.input_size,) + tuple(hidden_sizes) + (len(self.goals),)
        self.network = FeedforwardNetwork(sizes, "relu", "linear", self.rng, name="policy")
        self.optimizer = OptimizerState(OptimizerKind.ADAM, learning_rate)
        self.begin_episode()

    @property
    def params(self) -> Params:
        return self.network.params

    def begin_episode(self):
        self._inputs: List[np.ndarray] = []
        self._choices: List[int] = []

    def select_goal(self, state: EnvState) -> Goal:
        index = self._sample(self.network(state.observation))
        self._inputs.append(state.observation)
        self._choices.append(index)
        return self.goals[index]

    def end_episode(self, decisions: Sequence[MetaDecision]):
        if not decisions or (self.exploring and not self.update_while_exploring):
            return
        returns = returns_to_go([d.reward for d in decisions], self.gamma)
        grads = feedforward_policy_gradient(self.network, np.array(self._inputs), self._choices, returns)
        optimizer_apply(self.optimizer, self.network.params, grads, Direction.ASCEND)

    def greedy_goal(self, observations: Sequence[np.ndarray]) -> Goal:
        return self.goals[int(np.argmax(self.network(observations[-1])))]


@dataclass
class ReplayBatch:
    states: np.ndarray
    goals: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring buffer of meta transitions, sampled uniformly with replacement."""

    def __init__(self, capacity: int, observation_size: int, rng: Optional[np.random.Generator] = None):
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self.rng = rng if rng is not None else np.random.default_rng()
        self._states = np.zeros((capacity, observation_size))
        self._next_states = np.zeros((capacity, observation_size))
        self._goals = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity)
        self._dones = np.zeros(capacity)
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, state: np.ndarray, goal_index: int, reward: float, next_state: np.ndarray, done: bool):
        i = self._cursor
        self._states[i] = state
        self._goals[i] = goal_index
        self._rewards[i] = reward
        self._next_states[i] = next_state
        self._dones[i] = float(done)
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int) -> ReplayBatch:
        if self._size == 0:
            raise HRLError("cannot sample from an empty replay buffer")
        idx = self.rng.integers(0, self._size, size=batch_size)
        return ReplayBatch(self._states[idx], self._goals[idx], self._rewards[idx],
                           self._next_states[idx], self._dones[idx])


@dataclass
class EpsilonSchedule:
    """Linear decay from ``start`` to ``end`` over ``decay_steps`` decisions."""

    start: float = 1.0
    end: float = 0.01
    decay_steps: int = 15_000
    steps: int = 0

    def value(self) -> float:
        if self.steps >= self.decay_steps:
            return self.end
        fraction = self.steps / self.decay_steps
        return self.start + fraction * (self.end - self.start)

    def advance(self):
        self.steps += 1


class HDqnMetaController(MetaController):
    """
    Feedforward deep Q-network meta controller.

    Goals are chosen epsilon-greedily. After every decision the transition
    is stored and, once the buffer holds a full batch, one RMSprop step on
    the Huber loss is taken and the target network moves towards the
    online network by ``target_update_rate``.
    """

    system = "h-dqn"
    memory_length = 0

    def __init__(self, spec: EnvSpec, goals: Sequence[Goal], rng: Optional[np.random.Generator] = None,
                 hidden_sizes: Tuple[int, ...] = (16, 32), learning_rate: float = 0.001,
                 gamma: float = 1.0, replay_size: int = 100_000, batch_size: int = 64,
                 target_update_rate: float = 0.001, schedule: Optional[EpsilonSchedule] = None):
        super().__init__(spec, goals, rng)
        self.gamma = gamma
        self.batch_size = batch_size
        self.target_update_rate = target_update_rate
        sizes = (self.input_size,) + tuple(hidden_sizes) + (len(self.goals),)
        self.q_network = FeedforwardNetwork(sizes, "relu", "linear", self.rng, name="q")
        self.target_network = FeedforwardNetwork(sizes, "relu", "linear", self.rng, name="target")
        self.target_network.copy_from(self.q_network)
        self.buffer = ReplayBuffer(replay_size, self.input_size, self.rng)
        self.schedule = schedule or EpsilonSchedule()
        self.optimizer = OptimizerState(OptimizerKind.RMSPROP, learning_rate)
        self.last_loss: Optional[float] = None

    @property
    def params(self) -> Params:
        merged = self.q_network.params
        merged.update(self.target_network.params)
        return merged

    def select_goal(self, state: EnvState) -> Goal:
        epsilon = self.schedule.value()
        self.schedule.advance()
        if self.exploring or self.rng.random() < epsilon:
            return self.goals[int(self.rng.integers(len(self.goals)))]
        return self.goals[int(np.argmax(self.q_network(state.observation)))]

    def record(self, decision: MetaDecision, next_state: EnvState, done: bool):
        self.buffer.add(decision.state.observation, decision.goal.index, decision.reward,
                        next_state.observation, done)
        if len(self.buffer) >= self.batch_size:
            self.last_loss = self.hdqn_update(self.buffer.sample(self.batch_size))

    def hdqn_update(self, batch: ReplayBatch) -> float:
        """One gradient step towards ``y = R + gamma (1 - done) max_g' Q_target(s', g')``."""
        targets = batch.rewards + self.gamma * (1.0 - batch.dones) * self.target_network(batch.next_states).max(axis=1)
        q_values, caches = self.q_network.forward(batch.states)
        rows = np.arange(len(batch.goals))
        loss, grad_chosen = huber_loss(q_values[rows, batch.goals], targets)
        grad_q = np.zeros_like(q_values)
        grad_q[rows, batch.goals] = grad_chosen
        _, grads = self.q_network.backward(caches, grad_q)
        optimizer_apply(self.optimizer, self.q_network.params, grads, Direction.DESCEND)
        self.target_network.soft_update_from(self.q_network, self.target_update_rate)
        return loss

    def greedy_goal(self, observations: Sequence[np.ndarray]) -> Goal:
        return self.goals[int(np.argmax(self.q_network(observations[-1])))]


class ScriptedMetaController(MetaController):
    """Issues a fixed goal sequence; used to check environments and controllers end to end."""

    system = "scripted"
    memory_length = None

    def __init__(self, spec: EnvSpec, goals: Sequence[Goal], script: Sequence[str]):
        super().__init__(spec, goals)
        by_id = {goal.id: goal for goal in self.goals}
        unknown = [goal_id for goal_id in script if goal_id not in by_id]
        if unknown:
            raise HRLError(f"script names unknown goals {unknown}")
        self.script = [by_id[goal_id] for goal_id in script]
        self._position = 0

    @property
    def params(self) -> Params:
        return {}

    def begin_episode(self):
        self._position = 0

    def select_goal(self, state: EnvState) -> Goal:
        if self._position >= len(self.script):
            raise HRLError("goal script exhausted before the episode ended")
        goal = self.script[self._position]
        self._position += 1
        return goal

    def greedy_goal(self, observations: Sequence[np.ndarray]) -> Goal:
        index = len(observations) - 1
        if index >= len(self.script):
            raise HRLError("goal script exhausted")
        return self.script[index]


def deterministic_policy_map(meta: MetaController, env: EpisodicEnvironment, k: int,
                             controller: Optional[OptimalController] = None) -> Dict[History, str]:
    """
    Read a meta controller's greedy behavior as a history-to-goal table.

    Memoryless controllers are tabulated over every non-terminal state.
    Others are rolled out greedily from the start state through the
    controller's outcome table, keying each decision by the current state
    and up to k previous states, most recent first.

    Raises:
        PolicyLoopError: if the rollout spends the step budget without terminating
        MemoryConflictError: if two decisions share a truncated history but differ
    """
    spec = env.spec
    controller = controller or OptimalController(env)
    if meta.memory_length == 0:
        return {(state,): meta.greedy_goal([env.encode(state).observation]).id
                for state in spec.nonterminal_states}

    outcomes = controller.outcome_table(meta.goals)
    visited = [spec.start_state]
    mapping: Dict[History, str] = {}
    spent = 0
    while True:
        state = visited[-1]
        goal = meta.greedy_goal([env.encode(s).observation for s in visited])
        key = tuple(reversed(visited))[:k + 1]
        chosen = mapping.setdefault(key, goal.id)
        if chosen != goal.id:
            raise MemoryConflictError(
                f"history {' '.join(key)} maps to both {chosen} and {goal.id}; k={k} is too short", key
            )

        outcome = outcomes[(state, goal.id)]
        if outcome.kind is ActOutcomeKind.LOOPS:
            return mapping
        spent += controller.path_length(state, goal)
        if spent > spec.step_limit:
            raise PolicyLoopError(f"greedy rollout exceeds the {spec.step_limit}-action budget")
        if outcome.kind is ActOutcomeKind.TERMINATES:
            return mapping
        if spent == spec.step_limit:
            raise PolicyLoopError(f"greedy rollout is truncated at {spec.step_limit} actions")
        visited.append(outcome.next_state or "")
