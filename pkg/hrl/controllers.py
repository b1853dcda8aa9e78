"""
HRL Controllers
Goal predicates and the low-level controllers that pursue goals.

The optimal controller plans shortest paths over an environment's
intended transitions. The actor-critic controller learns from an
intrinsic reward paid when the commanded goal is achieved.
"""

import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from grammar_core.extraction import ActOutcome
from hrl.environments import EnvSpec, EnvState, EpisodicEnvironment, Move, StepOutcome
from hrl.errors import ControllerError
from hrl.neural import Direction, FeedforwardNetwork, OptimizerKind, OptimizerState, Params, optimizer_apply, softmax

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Goal:
    """A goal symbol, the state where it is achieved and its one-hot encoding."""

    id: str
    target: str
    encoding: np.ndarray
    index: int
    required_predecessor: Optional[str] = None

    def __eq__(self, other) -> bool:
        return isinstance(other, Goal) and other.id == self.id

    def __hash__(self) -> int:
        return hash(self.id)

    def __repr__(self) -> str:
        return f"Goal({self.id!r})"


def make_goals(spec: EnvSpec) -> Tuple[Goal, ...]:
    goals = []
    count = len(spec.goal_targets)
    for index, (goal_id, target) in enumerate(spec.goal_targets.items()):
        encoding = np.zeros(count)
        encoding[index] = 1.0
        goals.append(Goal(goal_id, target, encoding, index, spec.goal_predecessors.get(goal_id)))
    return tuple(goals)


@dataclass(frozen=True)
class Transition:
    prev_state: str
    action: Move
    next_state: str

    @classmethod
    def from_outcome(cls, outcome: StepOutcome) -> "Transition":
        return cls(outcome.previous_state.id, outcome.action, outcome.next_state.id)


def goal_achieved(goal: Goal, transition: Transition) -> bool:
    """True iff the transition arrives at the goal's target, from its required predecessor if any."""
    if transition.next_state != goal.target or transition.prev_state == transition.next_state:
        return False
    return goal.required_predecessor is None or transition.prev_state == goal.required_predecessor


class OutcomeKind(Enum):
    GOAL_REACHED = "goal_reached"
    TERMINATED = "terminated"
    TRUNCATED = "truncated"


@dataclass(frozen=True)
class ControllerOutcome:
    kind: OutcomeKind
    final_state: EnvState
    accumulated_external_reward: float
    actions_taken: int

    @property
    def done(self) -> bool:
        return self.kind is not OutcomeKind.GOAL_REACHED


@dataclass(frozen=True)
class _Plan:
    first_action: Move
    distance: int
    final_state: str


class OptimalController:
    """
    Shortest-path controller.

    Plans by breadth-first search over the intended transitions, so in the
    stochastic corridor it takes the most likely actions. Ties go to the
    first action in the environment's action order.
    """

    learns = False

    def __init__(self, env: EpisodicEnvironment):
        self.env = env
        self.spec = env.spec
        self._plans: Dict[Tuple[str, str], _Plan] = {}

    def _plan(self, state_id: str, goal: Goal) -> _Plan:
        key = (state_id, goal.id)
        if key in self._plans:
            return self._plans[key]

        terminal = self.spec.terminal_state
        frontier = deque([(state_id, None, 0)])
        seen = {state_id}
        while frontier:
            node, first, distance = frontier.popleft()
            for action in self.spec.actions:
                nxt = self.env.intended_transition(node, action)
                start_action = first if first is not None else action
                if goal_achieved(goal, Transition(node, action, nxt)):
                    plan = _Plan(start_action, distance + 1, nxt)
                    self._plans[key] = plan
                    return plan
                if nxt != terminal and nxt not in seen:
                    seen.add(nxt)
                    frontier.append((nxt, start_action, distance + 1))
        raise ControllerError(f"{self.spec.name}: goal {goal.id} cannot be reached from {state_id}")

    def act(self, state: EnvState, goal: Goal) -> Move:
        return self._plan(state.id, goal).first_action

    def path_length(self, state_id: str, goal: Goal) -> int:
        return self._plan(state_id, goal).distance

    def outcome_table(self, goals: Optional[Tuple[Goal, ...]] = None) -> Dict[Tuple[str, str], ActOutcome]:
        """What pursuing each goal from each non-terminal state leads to, under intended transitions."""
        goals = goals or make_goals(self.spec)
        table: Dict[Tuple[str, str], ActOutcome] = {}
        for state in self.spec.nonterminal_states:
            for goal in goals:
                try:
                    plan = self._plan(state, goal)
                except ControllerError:
                    table[(state, goal.id)] = ActOutcome.loops()
                    continue
                if plan.final_state == self.spec.terminal_state:
                    table[(state, goal.id)] = ActOutcome.terminates()
                else:
                    table[(state, goal.id)] = ActOutcome.reaches(plan.final_state)
        return table


@dataclass(frozen=True)
class ActorCriticStep:
    outcome: StepOutcome
    intrinsic_reward: float
    td_error: float


class ActorCriticController:
    """
    Learned controller with a softmax policy network and a value network.

    Both networks read the concatenated one-hot state and goal. After every
    primitive action the TD error ``i + gamma v(s', g) - v(s, g)`` scales an
    ascent step on ``ln pi(a | s, g)`` and a descent step on the squared
    value error.
    """

    learns = True

    def __init__(self, env: EpisodicEnvironment, goals: Tuple[Goal, ...],
                 hidden_sizes: Tuple[int, ...] = (16, 32), learning_rate: float = 0.001,
                 gamma: float = 0.9, intrinsic_reward: float = 1.0,
                 rng: Optional[np.random.Generator] = None):
        self.spec = env.spec
        self.gamma = gamma
        self.intrinsic_reward = intrinsic_reward
        self.rng = rng if rng is not None else np.random.default_rng()
        input_size = env.observation_size + len(goals)
        sizes = (input_size,) + tuple(hidden_sizes)
        self.actor = FeedforwardNetwork(sizes + (len(self.spec.actions),), rng=self.rng, name="actor")
        self.critic = FeedforwardNetwork(sizes + (1,), rng=self.rng, name="critic")
        self.actor_optimizer = OptimizerState(OptimizerKind.ADAM, learning_rate)
        self.critic_optimizer = OptimizerState(OptimizerKind.ADAM, learning_rate)

    @property
    def params(self) -> Params:
        merged = self.actor.params
        merged.update(self.critic.params)
        return merged

    @staticmethod
    def features(state: EnvState, goal: Goal) -> np.ndarray:
        return np.concatenate([state.observation, goal.encoding])

    def policy(self, state: EnvState, goal: Goal) -> np.ndarray:
        return softmax(self.actor(self.features(state, goal)))

    def value(self, state: EnvState, goal: Goal) -> float:
        return float(self.critic(self.features(state, goal))[0])

    def act(self, state: EnvState, goal: Goal) -> Move:
        probs = self.policy(state, goal)
        return self.spec.actions[int(self.rng.choice(len(probs), p=probs))]

    def log_policy_gradient(self, state: EnvState, goal: Goal, action: Move) -> Params:
        """Gradient of ``ln pi(action | state, goal)`` with respect to the actor."""
        logits, caches = self.actor.forward(self.features(state, goal))
        grad_logits = -softmax(logits)
        grad_logits[self.spec.actions.index(action)] += 1.0
        return self.actor.backward(caches, grad_logits)[1]

    def value_gradient(self, state: EnvState, goal: Goal) -> Params:
        """Gradient of ``v(state, goal)`` with respect to the critic."""
        _, caches = self.critic.forward(self.features(state, goal))
        return self.critic.backward(caches, np.ones(1))[1]

    def actor_critic_step(self, env: EpisodicEnvironment, goal: Goal) -> ActorCriticStep:
        """Act once in ``env`` towards ``goal`` and update both networks."""
        state = env.state
        action = self.act(state, goal)
        outcome = env.step(action)
        achieved = goal_achieved(goal, Transition.from_outcome(outcome))
        intrinsic = self.intrinsic_reward if achieved else 0.0

        next_value = 0.0
        if outcome.next_state.id != self.spec.terminal_state:
            next_value = self.value(outcome.next_state, goal)
        td_error = intrinsic + self.gamma * next_value - self.value(state, goal)

        actor_grads = self.log_policy_gradient(state, goal, action)
        critic_grads = self.value_gradient(state, goal)
        optimizer_apply(self.actor_optimizer, self.actor.params,
                        {name: td_error * g for name, g in actor_grads.items()}, Direction.ASCEND)
        optimizer_apply(self.critic_optimizer, self.critic.params,
                        {name: -td_error * g for name, g in critic_grads.items()}, Direction.DESCEND)
        return ActorCriticStep(outcome, intrinsic, td_error)


def run_controller(controller, env: EpisodicEnvironment, goal: Goal, learn: bool = False) -> ControllerOutcome:
    """
    Act until the goal is achieved, the terminal is reached or the episode
    is truncated.

    Args:
        controller: OptimalController or ActorCriticController
        env: Environment positioned at the state to start from
        goal: Goal to pursue
        learn: Update a learning controller after every action

    Returns:
        ControllerOutcome with the external reward accumulated on the way
    """
    reward = 0.0
    actions = 0
    while True:
        if learn and controller.learns:
            outcome = controller.actor_critic_step(env, goal).outcome
        else:
            outcome = env.step(controller.act(env.state, goal))
        reward += outcome.reward
        actions += 1

        if outcome.next_state.id == env.spec.terminal_state:
            kind = OutcomeKind.TERMINATED
        elif outcome.truncated:
            kind = OutcomeKind.TRUNCATED
        elif goal_achieved(goal, Transition.from_outcome(outcome)):
            kind = OutcomeKind.GOAL_REACHED
        else:
            continue
        return ControllerOutcome(kind, outcome.next_state, reward, actions)
