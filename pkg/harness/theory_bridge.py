"""
Harness Theory Bridge
Turns a trained meta controller into a grammar and checks what it generates.

The greedy policy is read as a history-to-goal table, a grammar is
extracted from it with the optimal controller's outcome table, and the
derived trajectory is replayed in the deterministic environment. The
report says whether the trajectory is beyond any feedforward meta
controller and what reward it earns.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

from grammar_core.derivation import derive
from grammar_core.extraction import extract_grammar
from grammar_core.symbols import TrajectoryString
from grammar_core.text_format import format_grammar
from grammar_core.theory import HfWitness, hf_infeasible, split_trajectory
from hrl.controllers import OptimalController, OutcomeKind, run_controller
from hrl.environments import EpisodicEnvironment
from hrl.errors import MemoryConflictError, PolicyLoopError
from hrl.meta_controllers import History, MetaController, deterministic_policy_map

logger = logging.getLogger(__name__)


@dataclass
class ReplayResult:
    reward: float
    consistent: bool
    truncated: bool
    actions: int


@dataclass
class TheoryReport:
    """
    What a trained meta controller's greedy behavior generates.

    ``status`` is the derivation outcome (completed, stuck, looping,
    budget_exceeded) or, when no grammar could be built, looping_policy or
    memory_conflict.
    """

    env: str
    system: str
    status: str
    k: Optional[int] = None
    trajectory: Optional[str] = None
    derived: Optional[str] = None
    grammar: Optional[str] = None
    replay: Optional[ReplayResult] = None
    witness: Optional[HfWitness] = None
    message: str = ""

    @property
    def hf_infeasible(self) -> bool:
        return self.witness is not None

    @property
    def replay_reward(self) -> Optional[float]:
        return self.replay.reward if self.replay is not None else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "env": self.env,
            "system": self.system,
            "status": self.status,
            "k": self.k,
            "trajectory": self.trajectory,
            "derived": self.derived,
            "grammar": self.grammar,
            "replay_reward": self.replay_reward,
            "replay_consistent": self.replay.consistent if self.replay is not None else None,
            "replay_truncated": self.replay.truncated if self.replay is not None else None,
            "hf_infeasible": self.hf_infeasible,
            "witness": list(self.witness.as_tuple()) if self.witness is not None else None,
            "message": self.message,
        }


def replay_trajectory(env: EpisodicEnvironment, controller: OptimalController,
                      trajectory: TrajectoryString, goals) -> ReplayResult:
    """
    Pursue the trajectory's goals in order and collect the external reward.

    The replay is consistent when every goal is issued from the state the
    trajectory names and the episode ends where the trajectory ends.
    """
    by_id = {goal.id: goal for goal in goals}
    env.reset()
    reward = 0.0
    actions = 0
    consistent = True
    truncated = False
    pairs = trajectory.pairs()
    for position, (state, goal_id) in enumerate(pairs):
        if env.state.id != state or goal_id not in by_id:
            consistent = False
            break
        outcome = run_controller(controller, env, by_id[goal_id])
        reward += outcome.accumulated_external_reward
        actions += outcome.actions_taken
        if outcome.done:
            truncated = outcome.kind is OutcomeKind.TRUNCATED
            consistent = position == len(pairs) - 1 and not truncated
            break
    else:
        consistent = False
    if consistent:
        consistent = env.state.id == trajectory.tokens[-1]
    return ReplayResult(reward, consistent, truncated, actions)


def policy_table(meta: MetaController, env: EpisodicEnvironment, controller: OptimalController,
                 k: Optional[int]) -> Tuple[int, Dict[History, str]]:
    """
    Greedy history-to-goal table, choosing the smallest workable k when none is given.

    Single-state entries for states the rollout never visits are filled
    from the controller's one-observation behavior, so k=0 always yields a
    complete constrained grammar.
    """
    if meta.memory_length == 0:
        candidates = [0]
    elif k is not None:
        candidates = [k]
    else:
        candidates = list(range(env.spec.step_limit + 1))

    conflict: Optional[MemoryConflictError] = None
    for candidate in candidates:
        try:
            mapping = deterministic_policy_map(meta, env, candidate, controller)
        except MemoryConflictError as exc:
            conflict = exc
            continue
        if candidate == 0:
            for state in env.spec.nonterminal_states:
                mapping.setdefault((state,), meta.greedy_goal([env.encode(state).observation]).id)
        return candidate, mapping
    raise conflict or MemoryConflictError("no memory length resolves the greedy policy")


def verify_against_theory(meta: MetaController, env: EpisodicEnvironment, k: Optional[int] = None,
                          system: Optional[str] = None) -> TheoryReport:
    """
    Extract, derive, replay and check a trained meta controller.

    Args:
        meta: Trained meta controller; it is queried greedily
        env: Training environment; its deterministic model is used
        k: Memory length for the extracted grammar; None picks the smallest
           length without conflicting histories
        system: Name recorded in the report

    Returns:
        TheoryReport; findings such as looping policies are reported, not raised
    """
    model = env.deterministic_model()
    spec = model.spec
    controller = OptimalController(model)
    report = TheoryReport(env=env.spec.name, system=system or meta.system, status="")

    try:
        report.k, mapping = policy_table(meta, model, controller, k)
    except PolicyLoopError as exc:
        report.status, report.message = "looping_policy", str(exc)
        logger.info("%s/%s: %s", report.env, report.system, exc)
        return report
    except MemoryConflictError as exc:
        report.status, report.message = "memory_conflict", str(exc)
        logger.info("%s/%s: %s", report.env, report.system, exc)
        return report

    grammar = extract_grammar(mapping, controller.outcome_table(meta.goals), [spec.start_state],
                              report.k, terminal_state=spec.terminal_state)
    report.grammar = format_grammar(grammar)

    result = derive(grammar, spec.start_state)
    report.status = result.outcome.value
    if not result.completed:
        report.message = result.describe()
        return report
    report.derived = result.render()

    trajectory, _ = split_trajectory(result)
    report.trajectory = trajectory.render()
    report.replay = replay_trajectory(model, controller, trajectory, meta.goals)
    report.witness = hf_infeasible(trajectory, spec.terminal_state)
    report.message = (f"reward {report.replay.reward!r} on replay; "
                      + (f"HF-infeasible, witness {report.witness}" if report.witness else "HF-feasible"))
    logger.info("%s/%s k=%d: %s -> %s", report.env, report.system, report.k, report.trajectory, report.message)
    return report
