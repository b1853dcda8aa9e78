"""
Grammar Core Extraction
Builds grammars from a deterministic meta policy and a controller outcome table.

The meta policy is keyed by histories ``(current_state, previous_1, ...,
previous_j)`` with j <= k, most recent first. Controller outcomes say what
happens when the low-level controller pursues a goal from a state.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

from grammar_core.errors import ExtractionError
from grammar_core.symbols import (
    DEFAULT_TERMINAL,
    ConstrainedGrammar,
    Grammar,
    KRecurrentGrammar,
    ProductionRule,
    RuleKind,
    SymbolTable,
    natural_key,
)
from grammar_core.validation import validate

logger = logging.getLogger(__name__)

History = Tuple[str, ...]
MetaPolicy = Union[Mapping[History, str], Callable[[History], Optional[str]]]


class ActOutcomeKind(Enum):
    REACHES = "reaches"
    TERMINATES = "terminates"
    LOOPS = "loops"


@dataclass(frozen=True)
class ActOutcome:
    """Result of running the controller from one state towards one goal."""

    kind: ActOutcomeKind
    next_state: Optional[str] = None

    @classmethod
    def reaches(cls, state: str) -> "ActOutcome":
        return cls(ActOutcomeKind.REACHES, state)

    @classmethod
    def terminates(cls) -> "ActOutcome":
        return cls(ActOutcomeKind.TERMINATES)

    @classmethod
    def loops(cls) -> "ActOutcome":
        return cls(ActOutcomeKind.LOOPS)

    def to_rule(self, state: str, goal: str) -> ProductionRule:
        if self.kind is ActOutcomeKind.REACHES:
            return ProductionRule.act_return(state, goal, self.next_state or "")
        if self.kind is ActOutcomeKind.TERMINATES:
            return ProductionRule.act_terminate(state, goal)
        return ProductionRule.act_loop(state, goal)


ControllerOutcomes = Mapping[Tuple[str, str], ActOutcome]


def _lookup(policy: MetaPolicy, history: History) -> Optional[str]:
    if callable(policy):
        return policy(history)
    return policy.get(history)


def _infer_symbols(policy: MetaPolicy, outcomes: ControllerOutcomes,
                   start_states: Sequence[str], terminal_state: str) -> SymbolTable:
    states: Set[str] = set(start_states)
    goals: Set[str] = set()
    for (state, goal), outcome in outcomes.items():
        states.add(state)
        goals.add(goal)
        if outcome.next_state:
            states.add(outcome.next_state)
    if not callable(policy):
        for history, goal in policy.items():
            states.update(history)
            goals.add(goal)
    states.discard(terminal_state)
    return SymbolTable(tuple(sorted(states, key=natural_key)),
                       tuple(sorted(goals, key=natural_key)),
                       terminal_state)


def _rollout_meta_rules(policy: MetaPolicy, outcomes: ControllerOutcomes,
                        start: str, k: int) -> List[ProductionRule]:
    rules: List[ProductionRule] = []
    visited: List[str] = []  # most recent first
    state = start
    seen: Set[History] = set()

    while True:
        history = (state,) + tuple(visited[:k])
        if history in seen:
            logger.debug("meta-level cycle at history %s", history)
            return rules
        seen.add(history)

        goal = _lookup(policy, history)
        if goal is None:
            raise ExtractionError(f"meta policy has no entry for history {' '.join(history)}", history)
        rules.append(ProductionRule.meta(state, goal, history[1:]))

        outcome = outcomes.get((state, goal))
        if outcome is None:
            raise ExtractionError(f"no controller outcome for ({state}, {goal})", history)
        if outcome.kind is not ActOutcomeKind.REACHES:
            return rules
        visited.insert(0, state)
        state = outcome.next_state or ""


def extract_grammar(meta_policy: MetaPolicy,
                    controller_outcomes: ControllerOutcomes,
                    start_states: Iterable[str],
                    k: int,
                    terminal_state: str = DEFAULT_TERMINAL,
                    symbols: Optional[SymbolTable] = None) -> Grammar:
    """
    Build the grammar that describes an agent's behavior.

    Meta rules are collected by rolling the policy out from every start
    state with histories truncated to k previous states. With k=0 every
    single-state entry of a mapping policy also becomes a meta rule, and
    the result is a constrained grammar. Act rules come from the full
    outcome table.

    Args:
        meta_policy: Mapping or callable from history to goal
        controller_outcomes: (state, goal) -> ActOutcome
        start_states: States that receive start rules
        k: Memory length in previous states
        terminal_state: Terminal symbol of the environment
        symbols: Symbol table to use; inferred from the inputs when None

    Returns:
        ConstrainedGrammar when k == 0, otherwise KRecurrentGrammar

    Raises:
        ExtractionError: on missing policy entries or an incomplete outcome table
    """
    if k < 0:
        raise ExtractionError(f"k must be non-negative, got {k}")
    start_states = list(start_states)
    if not start_states:
        raise ExtractionError("at least one start state is required")

    table = symbols or _infer_symbols(meta_policy, controller_outcomes, start_states, terminal_state)

    rules: Set[ProductionRule] = {ProductionRule.start(state) for state in start_states}
    for start in start_states:
        rules.update(_rollout_meta_rules(meta_policy, controller_outcomes, start, k))

    if k == 0:
        if callable(meta_policy):
            for state in table.states:
                goal = meta_policy((state,))
                if goal is not None:
                    rules.add(ProductionRule.meta(state, goal))
        else:
            for history, goal in meta_policy.items():
                if len(history) == 1:
                    rules.add(ProductionRule.meta(history[0], goal))

    for (state, goal), outcome in controller_outcomes.items():
        if table.is_state(state) and table.is_goal(goal):
            rules.add(outcome.to_rule(state, goal))

    grammar: Grammar
    if k == 0:
        grammar = ConstrainedGrammar(table, frozenset(rules))
    else:
        grammar = KRecurrentGrammar(table, k, frozenset(rules))

    report = validate(grammar)
    if not report.is_valid:
        details = "; ".join(str(v) for v in report.violations[:5])
        raise ExtractionError(f"extracted grammar is invalid: {details}")
    logger.info("extracted %s grammar with %d rules", grammar.kind, len(grammar.rules))
    return grammar


def complete_with_defaults(grammar: Grammar,
                           default_goal: str,
                           controller_outcomes: ControllerOutcomes) -> Grammar:
    """
    Fill in the rules a hand-written grammar leaves out.

    States without any meta rule get an empty-context rule choosing
    ``default_goal``; missing (state, goal) act rules are taken from the
    outcome table. Existing rules are never replaced.
    """
    table = grammar.symbols
    if not table.is_goal(default_goal):
        raise ExtractionError(f"default goal {default_goal!r} is not in the symbol table")

    rules = set(grammar.rules)
    for state in table.states:
        if not grammar.meta_rules(state):
            rules.add(ProductionRule.meta(state, default_goal))
        for goal in table.goals:
            if grammar.act_rules(state, goal):
                continue
            outcome = controller_outcomes.get((state, goal))
            if outcome is None:
                raise ExtractionError(f"no controller outcome for ({state}, {goal})")
            rules.add(outcome.to_rule(state, goal))

    if isinstance(grammar, KRecurrentGrammar):
        return KRecurrentGrammar(table, grammar.k, frozenset(rules))
    return ConstrainedGrammar(table, frozenset(rules))


def outcomes_from_grammar(grammar: Grammar) -> Dict[Tuple[str, str], ActOutcome]:
    """Read the act rules of a grammar back into an outcome table."""
    table: Dict[Tuple[str, str], ActOutcome] = {}
    for rule in grammar.sorted_rules():
        if rule.kind is RuleKind.ACT_RETURN:
            table[(rule.state, rule.goal or "")] = ActOutcome.reaches(rule.next_state or "")
        elif rule.kind is RuleKind.ACT_TERMINATE:
            table[(rule.state, rule.goal or "")] = ActOutcome.terminates()
        elif rule.kind is RuleKind.ACT_LOOP:
            table[(rule.state, rule.goal or "")] = ActOutcome.loops()
    return table
