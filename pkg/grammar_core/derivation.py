"""
Grammar Core Derivation
Leftmost derivation engine for constrained and k-recurrent grammars.

Every sentential form carries exactly one nonterminal, so the derivation
is a single path: expand that nonterminal until it disappears, no rule
applies, a loop rule fires or the step budget runs out.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from grammar_core.errors import DerivationError, TrajectoryFormatError
from grammar_core.symbols import ACT, META, NONTERMINALS, Grammar, ProductionRule, RuleKind, TrajectoryString

logger = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 10_000


class DerivationOutcome(Enum):
    COMPLETED = "completed"
    STUCK = "stuck"
    LOOPING = "looping"
    BUDGET_EXCEEDED = "budget_exceeded"


@dataclass(frozen=True)
class DerivationResult:
    """
    Outcome of a derivation.

    ``form`` is the final string for completed derivations and the last
    sentential form otherwise. ``steps`` counts rule applications,
    including the start rule.
    """

    outcome: DerivationOutcome
    form: Tuple[str, ...]
    steps: int
    terminal_state: str
    meta_applications: int = 0
    state: Optional[str] = None
    goal: Optional[str] = None
    missing_context: Optional[Tuple[str, ...]] = None

    @property
    def completed(self) -> bool:
        return self.outcome is DerivationOutcome.COMPLETED

    @property
    def string(self) -> TrajectoryString:
        if not self.completed:
            raise TrajectoryFormatError(f"derivation ended {self.outcome.value}, no terminal string")
        return TrajectoryString(self.form)

    def render(self) -> str:
        return " ".join(self.form)

    def describe(self) -> str:
        if self.outcome is DerivationOutcome.COMPLETED:
            return self.render()
        if self.outcome is DerivationOutcome.LOOPING:
            return f"looping: controller never reaches goal {self.goal} from {self.state}"
        if self.outcome is DerivationOutcome.STUCK:
            if self.goal is not None:
                return f"stuck: no act rule for ({self.state}, {self.goal})"
            context = " ".join(self.missing_context or ()) or "(empty)"
            return f"stuck: no meta rule for {self.state} with history {context}"
        return f"budget exceeded after {self.steps} steps"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "outcome": self.outcome.value,
            "form": self.render(),
            "steps": self.steps,
            "meta_applications": self.meta_applications,
            "state": self.state,
            "goal": self.goal,
            "missing_context": list(self.missing_context) if self.missing_context is not None else None,
        }


def _nonterminal_position(form: List[str]) -> Optional[int]:
    positions = [index for index, symbol in enumerate(form) if symbol in NONTERMINALS]
    if len(positions) > 1:
        raise DerivationError(f"sentential form holds {len(positions)} nonterminals: {' '.join(form)}")
    return positions[0] if positions else None


def derive(grammar: Grammar, start_state: str, max_steps: int = DEFAULT_MAX_STEPS) -> DerivationResult:
    """
    Derive the terminal string generated from ``start_state``.

    Args:
        grammar: A constrained or k-recurrent grammar
        start_state: State named by one of the grammar's start rules
        max_steps: Maximum number of rule applications

    Returns:
        DerivationResult with outcome completed, stuck, looping or
        budget_exceeded
    """
    if max_steps < 1:
        raise DerivationError(f"max_steps must be positive, got {max_steps}")
    if ProductionRule.start(start_state) not in grammar.rules:
        raise DerivationError(f"grammar has no start rule S -> {start_state} {META}")

    terminal = grammar.symbols.terminal_state
    form: List[str] = [start_state, META]
    steps = 1
    metas = 0

    def result(outcome: DerivationOutcome, **details: Any) -> DerivationResult:
        logger.debug("derivation from %s ended %s after %d steps", start_state, outcome.value, steps)
        return DerivationResult(outcome, tuple(form), steps, terminal, metas, **details)

    while True:
        position = _nonterminal_position(form)
        if position is None:
            return result(DerivationOutcome.COMPLETED)
        if steps >= max_steps:
            return result(DerivationOutcome.BUDGET_EXCEEDED)

        if form[position] == META:
            state = form[position - 1]
            history = tuple(form[position + 1:])
            rule = grammar.match_meta(state, history)
            if rule is None:
                return result(DerivationOutcome.STUCK, state=state, missing_context=history)
            form[position:position + 1] = [rule.goal, ACT, state]
            metas += 1
        else:
            state, goal = form[position - 2], form[position - 1]
            rule = grammar.act_rule(state, goal)
            if rule is None:
                return result(DerivationOutcome.STUCK, state=state, goal=goal)
            if rule.kind is RuleKind.ACT_LOOP:
                return result(DerivationOutcome.LOOPING, state=state, goal=goal)
            if rule.kind is RuleKind.ACT_RETURN:
                form[position:position + 1] = [rule.next_state, META]
            else:
                form[position:position + 1] = [terminal]
        steps += 1
