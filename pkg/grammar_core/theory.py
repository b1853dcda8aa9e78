"""
Grammar Core Theory
Operations relating feedforward and recurrent meta controllers.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

from grammar_core.derivation import DerivationResult
from grammar_core.errors import GrammarValidationError, TrajectoryFormatError
from grammar_core.symbols import ConstrainedGrammar, KRecurrentGrammar, TrajectoryString
from grammar_core.validation import validate


@dataclass(frozen=True)
class HfWitness:
    """A state that the trajectory pairs with two different goals."""

    state: str
    goal_a: str
    goal_b: str

    def as_tuple(self) -> Tuple[str, str, str]:
        return (self.state, self.goal_a, self.goal_b)

    def __str__(self) -> str:
        return f"({self.state}, {self.goal_a}, {self.goal_b})"


def split_completed_string(string: Union[str, TrajectoryString],
                           terminal_state: str) -> Tuple[TrajectoryString, List[str]]:
    """
    Split a completed k-recurrent string into its trajectory and history suffix.

    The suffix holds the states visited at meta level, most recent first,
    so it must equal the prefix's non-terminal states reversed.
    """
    if isinstance(string, str):
        string = TrajectoryString.parse(string)
    tokens = string.tokens
    if terminal_state not in tokens:
        raise TrajectoryFormatError(f"string never reaches terminal {terminal_state!r}")

    end = tokens.index(terminal_state)
    prefix = TrajectoryString(tokens[:end + 1])
    prefix.check_shape(terminal_state=terminal_state)
    if len(prefix) < 3:
        raise TrajectoryFormatError("a completed trajectory needs at least one state-goal pair")

    suffix = list(tokens[end + 1:])
    visited = list(prefix.states()[:-1])
    if suffix != visited[::-1]:
        raise TrajectoryFormatError(
            f"history suffix {' '.join(suffix)!r} does not mirror the visited states {' '.join(visited)!r}"
        )
    return prefix, suffix


def split_trajectory(result: DerivationResult) -> Tuple[TrajectoryString, List[str]]:
    """Split the string of a completed derivation into (trajectory, suffix)."""
    if not result.completed:
        raise TrajectoryFormatError(f"derivation ended {result.outcome.value}; nothing to split")
    return split_completed_string(result.string, result.terminal_state)


def hf_infeasible(trajectory: Union[str, TrajectoryString],
                  terminal_state: Optional[str] = None) -> Optional[HfWitness]:
    """
    Look for a state paired with two distinct goals.

    A feedforward meta controller picks the same goal every time it sees a
    state, so such a witness proves no constrained grammar generates the
    trajectory.

    Returns:
        The first conflict found scanning left to right, or None
    """
    if isinstance(trajectory, str):
        trajectory = TrajectoryString.parse(trajectory)
    trajectory.check_shape(terminal_state=terminal_state)

    first_goal: Dict[str, str] = {}
    for state, goal in trajectory.pairs():
        seen = first_goal.setdefault(state, goal)
        if seen != goal:
            return HfWitness(state, seen, goal)
    return None


def to_zero_recurrent(grammar: ConstrainedGrammar) -> KRecurrentGrammar:
    """Re-read a valid constrained grammar as a 0-recurrent one with the same rules."""
    report = validate(grammar)
    if not report.is_valid:
        raise GrammarValidationError("only a valid constrained grammar can be converted", report)
    return KRecurrentGrammar(grammar.symbols, 0, grammar.rules)
