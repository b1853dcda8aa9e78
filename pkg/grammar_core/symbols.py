"""
Grammar Core Symbols
Symbol tables, production rules, grammars and trajectory strings.

A constrained grammar encodes a feedforward meta controller: every state
maps to exactly one goal. A k-recurrent grammar encodes a recurrent one,
whose goal choice may look at up to k previously visited states.
"""

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

from grammar_core.errors import SymbolTableError, TrajectoryFormatError


START = "S"
META = "<META>"
ACT = "<ACT>"
NONTERMINALS = (START, META, ACT)

DEFAULT_TERMINAL = "τ"


def natural_key(symbol: str) -> Tuple[Any, ...]:
    """Sort key that orders s2 before s10."""
    return tuple(int(part) if part.isdigit() else part for part in re.split(r"(\d+)", symbol))


@dataclass(frozen=True)
class SymbolTable:
    """
    The alphabet of a grammar.

    States and goals are terminal symbols of the grammar; the terminal
    state is a terminal symbol that is never expanded again.
    """

    states: Tuple[str, ...]
    goals: Tuple[str, ...]
    terminal_state: str = DEFAULT_TERMINAL

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "goals", tuple(self.goals))

        for symbol in self.states + self.goals + (self.terminal_state,):
            if not symbol or any(ch.isspace() for ch in symbol):
                raise SymbolTableError(f"symbol {symbol!r} is empty or contains whitespace")
            if symbol in NONTERMINALS:
                raise SymbolTableError(f"symbol {symbol!r} is reserved for nonterminals")

        if len(set(self.states)) != len(self.states):
            raise SymbolTableError("duplicate state symbol")
        if len(set(self.goals)) != len(self.goals):
            raise SymbolTableError("duplicate goal symbol")
        if self.terminal_state in self.states:
            raise SymbolTableError(f"terminal {self.terminal_state!r} is also listed as a state")

        shared = (set(self.states) | {self.terminal_state}) & set(self.goals)
        if shared:
            raise SymbolTableError(f"symbols used as both state and goal: {sorted(shared)}")

    @property
    def nonterminals(self) -> Tuple[str, ...]:
        return NONTERMINALS

    def is_state(self, symbol: str) -> bool:
        return symbol in self.states

    def is_goal(self, symbol: str) -> bool:
        return symbol in self.goals

    def to_dict(self) -> Dict[str, Any]:
        return {
            "states": list(self.states),
            "goals": list(self.goals),
            "terminal_state": self.terminal_state,
        }


class RuleKind(Enum):
    """The five shapes a production rule can take."""

    START = "start"
    META = "meta"
    ACT_RETURN = "act_return"
    ACT_TERMINATE = "act_terminate"
    ACT_LOOP = "act_loop"


_KIND_ORDER = {kind: index for index, kind in enumerate(RuleKind)}


@dataclass(frozen=True)
class ProductionRule:
    """
    One production rule.

    Use the class constructors (``start``, ``meta``, ``act_return``,
    ``act_terminate``, ``act_loop``) rather than building instances by hand.
    ``context`` is only meaningful for meta rules and lists the previously
    visited states most recent first.
    """

    kind: RuleKind
    state: str
    goal: Optional[str] = None
    context: Tuple[str, ...] = ()
    next_state: Optional[str] = None

    @classmethod
    def start(cls, state: str) -> "ProductionRule":
        return cls(RuleKind.START, state)

    @classmethod
    def meta(cls, state: str, goal: str, context: Sequence[str] = ()) -> "ProductionRule":
        return cls(RuleKind.META, state, goal, tuple(context))

    @classmethod
    def act_return(cls, state: str, goal: str, next_state: str) -> "ProductionRule":
        return cls(RuleKind.ACT_RETURN, state, goal, next_state=next_state)

    @classmethod
    def act_terminate(cls, state: str, goal: str) -> "ProductionRule":
        return cls(RuleKind.ACT_TERMINATE, state, goal)

    @classmethod
    def act_loop(cls, state: str, goal: str) -> "ProductionRule":
        return cls(RuleKind.ACT_LOOP, state, goal)

    @property
    def is_act(self) -> bool:
        return self.kind in (RuleKind.ACT_RETURN, RuleKind.ACT_TERMINATE, RuleKind.ACT_LOOP)

    def lhs(self) -> Tuple[str, ...]:
        if self.kind is RuleKind.START:
            return (START,)
        if self.kind is RuleKind.META:
            return (self.state, META) + self.context
        return (self.state, self.goal, ACT)

    def rhs(self, terminal_state: str = DEFAULT_TERMINAL) -> Tuple[str, ...]:
        if self.kind is RuleKind.START:
            return (self.state, META)
        if self.kind is RuleKind.META:
            return (self.state, self.goal, ACT, self.state) + self.context
        if self.kind is RuleKind.ACT_RETURN:
            return (self.state, self.goal, self.next_state, META)
        if self.kind is RuleKind.ACT_TERMINATE:
            return (self.state, self.goal, terminal_state)
        return (self.state, self.goal, ACT)

    def sort_key(self, symbols: Optional[SymbolTable] = None) -> Tuple[Any, ...]:
        def position(symbol: Optional[str], ordering: Tuple[str, ...]) -> Tuple[Any, ...]:
            if symbol is None:
                return (-1,)
            if symbol in ordering:
                return (ordering.index(symbol),)
            return (len(ordering),) + natural_key(symbol)

        states = symbols.states if symbols else ()
        goals = symbols.goals if symbols else ()
        return (
            _KIND_ORDER[self.kind] if self.kind in (RuleKind.START, RuleKind.META) else 2,
            position(self.state, states),
            len(self.context),
            tuple(position(s, states) for s in self.context),
            position(self.goal, goals),
        )

    def render(self, terminal_state: str = DEFAULT_TERMINAL) -> str:
        return f"{' '.join(self.lhs())} -> {' '.join(self.rhs(terminal_state))}"

    def __str__(self) -> str:
        return self.render()


class _GrammarIndex:
    """Lookup helpers shared by both grammar classes."""

    symbols: SymbolTable
    rules: FrozenSet[ProductionRule]

    def _build_index(self):
        ordered = sorted(self.rules, key=lambda rule: rule.sort_key(self.symbols))
        meta_index: Dict[str, List[ProductionRule]] = {}
        act_index: Dict[Tuple[str, str], List[ProductionRule]] = {}
        for rule in ordered:
            if rule.kind is RuleKind.META:
                meta_index.setdefault(rule.state, []).append(rule)
            elif rule.is_act:
                act_index.setdefault((rule.state, rule.goal), []).append(rule)
        object.__setattr__(self, "_ordered", tuple(ordered))
        object.__setattr__(self, "_meta_index", meta_index)
        object.__setattr__(self, "_act_index", act_index)

    def sorted_rules(self) -> Tuple[ProductionRule, ...]:
        return self._ordered  # type: ignore[attr-defined]

    def start_states(self) -> Tuple[str, ...]:
        return tuple(rule.state for rule in self.sorted_rules() if rule.kind is RuleKind.START)

    def meta_rules(self, state: str) -> Tuple[ProductionRule, ...]:
        return tuple(self._meta_index.get(state, ()))  # type: ignore[attr-defined]

    def act_rules(self, state: str, goal: str) -> Tuple[ProductionRule, ...]:
        return tuple(self._act_index.get((state, goal), ()))  # type: ignore[attr-defined]

    def match_meta(self, state: str, history: Sequence[str]) -> Optional[ProductionRule]:
        """
        Find the meta rule for ``state`` given the states visited before it.

        ``history`` is most recent first. A rule applies when its context is
        a prefix of the history; among applicable rules the longest context
        wins.
        """
        history = tuple(history)
        best: Optional[ProductionRule] = None
        for rule in self.meta_rules(state):
            size = len(rule.context)
            if size <= len(history) and history[:size] == rule.context:
                if best is None or size > len(best.context):
                    best = rule
        return best

    def act_rule(self, state: str, goal: str) -> Optional[ProductionRule]:
        candidates = self.act_rules(state, goal)
        return candidates[0] if candidates else None


@dataclass(frozen=True)
class ConstrainedGrammar(_GrammarIndex):
    """Grammar of a feedforward meta controller: one goal per state."""

    symbols: SymbolTable
    rules: FrozenSet[ProductionRule] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "rules", frozenset(self.rules))
        self._build_index()

    @property
    def k(self) -> int:
        return 0

    @property
    def kind(self) -> str:
        return "constrained"


@dataclass(frozen=True)
class KRecurrentGrammar(_GrammarIndex):
    """Grammar of a recurrent meta controller remembering up to k states."""

    symbols: SymbolTable
    k: int
    rules: FrozenSet[ProductionRule] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.k < 0:
            raise ValueError(f"k must be non-negative, got {self.k}")
        object.__setattr__(self, "rules", frozenset(self.rules))
        self._build_index()

    @property
    def kind(self) -> str:
        return "k-recurrent"


Grammar = Union[ConstrainedGrammar, KRecurrentGrammar]


@dataclass(frozen=True)
class TrajectoryString:
    """
    A sequence ``s1 g1 s2 g2 ... sn`` of alternating states and goals.

    A completed trajectory ends in the terminal state; a prefix observed
    mid-episode simply ends in some state.
    """

    tokens: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))

    @classmethod
    def parse(cls, text: Union[str, Iterable[str]]) -> "TrajectoryString":
        tokens = text.split() if isinstance(text, str) else list(text)
        return cls(tuple(tokens))

    def check_shape(self, symbols: Optional[SymbolTable] = None,
                    terminal_state: Optional[str] = None) -> "TrajectoryString":
        """Raise TrajectoryFormatError unless the tokens alternate state, goal, state."""
        if not self.tokens:
            raise TrajectoryFormatError("empty trajectory")
        if len(self.tokens) % 2 == 0:
            raise TrajectoryFormatError(
                f"trajectory must have odd length (state, goal, ..., state), got {len(self.tokens)} tokens"
            )
        for token in self.tokens:
            if token in NONTERMINALS:
                raise TrajectoryFormatError(f"nonterminal {token!r} inside a trajectory")

        terminal = terminal_state or (symbols.terminal_state if symbols else None)
        if terminal is not None and terminal in self.tokens[:-1]:
            raise TrajectoryFormatError(f"terminal {terminal!r} may only appear as the last symbol")

        if symbols is not None:
            for index, token in enumerate(self.tokens):
                if index % 2 == 0:
                    allowed = symbols.is_state(token) or (index == len(self.tokens) - 1 and token == terminal)
                    if not allowed:
                        raise TrajectoryFormatError(f"position {index}: {token!r} is not a state")
                elif not symbols.is_goal(token):
                    raise TrajectoryFormatError(f"position {index}: {token!r} is not a goal")
        return self

    def states(self) -> Tuple[str, ...]:
        return self.tokens[0::2]

    def goals(self) -> Tuple[str, ...]:
        return self.tokens[1::2]

    def pairs(self) -> List[Tuple[str, str]]:
        """(state, goal) pairs in order of occurrence."""
        return list(zip(self.tokens[0::2], self.tokens[1::2]))

    def render(self) -> str:
        return " ".join(self.tokens)

    def __str__(self) -> str:
        return self.render()

    def __len__(self) -> int:
        return len(self.tokens)
